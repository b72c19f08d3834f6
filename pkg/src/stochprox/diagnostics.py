"""Monte Carlo replication and convergence diagnostics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ComponentDistribution, StepSchedule, ValidationError, as_vector
from .solvers import (
    SolverConfig, _all_parts, _schedule_gate, initial_points, record_steps, run_paths,
)

__all__ = [
    "EnsembleStats", "replicate", "FejerReport", "fejer_monitor", "objective_gap",
    "finite_diff_grad_check", "median_trend", "QUANTILES",
]

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class EnsembleStats:
    """Replications of one solver configuration, stored at recorded checkpoints.

    Per-replication arrays have shape ``(R, C)`` (or ``(R, C, N)`` for
    iterates). Replications listed in ``aborted`` are frozen at their last
    finite iterate and excluded from every summary.
    """

    algorithm: str
    steps: np.ndarray
    gammas: np.ndarray
    seed: int
    stream_ids: list
    iterates: np.ndarray
    recorded_indices: np.ndarray
    reference: Optional[np.ndarray]
    dist: Optional[np.ndarray]
    gap: Optional[np.ndarray]
    gradient_sums: Optional[np.ndarray]
    aborted: list = field(default_factory=list)
    schedule_class: str = ""
    wall_clock: float = 0.0

    @property
    def replications(self):
        return self.iterates.shape[0]

    @property
    def partial(self):
        return bool(self.aborted)

    @property
    def completed(self):
        bad = {sid for sid, _ in self.aborted}
        return np.array([sid not in bad for sid in self.stream_ids], dtype=bool)

    @property
    def finals(self):
        return self.iterates[:, -1]

    @property
    def running_min_gap(self):
        if self.gap is None:
            return None
        return np.minimum.accumulate(self.gap, axis=1)

    def summary(self, metric="dist"):
        """Mean and quantiles over completed replications at each checkpoint."""
        data = {"dist": self.dist, "gap": self.gap,
                "running_min_gap": self.running_min_gap}[metric]
        if data is None:
            raise ValidationError(f"ensemble has no {metric} data (no reference supplied)")
        data = data[self.completed]
        if len(data) == 0:
            raise ValidationError("every replication aborted")
        with np.errstate(invalid="ignore"):
            # shifted by the first row so identical replications give their value exactly
            out = {"mean": data[0] + (data - data[0]).mean(axis=0)}
            qs = np.quantile(data, QUANTILES, axis=0)
        for q, row in zip(QUANTILES, qs):
            out[f"q{int(round(q * 100)):02d}"] = row
        out["median"] = out["q50"]
        return out


def replicate(dist: ComponentDistribution, cfg: SolverConfig, replications,
              base_seed=None, algorithm="spg", reference=None, jobs=1,
              track_gradient_sums=False) -> EnsembleStats:
    """Run ``replications`` independent copies with stream ids ``0..R-1``.

    ``cfg`` is a template: its seed (or ``base_seed``) keys every stream, its
    schedule, budget, starting point and recording grid are shared. Runs that
    hit a non-finite iterate are reported in ``aborted`` with their stream id
    and step; the rest of the ensemble proceeds.
    """
    if replications < 1:
        raise ValidationError("replications must be at least 1")
    if algorithm not in ("spg", "spp", "sgd"):
        raise ValidationError(f"unknown algorithm {algorithm!r}")
    if algorithm == "spp" and not all(g.is_zero for g in _all_parts(dist, "g")):
        raise ValidationError("spp requires every smooth part to be the zero function")
    if algorithm == "sgd" and not all(f.is_zero for f in _all_parts(dist, "f")):
        raise ValidationError("sgd requires every proxable part to be the zero function")
    cls = _schedule_gate(cfg.schedule, cfg.allow_invalid_schedule)
    seed = int(cfg.rng.seed if base_seed is None else base_seed)
    stream_ids = list(range(replications))
    X0 = initial_points(cfg.x0, seed, stream_ids, cfg.x0_noise)
    steps = record_steps(cfg.budget, cfg.record_every)
    ref = None if reference is None else as_vector(reference, X0.shape[1], name="reference")
    track = ref if track_gradient_sums else None

    t0 = time.perf_counter()
    groups = [g for g in np.array_split(np.arange(replications), max(1, int(jobs))) if len(g)]
    if len(groups) == 1:
        batches = [run_paths(dist, algorithm, cfg.schedule, X0, seed, stream_ids, cfg.budget,
                             steps=steps, reference=track)]
    else:
        from joblib import Parallel, delayed
        batches = Parallel(n_jobs=len(groups))(
            delayed(run_paths)(dist, algorithm, cfg.schedule, X0[g], seed,
                               [stream_ids[i] for i in g], cfg.budget, steps=steps,
                               reference=track)
            for g in groups)
    iterates = np.concatenate([b.iterates for b in batches])
    rec_idx = np.concatenate([b.recorded_indices for b in batches])
    aborted_at = np.concatenate([b.aborted_at for b in batches])
    gsums = None if track is None else np.concatenate([b.gradient_sums for b in batches])

    R, C, N = iterates.shape
    flat = iterates.reshape(-1, N)
    dist_mat = gap = None
    if ref is not None:
        dist_mat = np.linalg.norm(iterates - ref, axis=-1)
        with np.errstate(invalid="ignore"):
            gap = (dist.objective(flat) - dist.objective(ref)).reshape(R, C)
    gam = np.full(C, np.nan)
    inner = steps < cfg.budget
    gam[inner] = [cfg.schedule.gammas(int(s), int(s) + 1)[0] for s in steps[inner]]
    aborted = [(stream_ids[r], int(aborted_at[r])) for r in range(R) if aborted_at[r] >= 0]
    return EnsembleStats(
        algorithm=algorithm, steps=steps, gammas=gam, seed=seed, stream_ids=stream_ids,
        iterates=iterates, recorded_indices=rec_idx, reference=ref, dist=dist_mat, gap=gap,
        gradient_sums=gsums, aborted=aborted, schedule_class=cls,
        wall_clock=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Quasi-Fejer monitor

@dataclass
class FejerReport:
    """Outcome of testing the mean-square recursion between checkpoints.

    For checkpoints ``m < n`` the one-step recursion composes to
    ``E|x_n - z|^2 <= A E|x_m - z|^2 + B``; each row holds the estimated
    excess ``E|x_n - z|^2 - A E|x_m - z|^2 - B`` and its standard error.
    """

    rows: list
    n_sigma: float
    noise_partial_sums: np.ndarray
    gradient_partial_sums: Optional[np.ndarray] = None

    @property
    def violations(self):
        return [r for r in self.rows if r["violated"]]

    @property
    def ok(self):
        return not self.violations


def _composed_bound(schedule, m, n, beta, second_moment):
    gam = schedule.gammas(m, n)
    fac = 1.0 + 2.0 * beta * gam ** 2
    tail = np.cumprod(fac[::-1])[::-1]          # prod_{l >= j} fac_l
    after = np.append(tail[1:], 1.0)            # prod_{l > j} fac_l
    return float(tail[0]) if len(tail) else 1.0, \
        float(np.sum(2.0 * gam ** 2 * second_moment * after))


def _log_checkpoints(steps):
    pow2 = (steps > 0) & ((steps & (steps - 1)) == 0)
    return pow2 | (steps == 0) | (steps == steps[-1])


def fejer_monitor(ensemble: EnsembleStats, zbar, schedule: StepSchedule, beta,
                  second_moment, n_sigma=3.0, checkpoints="log"):
    """Check ``E|x_{n+1}-z|^2 <= (1 + 2 gamma_n^2 beta) E|x_n-z|^2 + 2 gamma_n^2 sigma^2``.

    The expectations are Monte Carlo estimates over the completed replications;
    a checkpoint pair is flagged only when the estimated excess is above
    ``n_sigma`` standard errors (computed from per-replication differences, so
    correlation between the two checkpoints is accounted for).

    Parameters
    ----------
    checkpoints : {"log", "all"}
        ``"log"`` tests consecutive powers of two (plus the first and last
        recorded steps); ``"all"`` tests every recorded pair. Pairs one step
        apart are nearly null tests, so testing thousands of them at 3 sigma
        produces false alarms at the nominal rate.
    """
    if checkpoints not in ("log", "all"):
        raise ValidationError(f"checkpoints must be 'log' or 'all', got {checkpoints!r}")
    keep = _log_checkpoints(ensemble.steps) if checkpoints == "log" \
        else np.ones(len(ensemble.steps), dtype=bool)
    steps = ensemble.steps[keep]
    if len(steps) < 2:
        raise ValidationError("the Fejer monitor needs at least two checkpoints")
    z = as_vector(zbar, ensemble.iterates.shape[-1], name="zbar")
    X = ensemble.iterates[ensemble.completed][:, keep]
    D = np.sum((X - z) ** 2, axis=-1)
    R = D.shape[0]
    rows = []
    for c in range(len(steps) - 1):
        m, n = int(steps[c]), int(steps[c + 1])
        A, B = _composed_bound(schedule, m, n, beta, second_moment)
        d = D[:, c + 1] - A * D[:, c]
        excess = float(d.mean()) - B
        se = float(d.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        slack = 1e-12 * max(1.0, A * float(D[:, c].mean()))
        rows.append({"m": m, "n": n, "lhs": float(D[:, c + 1].mean()),
                     "rhs": A * float(D[:, c].mean()) + B, "excess": excess, "se": se,
                     "violated": excess > n_sigma * se + slack})
    gam_all = schedule.gammas(0, int(steps[-1]))
    noise = np.concatenate([[0.0], np.cumsum(2.0 * gam_all ** 2 * second_moment)])[steps]
    gsums = None
    if ensemble.gradient_sums is not None:
        gsums = ensemble.gradient_sums[ensemble.completed][:, keep].mean(axis=0)
    return FejerReport(rows=rows, n_sigma=n_sigma, noise_partial_sums=noise,
                       gradient_partial_sums=gsums)


# ---------------------------------------------------------------------------
# Pointwise diagnostics

def objective_gap(dist: ComponentDistribution, x, zbar):
    """``phi(x) - phi(zbar)`` for the exact mixture; ``+inf`` off the domain."""
    with np.errstate(invalid="ignore"):
        fx = dist.objective(np.asarray(x, dtype=float))
        fz = dist.objective(np.asarray(zbar, dtype=float))
    return np.where(np.isinf(fx) & (fx > 0), np.inf, fx - fz)[()]


def finite_diff_grad_check(g, points, h=1e-5):
    """Worst relative error between ``g.grad`` and central differences.

    The error at a point is ``max_i |fd_i - grad_i| / max(|grad|_inf, 1e-8)``.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for x in P:
        grad = np.asarray(g.grad(x), dtype=float)
        eye = np.eye(x.size) * h
        fd = (g.value(x + eye) - g.value(x - eye)) / (2 * h)
        err = np.max(np.abs(fd - grad)) / max(np.max(np.abs(grad)), 1e-8)
        worst = max(worst, float(err))
    return worst


def median_trend(ensemble: EnsembleStats, start_fraction=0.01, max_inversions=1):
    """Whether the median distance is non-increasing over power-of-two
    checkpoints past ``start_fraction`` of the budget, up to ``max_inversions``
    increases. Returns ``(ok, inversions)``."""
    med = ensemble.summary("dist")["median"]
    steps = ensemble.steps
    budget = steps[-1]
    pow2 = (steps > 0) & ((steps & (steps - 1)) == 0)
    sel = (pow2 | (steps == budget)) & (steps >= start_fraction * budget)
    seq = med[sel]
    inversions = int(np.sum(np.diff(seq) > 0))
    return inversions <= max_inversions, inversions
