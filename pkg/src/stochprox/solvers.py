"""Stochastic proximal gradient, its proximal-point and gradient special cases,
the deterministic forward-backward baseline, and assumption checks.

All stochastic solvers share one engine that advances a stack of independent
replications in lockstep; a single run is the one-row case, so the arithmetic
of a run does not depend on how many replications travel with it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .core import (
    ROBBINS_MONRO, UNKNOWN, ComponentDistribution, NonFiniteError, ProductDistribution,
    ProxOracle, RngStream, ScheduleError, SmoothOracle, StepSchedule,
    ValidationError, _indices_from_uniforms, _raw, as_vector, validate_schedule,
)

__all__ = [
    "SolverConfig", "RunRecord", "record_steps", "spg_run", "spp_run", "sgd_run",
    "fb_run", "run_paths", "PathBatch", "StepBoundError", "DivergenceError",
    "Assumption1Report", "PsiReport", "check_assumption1", "check_psi_bound",
    "initial_points",
]

_CHUNK = 4096
# Word counter reserved for initial-point perturbations, far beyond any index draw.
_X0_COUNTER = 1 << 63


class StepBoundError(ScheduleError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the stochastic solvers.

    ``x0_noise`` adds a per-replication Gaussian perturbation of that standard
    deviation to ``x0``, drawn from a reserved part of the replication's stream.
    ``early_stop_tol`` stops a run once ``|x_{n+1} - x_n| / gamma_n`` stays below
    it for ``early_stop_patience`` consecutive iterations.
    """

    schedule: StepSchedule
    budget: int
    x0: object
    rng: RngStream = RngStream(0)
    record_every: int = 1
    allow_invalid_schedule: bool = False
    x0_noise: float = 0.0
    early_stop_tol: Optional[float] = None
    early_stop_patience: int = 100

    def __post_init__(self):
        if not isinstance(self.budget, (int, np.integer)) or self.budget < 1:
            raise ValidationError(f"budget must be a positive integer, got {self.budget!r}")
        if not isinstance(self.record_every, (int, np.integer)) or self.record_every < 1:
            raise ValidationError(
                f"record_every must be a positive integer, got {self.record_every!r}")
        if self.x0_noise < 0:
            raise ValidationError("x0_noise must be nonnegative")


@dataclass
class RunRecord:
    """Trajectory of one run.

    ``steps[c]`` is the iteration index of ``iterates[c]``; ``sampled_indices``
    holds every drawn component so the run can be replayed exactly.
    """

    algorithm: str
    steps: np.ndarray
    iterates: np.ndarray
    sampled_indices: Optional[np.ndarray]
    objective_trace: np.ndarray
    dist_trace: Optional[np.ndarray]
    seed: Optional[int]
    stream_id: Optional[int]
    schedule: StepSchedule
    schedule_class: str
    schedule_overridden: bool
    wall_clock: float
    iterations: int
    stopped_early: Optional[int] = None
    converged: Optional[bool] = None

    @property
    def final(self):
        return self.iterates[-1]


def record_steps(budget, record_every=1):
    """Recorded iteration indices: multiples of ``record_every``, powers of two,
    and both endpoints."""
    steps = set(range(0, budget + 1, record_every))
    p = 1
    while p <= budget:
        steps.add(p)
        p *= 2
    steps.add(budget)
    return np.array(sorted(steps), dtype=np.int64)


def initial_points(x0, seed, stream_ids, noise=0.0):
    """Starting points for a set of replications, one row per stream."""
    x0 = as_vector(x0, name="x0")
    X = np.tile(x0, (len(stream_ids), 1))
    if noise > 0:
        for r, sid in enumerate(stream_ids):
            raw = _raw(seed, sid, _X0_COUNTER, x0.size)
            u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
            X[r] += noise * ndtri(u)
    return X


# ---------------------------------------------------------------------------
# Engine

@dataclass
class PathBatch:
    """Output of :func:`run_paths` for ``R`` replications and ``C`` recorded steps."""

    steps: np.ndarray                 # (C,)
    iterates: np.ndarray              # (R, C, N)
    recorded_indices: np.ndarray      # (R, C), -1 where no draw follows
    all_indices: Optional[np.ndarray]  # (R, budget) when kept
    aborted_at: np.ndarray            # (R,), -1 when the run finished
    gradient_sums: Optional[np.ndarray]  # (R, C) partial sums, see run_paths
    iterations: int
    stopped_early: Optional[int]
    wall_clock: float


def _update(mode, pair, gamma, x):
    if mode == "spg":
        return pair.f.prox(gamma, x - gamma * pair.g.grad(x))
    if mode == "spp":
        return pair.f.prox(gamma, x)
    return x - gamma * pair.g.grad(x)


def run_paths(dist: ComponentDistribution, mode, schedule: StepSchedule, X0, seed,
              stream_ids, budget, steps=None, keep_all_indices=False, raise_on_abort=False,
              reference=None, early_stop_tol=None, early_stop_patience=100):
    """Advance replications ``X0[r]`` driven by streams ``(seed, stream_ids[r])``.

    Step ``n`` draws ``k_n`` from counter ``n`` of the stream, before and
    independently of the iterate, then applies the update of ``mode``
    (``"spg"``, ``"spp"`` or ``"sgd"``). A row whose update turns non-finite is
    frozen and reported in ``aborted_at`` (or raises when ``raise_on_abort``).

    With ``reference`` given, ``gradient_sums`` accumulates
    ``sum_n gamma_n |grad g(x_n) - grad g(reference)|^2`` for the exact mixture.
    """
    t0 = time.perf_counter()
    X = np.array(X0, dtype=float, copy=True)
    R, N = X.shape
    stream_ids = [int(s) for s in stream_ids]
    if steps is None:
        steps = record_steps(budget)
    steps = np.asarray(steps, dtype=np.int64)
    C = len(steps)
    out = np.empty((R, C, N))
    rec_idx = np.full((R, C), -1, dtype=np.int64)
    all_idx = np.empty((R, budget), dtype=np.int64) if keep_all_indices else None
    aborted = np.full(R, -1, dtype=np.int64)
    alive = np.ones(R, dtype=bool)
    K = dist.n_components
    single_pair = dist.pair(0) if K == 1 else None

    track = reference is not None
    if track:
        ref = as_vector(reference, N, name="reference")
        g_ref = dist.g_grad(ref)
        gsum = np.zeros(R)
        gsums = np.zeros((R, C))

    pos = 0
    calm = 0
    stopped = None
    n = 0
    for c0 in range(0, budget, _CHUNK):
        c1 = min(budget, c0 + _CHUNK)
        ks = np.empty((R, c1 - c0), dtype=np.int64)
        for r, sid in enumerate(stream_ids):
            u = (_raw(seed, sid, c0, c1 - c0) >> np.uint64(11)).astype(float) * 2.0 ** -53
            ks[r] = _indices_from_uniforms(dist, u)
        if keep_all_indices:
            all_idx[:, c0:c1] = ks
        gammas = schedule.gammas(c0, c1)
        for i in range(c1 - c0):
            n = c0 + i
            k = ks[:, i]
            gamma = gammas[i]
            if pos < C and steps[pos] == n:
                out[:, pos] = X
                rec_idx[:, pos] = k
                if track:
                    gsums[:, pos] = gsum
                pos += 1
            if track:
                d = dist.g_grad(X) - g_ref
                gsum = gsum + gamma * np.sum(d * d, axis=-1)
            x_prev = X if early_stop_tol is not None else None
            if R == 1:
                Xn = _update(mode, single_pair or dist.pair(int(k[0])), gamma, X)
            elif single_pair is not None:
                Xn = _update(mode, single_pair, gamma, X)
            else:
                Xn = X.copy()
                for kk in np.unique(k):
                    rows = k == kk
                    Xn[rows] = _update(mode, dist.pair(int(kk)), gamma, X[rows])
            bad = ~np.all(np.isfinite(Xn), axis=-1)
            if bad.any():
                newly = bad & alive
                if raise_on_abort and newly.any():
                    raise NonFiniteError(f"non-finite iterate produced at step {n}", step=n)
                aborted[newly] = n
                alive &= ~bad
                Xn[~alive] = X[~alive]
            X = Xn
            if early_stop_tol is not None:
                move = np.max(np.linalg.norm(X - x_prev, axis=-1)) / gamma
                calm = calm + 1 if move < early_stop_tol else 0
                if calm >= early_stop_patience:
                    stopped = n + 1
                    break
        if stopped is not None:
            break
    final_n = stopped if stopped is not None else budget
    if stopped is not None:
        keep = steps[:pos] < final_n
        steps = np.append(steps[:pos][keep], final_n)
        out = out[:, :len(steps)]
        rec_idx = rec_idx[:, :len(steps)]
        if track:
            gsums = gsums[:, :len(steps)]
        pos = len(steps) - 1
        if keep_all_indices:
            all_idx = all_idx[:, :final_n]
    out[:, pos] = X
    rec_idx[:, pos] = -1
    if track:
        gsums[:, pos] = gsum
    return PathBatch(steps=steps, iterates=out, recorded_indices=rec_idx, all_indices=all_idx,
                     aborted_at=aborted, gradient_sums=gsums if track else None,
                     iterations=final_n, stopped_early=stopped,
                     wall_clock=time.perf_counter() - t0)


def _schedule_gate(schedule, allow_invalid):
    cls = validate_schedule(schedule)
    if cls != ROBBINS_MONRO and not allow_invalid:
        raise ScheduleError(
            f"step schedule is {cls}, not Robbins-Monro (sum gamma_n = inf and "
            f"sum gamma_n^2 < inf required); pass allow_invalid_schedule to override")
    return cls


def _run(dist, cfg: SolverConfig, mode, reference=None):
    cls = _schedule_gate(cfg.schedule, cfg.allow_invalid_schedule)
    x0 = as_vector(cfg.x0, name="x0")
    X0 = initial_points(x0, cfg.rng.seed, [cfg.rng.stream_id], cfg.x0_noise)
    if cfg.rng.counter:
        raise ValidationError("solver streams must start at counter 0")
    batch = run_paths(dist, mode, cfg.schedule, X0, cfg.rng.seed, [cfg.rng.stream_id],
                      cfg.budget, steps=record_steps(cfg.budget, cfg.record_every),
                      keep_all_indices=True, raise_on_abort=True,
                      early_stop_tol=cfg.early_stop_tol,
                      early_stop_patience=cfg.early_stop_patience)
    iterates = batch.iterates[0]
    dist_trace = None
    if reference is not None:
        dist_trace = np.linalg.norm(iterates - as_vector(reference, x0.size), axis=-1)
    return RunRecord(
        algorithm=mode, steps=batch.steps, iterates=iterates,
        sampled_indices=batch.all_indices[0], objective_trace=dist.objective(iterates),
        dist_trace=dist_trace, seed=cfg.rng.seed, stream_id=cfg.rng.stream_id,
        schedule=cfg.schedule, schedule_class=cls,
        schedule_overridden=cls != ROBBINS_MONRO, wall_clock=batch.wall_clock,
        iterations=batch.iterations, stopped_early=batch.stopped_early)


def _all_parts(dist, which):
    if isinstance(dist, ProductDistribution):
        return dist.f_parts if which == "f" else dist.g_parts
    return [getattr(p, which) for p in dist.pairs]


def spg_run(dist: ComponentDistribution, cfg: SolverConfig, reference=None) -> RunRecord:
    """Stochastic proximal gradient:
    ``x_{n+1} = prox_{gamma_n f_k}(x_n - gamma_n grad g_k(x_n))`` with ``k = k_n``.

    Raises
    ------
    ScheduleError
        The schedule is not Robbins-Monro and ``cfg.allow_invalid_schedule`` is off.
    NonFiniteError
        An iterate became NaN/Inf; ``.step`` names the iteration.
    """
    return _run(dist, cfg, "spg", reference)


def spp_run(dist: ComponentDistribution, cfg: SolverConfig, reference=None) -> RunRecord:
    """Stochastic proximal point: ``x_{n+1} = prox_{gamma_n f_k}(x_n)``."""
    if not all(g.is_zero for g in _all_parts(dist, "g")):
        raise ValidationError("spp_run requires every smooth part to be the zero function")
    return _run(dist, cfg, "spp", reference)


def sgd_run(dist: ComponentDistribution, cfg: SolverConfig, reference=None) -> RunRecord:
    """Stochastic gradient: ``x_{n+1} = x_n - gamma_n grad g_k(x_n)``."""
    if not all(f.is_zero for f in _all_parts(dist, "f")):
        raise ValidationError("sgd_run requires every proxable part to be the zero function")
    return _run(dist, cfg, "sgd", reference)


def fb_run(f: ProxOracle, g: SmoothOracle, schedule: StepSchedule, budget, x0,
           record_every=1, tol=None, divergence_norm=None, reference=None) -> RunRecord:
    """Deterministic forward-backward iteration
    ``x_{n+1} = prox_{gamma_n f}(x_n - gamma_n grad g(x_n))``.

    Requires ``sup gamma_n < 2 / lipschitz(g)``. With ``tol`` the run stops at the
    first ``n`` with ``|x_{n+1} - x_n| <= tol`` and ``converged`` is set.
    ``divergence_norm`` aborts with :class:`DivergenceError` once an iterate
    exceeds that norm.
    """
    if budget < 1:
        raise ValidationError("budget must be positive")
    schedule.check()
    # explicit lists are legitimate here; only the step bound matters
    cls = UNKNOWN if schedule.family == "explicit" else validate_schedule(schedule)
    if g.lipschitz > 0 and not schedule.sup() < 2.0 / g.lipschitz:
        raise StepBoundError(
            f"sup gamma_n = {schedule.sup()} violates sup gamma_n < 2/beta = {2.0 / g.lipschitz}")
    t0 = time.perf_counter()
    x = as_vector(x0, name="x0")[None, :]
    steps = record_steps(budget, record_every)
    recorded = []
    pos = 0
    converged = None if tol is None else False
    n_done = budget
    chunk = 4096
    for c0 in range(0, budget, chunk):
        gammas = schedule.gammas(c0, min(budget, c0 + chunk))
        for i, gamma in enumerate(gammas):
            n = c0 + i
            if pos < len(steps) and steps[pos] == n:
                recorded.append((n, x[0].copy()))
                pos += 1
            x_new = f.prox(gamma, x - gamma * g.grad(x))
            if not np.all(np.isfinite(x_new)):
                raise NonFiniteError(f"non-finite iterate produced at step {n}", step=n)
            if divergence_norm is not None and np.linalg.norm(x_new) > divergence_norm:
                raise DivergenceError(f"iterate norm exceeded {divergence_norm:g} at step {n}")
            if tol is not None and np.linalg.norm(x_new - x) <= tol:
                x = x_new
                converged = True
                n_done = n + 1
                break
            x = x_new
        if converged:
            break
    recorded.append((n_done, x[0].copy()))
    steps_out = np.array([s for s, _ in recorded], dtype=np.int64)
    iterates = np.array([v for _, v in recorded])
    with np.errstate(invalid="ignore"):
        obj = f.value(iterates) + g.value(iterates)
    dist_trace = None
    if reference is not None:
        dist_trace = np.linalg.norm(iterates - as_vector(reference, iterates.shape[1]), axis=-1)
    return RunRecord(
        algorithm="fb", steps=steps_out, iterates=iterates, sampled_indices=None,
        objective_trace=obj, dist_trace=dist_trace, seed=None, stream_id=None,
        schedule=schedule, schedule_class=cls,
        schedule_overridden=False, wall_clock=time.perf_counter() - t0,
        iterations=n_done, converged=converged)


# ---------------------------------------------------------------------------
# Assumption checks

@dataclass
class Assumption1Report:
    mean_residual: np.ndarray
    second_moment: float
    tol: float

    @property
    def mean_norm(self):
        return float(np.linalg.norm(self.mean_residual))

    @property
    def flagged(self):
        return self.mean_norm > self.tol


def check_assumption1(dist: ComponentDistribution, zbar, s_select, tol=1e-8):
    """Exact mean and second moment of ``s_k + grad g_k(zbar)`` over the law.

    ``s_select`` gives a subgradient of ``f_k`` at ``zbar`` for each component,
    either as a sequence indexed by ``k`` or as a callable ``k -> vector``.
    """
    z = as_vector(zbar, name="zbar")
    get = s_select if callable(s_select) else (
        lambda k: s_select[k] if k < len(s_select) else None)
    mean = np.zeros_like(z)
    second = 0.0
    for k, w in enumerate(dist.weights):
        s = get(k)
        if s is None:
            raise ValidationError(f"no subgradient selection for component {k}")
        r = as_vector(s, z.size, name=f"s[{k}]") + dist.pair(k).g.grad(z)
        mean += w * r
        second += w * float(np.dot(r, r))
    return Assumption1Report(mean_residual=mean, second_moment=second, tol=tol)


@dataclass
class PsiReport:
    points: np.ndarray
    moments: np.ndarray
    bounds: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def check_psi_bound(dist: ComponentDistribution, psi: Callable, points, rtol=1e-12):
    """Compare ``E |d0 f_k(x) + grad g_k(x)|^2`` with ``psi(|x|)`` at each point.

    ``d0 f_k`` is the minimal-norm subgradient. Points outside the domain of
    the subdifferential raise :class:`ValidationError`.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    moments = np.zeros(len(P))
    for k, w in enumerate(dist.weights):
        pair = dist.pair(k)
        if pair.f.min_norm_subgrad is None:
            raise ValidationError(f"component {k} has no minimal-norm subgradient")
        v = pair.f.min_norm_subgrad(P) + pair.g.grad(P)
        moments += w * np.sum(v * v, axis=-1)
    bounds = np.array([psi(float(np.linalg.norm(p))) for p in P])
    viol = [i for i in range(len(P)) if moments[i] > bounds[i] * (1 + rtol) + rtol]
    return PsiReport(points=P, moments=moments, bounds=bounds, violations=viol)
