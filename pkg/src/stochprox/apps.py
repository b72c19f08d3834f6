"""Problem builders for mixed-loss classification and inconsistent convex
feasibility, dataset I/O, and deterministic reference solutions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from . import operators as ops
from .core import (
    ComponentDistribution, ComponentPair, EmptyDistributionError, ProductDistribution,
    ProxOracle, SmoothOracle, StepSchedule, ValidationError, as_vector,
    make_finite_distribution,
)
from .operators import ConvexSet
from .solvers import DivergenceError, fb_run

__all__ = [
    "LabeledSample", "FeasibilitySpec", "DatasetError", "load_dataset", "save_dataset",
    "make_classification_problem", "make_feasibility_problem", "make_quadratic_problem",
    "synth_classification", "hinge_sum_prox", "Reference", "ReferenceError",
    "reference_minimizer", "classification_subgradients", "feasibility_subgradients",
    "classification_psi", "feasibility_psi",
]

COHORTS = ("noisy", "clean")


@dataclass(frozen=True, eq=False)
class LabeledSample:
    features: np.ndarray
    label: int
    cohort: str

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValidationError(f"label must be -1 or +1, got {self.label!r}")
        if self.cohort not in COHORTS:
            raise ValidationError(f"cohort must be 'noisy' or 'clean', got {self.cohort!r}")
        object.__setattr__(self, "features", as_vector(self.features, name="features"))


@dataclass(frozen=True)
class FeasibilitySpec:
    constraint: ConvexSet
    sets: Sequence[ConvexSet]
    weights: Optional[Sequence[float]] = None


# ---------------------------------------------------------------------------
# Dataset CSV

class DatasetError(ValidationError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def load_dataset(path):
    """Read ``cohort,label,f1,...,fN`` rows; ``cohort`` is ``noisy`` or ``clean``."""
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError("file is empty (missing header)", 1)
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:2] != ["cohort", "label"] or \
                header[2:] != [f"f{i}" for i in range(1, len(header) - 1)]:
            raise DatasetError("header must be cohort,label,f1,...,fN", 1)
        dim = len(header) - 2
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != dim + 2:
                raise DatasetError(f"expected {dim + 2} fields, found {len(row)}", line)
            cohort = row[0].strip()
            if cohort not in COHORTS:
                raise DatasetError(f"unknown cohort {cohort!r}", line)
            try:
                label = float(row[1])
                feats = [float(c) for c in row[2:]]
            except ValueError as exc:
                raise DatasetError(f"malformed number ({exc})", line) from None
            if label not in (-1.0, 1.0):
                raise DatasetError(f"label must be -1 or 1, got {row[1].strip()}", line)
            if not np.all(np.isfinite(feats)):
                raise DatasetError("non-finite feature", line)
            samples.append(LabeledSample(np.array(feats), int(label), cohort))
    return samples


def save_dataset(samples, path):
    dim = samples[0].features.size
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cohort", "label"] + [f"f{i}" for i in range(1, dim + 1)])
        for s in samples:
            w.writerow([s.cohort, s.label] + [repr(float(v)) for v in s.features])


# ---------------------------------------------------------------------------
# Classification

def hinge_sum_prox(alpha, U, xi, gamma, x, tol=1e-15, max_sweeps=100000):
    """Prox of ``gamma * mean_i alpha max(0, 1 - xi_i <u_i, .>)``.

    Solved through its dual, a box-constrained quadratic program in
    ``t in [0, 1]^K``: ``z = x + gamma * sum_i c t_i xi_i u_i`` with ``c = alpha / K``.
    Coordinate descent on the dual is run until the updates stall.
    """
    x = as_vector(x)
    V = np.asarray(U, dtype=float) * np.asarray(xi, dtype=float)[:, None]
    K = V.shape[0]
    W = (alpha / K) * V                       # columns of the dual map, row-wise
    b = (alpha / K) * (1.0 - V @ x)
    wn2 = np.sum(W * W, axis=1)
    t = np.zeros(K)
    Wt = np.zeros_like(x)
    for _ in range(max_sweeps):
        delta = 0.0
        for i in range(K):
            if wn2[i] == 0.0:
                continue
            grad = gamma * float(W[i] @ Wt) - b[i]
            ti = min(1.0, max(0.0, t[i] - grad / (gamma * wn2[i])))
            d = ti - t[i]
            if d != 0.0:
                Wt += d * W[i]
                t[i] = ti
                delta = max(delta, abs(d) * np.sqrt(wn2[i]))
        if delta <= tol * (1.0 + np.linalg.norm(x)):
            break
    return x + gamma * Wt


def make_classification_problem(samples, alpha):
    """Uniform law on ``K1 x K2``: component ``(i, j)`` pairs the hinge loss of
    noisy sample ``i`` with the logistic loss of clean sample ``j``.

    Per-sample losses carry no ``1/|K1|``, ``1/|K2|`` factors; the uniform
    product law supplies the averages.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha!r}")
    noisy = [s for s in samples if s.cohort == "noisy"]
    clean = [s for s in samples if s.cohort == "clean"]
    if not noisy or not clean:
        raise EmptyDistributionError("both the noisy and the clean cohort must be non-empty")
    dims = {s.features.size for s in samples}
    if len(dims) != 1:
        raise ValidationError("samples have inconsistent dimensions")
    dim = dims.pop()
    f_parts = [ops.hinge(alpha, s.features, s.label) for s in noisy]
    g_parts = [ops.logistic(alpha, s.features, s.label) for s in clean]

    U1 = np.array([s.features for s in noisy])
    xi1 = np.array([s.label for s in noisy], dtype=float)
    U2 = np.array([s.features for s in clean])
    xi2 = np.array([s.label for s in clean], dtype=float)

    def f_value(x):
        x = np.asarray(x, dtype=float)
        return sum(ops.hinge_value(alpha, u, e, x) for u, e in zip(U1, xi1)) / len(U1)

    f_mix = ProxOracle(value=f_value,
                       prox=lambda gamma, x: np.apply_along_axis(
                           lambda r: hinge_sum_prox(alpha, U1, xi1, gamma, r), -1, x),
                       name="mean hinge")

    def g_value(x):
        x = np.asarray(x, dtype=float)
        return sum(ops.logistic_value(alpha, u, e, x) for u, e in zip(U2, xi2)) / len(U2)

    def g_grad(x):
        x = np.asarray(x, dtype=float)
        return sum(ops.logistic_grad(alpha, u, e, x) for u, e in zip(U2, xi2)) / len(U2)

    beta = 0.25 * (1.0 - alpha) * float(np.max(np.sum(U2 * U2, axis=1)))
    g_mix = SmoothOracle(value=g_value, grad=g_grad, lipschitz=beta, name="mean logistic")
    dist = ProductDistribution(f_parts, g_parts, f_mixture=f_mix, g_mixture=g_mix, dim=dim)
    dist.alpha = alpha
    dist.noisy = noisy
    dist.clean = clean
    return dist


def synth_classification(n1, n2, dim, separation, noise, seed):
    """Two unit-variance Gaussian clouds at ``+/- separation/2`` along a random
    unit direction. Labels in the noisy cohort are flipped with probability
    ``noise``."""
    if n1 < 1 or n2 < 1:
        raise ValidationError("each cohort needs at least one sample")
    if not 0.0 <= noise <= 1.0:
        raise ValidationError("noise must be a probability")
    rng = np.random.default_rng(seed)
    d = rng.normal(size=dim)
    d /= np.linalg.norm(d)
    out = []
    for cohort, n in (("noisy", n1), ("clean", n2)):
        labels = rng.choice([-1, 1], size=n)
        feats = labels[:, None] * (0.5 * separation) * d + rng.normal(size=(n, dim))
        if cohort == "noisy":
            flip = rng.random(n) < noise
            labels = np.where(flip, -labels, labels)
        out.extend(LabeledSample(f, int(l), cohort) for f, l in zip(feats, labels))
    return out


def classification_subgradients(dist, zbar, kink_tol=1e-7):
    """Subgradients ``s_i`` of the hinge terms at ``zbar`` making the mean
    residual ``E[s_i + grad g_j(zbar)]`` as small as possible.

    Away from the kink the subgradient is forced; at a kink it is
    ``-t alpha xi u`` with ``t in [0, 1]``, and the ``t`` are fitted by bounded
    least squares. Returns a callable ``k -> s`` over product indices.
    """
    z = as_vector(zbar, dist.dim, name="zbar")
    alpha = dist.alpha
    V = np.array([s.label * s.features for s in dist.noisy])
    K1 = len(V)
    margins = V @ z
    G = dist.g_grad(z)
    fixed = np.where((margins < 1 - kink_tol)[:, None], -alpha * V, 0.0)
    kink = np.abs(margins - 1) <= kink_tol
    t = np.zeros(K1)
    if kink.any():
        A = (-alpha / K1) * V[kink].T
        target = -(G + fixed.sum(axis=0) / K1)
        t[kink] = lsq_linear(A, target, bounds=(0.0, 1.0), tol=1e-14).x
    S = fixed - (t * alpha)[:, None] * V * kink[:, None]
    n2 = dist.shape[1]
    return lambda k: S[k // n2]


def classification_psi(dist):
    """Constant bound ``(alpha max|u_i| + (1 - alpha) max|u_j|)^2`` on
    ``|d0 f_i(x) + grad g_j(x)|^2``."""
    a = dist.alpha
    m1 = max(np.linalg.norm(s.features) for s in dist.noisy)
    m2 = max(np.linalg.norm(s.features) for s in dist.clean)
    bound = (a * m1 + (1 - a) * m2) ** 2
    return lambda r: bound


# ---------------------------------------------------------------------------
# Feasibility

def make_feasibility_problem(spec: FeasibilitySpec):
    """Component ``k``: ``f_k`` the indicator of the constraint set (prox is
    the projection for every step), ``g_k = d_{Z_k}^2 / 2`` (gradient
    ``x - proj_{Z_k} x``, 1-Lipschitz)."""
    C = spec.constraint
    if not spec.sets:
        raise EmptyDistributionError("at least one set is required")
    for Z in spec.sets:
        if Z.dim != C.dim:
            raise ValidationError("all sets must share the constraint's dimension")
    weights = spec.weights if spec.weights is not None else np.ones(len(spec.sets))
    f = ops.indicator(C)
    pairs = [ComponentPair(f, ops.half_sqdist(Z), label=f"Z{k}") for k, Z in enumerate(spec.sets)]
    dist = make_finite_distribution(pairs, weights, dim=C.dim)
    w = dist.weights
    g_mix = SmoothOracle(
        value=lambda x: sum(wk * ops.sqdist_value(Z, x) for wk, Z in zip(w, spec.sets)),
        grad=lambda x: sum(wk * ops.sqdist_grad(Z, x) for wk, Z in zip(w, spec.sets)),
        lipschitz=1.0, name="mean half squared distance")
    dist.f_mixture = f
    dist.g_mixture = g_mix
    dist.constraint = C
    dist.sets = tuple(spec.sets)
    return dist


def feasibility_subgradients(dist, zbar):
    """Normal-cone element ``s`` at ``zbar`` closest to ``-E grad g_k(zbar)``,
    shared by every component."""
    z = as_vector(zbar, dist.dim, name="zbar")
    s = ops.normal_cone_projection(dist.constraint, z, -dist.g_grad(z))
    return [s] * dist.n_components


def feasibility_psi(dist):
    """``max{2, 2 E d_{Z_k}(0)^2} (1 + r^2)``."""
    zero = np.zeros(dist.dim)
    t0 = sum(w * 2.0 * ops.sqdist_value(Z, zero) for w, Z in zip(dist.weights, dist.sets))
    c = max(2.0, 2.0 * float(t0))
    return lambda r: c * (1.0 + r * r)


def make_quadratic_problem(centers, weights=None, proximal=False):
    """Components ``|x - c_k|^2 / 2`` as smooth parts (``f_k = 0``), or as
    proxable parts (``g_k = 0``) when ``proximal``. The minimizer is the
    weighted mean of the centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] == 0:
        raise EmptyDistributionError("at least one center is required")
    weights = np.ones(len(centers)) if weights is None else weights
    if proximal:
        pairs = [ComponentPair(ops.quadratic(c), ops.zero_smooth()) for c in centers]
    else:
        pairs = [ComponentPair(ops.zero_function(), ops.quadratic_smooth(c)) for c in centers]
    dist = make_finite_distribution(pairs, weights, dim=centers.shape[1])
    mean = dist.weights @ centers
    spread = float(dist.weights @ np.sum((centers - mean) ** 2, axis=1))
    quad = lambda x: 0.5 * np.sum((np.asarray(x, dtype=float) - mean) ** 2, axis=-1) \
        + 0.5 * spread
    if proximal:
        dist.f_mixture = ProxOracle(
            value=quad,
            prox=lambda gamma, x: (np.asarray(x, dtype=float) + gamma * mean) / (1 + gamma),
            name="mean quadratic")
        dist.g_mixture = ops.zero_smooth()
    else:
        dist.f_mixture = ops.zero_function()
        dist.g_mixture = SmoothOracle(value=quad, grad=lambda x: np.asarray(x, dtype=float) - mean,
                                      lipschitz=1.0, name="mean quadratic")
    dist.centers = centers
    dist.analytic_minimizer = mean
    return dist


# ---------------------------------------------------------------------------
# Reference solutions

class ReferenceError(RuntimeError):
    pass


@dataclass
class Reference:
    point: np.ndarray
    unique: bool
    converged: bool
    endpoints: np.ndarray
    iterations: list
    spread: float


def reference_minimizer(dist: ComponentDistribution, starts=None, n_starts=5, tol=1e-10,
                        max_iter=10 ** 7, agree_tol=1e-6, seed=0, divergence_norm=1e8):
    """Minimize the exact mixture by forward-backward with constant step ``1/beta``
    from several starts.

    ``unique`` is set when all endpoints agree within ``agree_tol``; callers
    should fall back to objective gaps otherwise.

    Raises
    ------
    ReferenceError
        No bounded reference (an iterate norm exceeded ``divergence_norm``), or
        the mixture oracles are unavailable.
    """
    f, g = dist.f_mixture, dist.g_mixture
    if f is None or g is None:
        raise ReferenceError("distribution has no exact mixture oracles")
    dim = dist.dim
    if starts is None:
        rng = np.random.default_rng(seed)
        starts = [np.zeros(dim)] + [rng.normal(scale=3.0, size=dim) for _ in range(n_starts - 1)]
    beta = g.lipschitz
    step = StepSchedule.constant(1.0 / beta if beta > 0 else 1.0)
    ends, iters, conv = [], [], True
    for x0 in starts:
        try:
            rec = fb_run(f, g, step, max_iter, x0, record_every=max_iter, tol=tol,
                         divergence_norm=divergence_norm)
        except DivergenceError as exc:
            raise ReferenceError(f"no bounded reference found: {exc}") from None
        ends.append(rec.final)
        iters.append(rec.iterations)
        conv = conv and bool(rec.converged)
    ends = np.array(ends)
    spread = float(np.max(np.linalg.norm(ends - ends[0], axis=1)))
    return Reference(point=ends[0], unique=spread <= agree_tol, converged=conv,
                     endpoints=ends, iterations=iters, spread=spread)
