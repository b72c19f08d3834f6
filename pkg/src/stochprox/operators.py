"""Closed-form proximity operators, projections and gradients.

All functions take points as arrays of shape ``(..., dim)`` and act row-wise,
so a stack of iterates can be processed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import ProxOracle, SmoothOracle, ValidationError, as_vector

__all__ = [
    "ConvexSet", "project", "contains", "violation", "normal_cone_projection",
    "brute_force_prox", "BruteForceError",
    "soft_threshold", "hinge_value", "hinge_prox", "hinge_min_norm_subgrad",
    "logistic_value", "logistic_grad", "sqdist_value", "sqdist_grad",
    "zero_function", "indicator", "l1_norm", "hinge", "quadratic",
    "zero_smooth", "logistic", "half_sqdist", "quadratic_smooth",
]


def _dot(x, u):
    return np.sum(x * u, axis=-1)


# ---------------------------------------------------------------------------
# Convex sets

SET_KINDS = ("whole_space", "box", "ball", "halfspace", "hyperplane", "singleton")


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """Nonempty closed convex set with a closed-form projection.

    ``halfspace`` is ``{y : <normal, y> <= offset}``; ``hyperplane`` is
    ``{y : <normal, y> = offset}``.
    """

    kind: str
    dim: int
    lo: np.ndarray = None
    hi: np.ndarray = None
    center: np.ndarray = None
    radius: float = 0.0
    normal: np.ndarray = None
    offset: float = 0.0

    @classmethod
    def whole_space(cls, dim):
        if int(dim) < 1:
            raise ValidationError("dimension must be positive")
        return cls("whole_space", int(dim))

    @classmethod
    def box(cls, lo, hi):
        """Componentwise interval ``lo <= x <= hi``; infinite bounds are allowed."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise ValidationError("box bounds must be 1-D arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo == np.inf) \
                or np.any(hi == -np.inf):
            raise ValidationError("box bounds must be numbers, with lo < inf and hi > -inf")
        if np.any(lo > hi):
            raise ValidationError("box requires lo <= hi componentwise")
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        c = as_vector(center, name="center")
        if not radius > 0 or not np.isfinite(radius):
            raise ValidationError("ball radius must be positive")
        return cls("ball", c.size, center=c, radius=float(radius))

    @classmethod
    def halfspace(cls, normal, offset):
        a = as_vector(normal, name="normal")
        if not np.linalg.norm(a) > 0:
            raise ValidationError("halfspace normal must be nonzero")
        return cls("halfspace", a.size, normal=a, offset=float(offset))

    @classmethod
    def hyperplane(cls, normal, offset):
        a = as_vector(normal, name="normal")
        if not np.linalg.norm(a) > 0:
            raise ValidationError("hyperplane normal must be nonzero")
        return cls("hyperplane", a.size, normal=a, offset=float(offset))

    @classmethod
    def singleton(cls, point):
        p = as_vector(point, name="point")
        return cls("singleton", p.size, center=p)

    def describe(self):
        """Compact text form, inverse of :func:`stochprox.cli.parse_set`."""
        num = lambda t: repr(float(t)) if np.isfinite(t) else ("inf" if t > 0 else "-inf")
        fmt = lambda v: "[" + ", ".join(num(t) for t in v) + "]"
        if self.kind == "whole_space":
            return f"whole({self.dim})"
        if self.kind == "box":
            return f"box({fmt(self.lo)}, {fmt(self.hi)})"
        if self.kind == "ball":
            return f"ball({fmt(self.center)}, {self.radius!r})"
        if self.kind in ("halfspace", "hyperplane"):
            return f"{self.kind}({fmt(self.normal)}, {self.offset!r})"
        return f"singleton({fmt(self.center)})"

    def __repr__(self):
        return f"ConvexSet.{self.describe()}"


def project(s: ConvexSet, x):
    """Euclidean projection of ``x`` onto ``s``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != s.dim:
        raise ValidationError(f"point has dimension {x.shape[-1]}, set has {s.dim}")
    if s.kind == "whole_space":
        return x.copy()
    if s.kind == "box":
        return np.clip(x, s.lo, s.hi)
    if s.kind == "ball":
        d = x - s.center
        nrm = np.linalg.norm(d, axis=-1, keepdims=True)
        with np.errstate(divide="ignore"):
            scale = np.where(nrm > s.radius, s.radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return s.center + scale * d
    if s.kind in ("halfspace", "hyperplane"):
        excess = _dot(x, s.normal) - s.offset
        if s.kind == "halfspace":
            excess = np.maximum(excess, 0.0)
        return x - (excess / _dot(s.normal, s.normal))[..., None] * s.normal
    if s.kind == "singleton":
        return np.broadcast_to(s.center, x.shape).copy()
    raise ValidationError(f"unknown set kind {s.kind!r}")


def violation(s: ConvexSet, x):
    """Distance-type constraint violation computed from the set's defining
    inequalities, independently of :func:`project`."""
    x = np.asarray(x, dtype=float)
    if s.kind == "whole_space":
        return np.zeros(x.shape[:-1])
    if s.kind == "box":
        return np.sum(np.maximum(s.lo - x, 0.0) + np.maximum(x - s.hi, 0.0), axis=-1)
    if s.kind == "ball":
        return np.maximum(np.linalg.norm(x - s.center, axis=-1) - s.radius, 0.0)
    if s.kind in ("halfspace", "hyperplane"):
        r = (_dot(x, s.normal) - s.offset) / np.linalg.norm(s.normal)
        return np.maximum(r, 0.0) if s.kind == "halfspace" else np.abs(r)
    return np.linalg.norm(x - s.center, axis=-1)


def normal_cone_projection(s: ConvexSet, z, v, tol=1e-9):
    """Projection of ``v`` onto the normal cone of ``s`` at ``z`` (assumed in ``s``).

    Constraints within ``tol`` (relative) of being active count as active.
    """
    z = as_vector(z, s.dim, name="z")
    v = as_vector(v, s.dim, name="v")
    scale = tol * max(1.0, float(np.max(np.abs(z))))
    if s.kind == "whole_space":
        return np.zeros_like(v)
    if s.kind == "box":
        at_hi = np.abs(z - s.hi) <= scale
        at_lo = np.abs(z - s.lo) <= scale
        out = np.zeros_like(v)
        out = np.where(at_hi, np.maximum(v, 0.0), out)
        out = np.where(at_lo, np.minimum(v, 0.0), out)
        return np.where(at_hi & at_lo, v, out)
    if s.kind in ("halfspace", "hyperplane"):
        a = s.normal
        c = float(np.dot(v, a)) / float(np.dot(a, a))
        if s.kind == "hyperplane":
            return c * a
        active = abs(float(np.dot(z, a)) - s.offset) <= scale * np.linalg.norm(a)
        return max(c, 0.0) * a if active else np.zeros_like(v)
    if s.kind == "ball":
        d = z - s.center
        if abs(np.linalg.norm(d) - s.radius) > scale:
            return np.zeros_like(v)
        n = d / np.linalg.norm(d)
        return max(float(np.dot(v, n)), 0.0) * n
    return v.copy()


def contains(s: ConvexSet, x, tol=1e-10):
    x = np.asarray(x, dtype=float)
    gap = np.linalg.norm(x - project(s, x), axis=-1)
    return gap <= tol * np.maximum(1.0, np.linalg.norm(x, axis=-1))


# ---------------------------------------------------------------------------
# Brute-force prox (test oracle)

class BruteForceError(RuntimeError):
    pass


def _bracket_search(objective, lo, hi, depth_tol, points, min_rounds=2):
    """Minimize a convex function of the last coordinate by nested 1-D grids.

    ``objective(t)`` maps an array of shape ``(M, P)`` of trial coordinates to
    values; each of the ``M`` rows is an independent 1-D problem on
    ``[lo, hi]``. In one dimension the best grid point of a convex function
    brackets the minimizer between its two neighbours, so the window shrinks
    to two cells per round.
    """
    m = lo.shape[0]
    wlo, whi = lo.copy(), hi.copy()
    rows = np.arange(m)
    rounds = 0
    while True:
        frac = np.linspace(0.0, 1.0, points)
        t = wlo[:, None] + (whi - wlo)[:, None] * frac
        vals = objective(t)
        vals = np.where(np.isnan(vals), np.inf, vals)
        best = np.argmin(vals, axis=1)
        tb = t[rows, best]
        vb = vals[rows, best]
        spacing = (whi - wlo) / (points - 1)
        rounds += 1
        if np.all(spacing <= depth_tol) and rounds >= min_rounds:
            return tb, vb
        wlo = np.maximum(tb - 2 * spacing, lo)
        whi = np.minimum(tb + 2 * spacing, hi)


def brute_force_prox(value, gamma, x, box, tol=1e-6, points=41):
    """Minimize ``gamma * value(z) + |x - z|^2 / 2`` over a box by nested grids.

    The objective is minimized one coordinate at a time: for each grid value
    of the first coordinate the remaining coordinates are minimized by the
    same procedure, and every level refines its own coordinate grid around the
    incumbent until the spacing is below its tolerance (``tol / 100`` at the
    top, far finer below it, so inner minima are accurate enough for the outer
    search and the inner coordinates do not amplify the outer grid error).
    Only function values are used, so nonsmooth ``value`` is fine.

    Parameters
    ----------
    value : callable
        Vectorized over the last axis, ``(..., dim) -> (...)``.
    box : tuple of array_like
        ``(lo, hi)`` search domain; dim <= 3. ``value`` should be finite on
        it (use :func:`violation` as an exact penalty for constraint sets).
    tol : float
        Target accuracy of the returned point.

    Raises
    ------
    BruteForceError
        If the incumbent sits on the search-box boundary after the last round,
        or the objective is infinite on the whole box.
    """
    x = as_vector(x)
    k = x.size
    if k > 3:
        raise ValidationError("brute_force_prox supports at most 3 free coordinates")
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (k,)).astype(float)
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (k,)).astype(float)
    scale = max(1.0, float(np.max(np.abs(np.concatenate([lo, hi])))))
    outer_tol = 1e-2 * tol
    inner_tol = max(1e-4 * tol * tol, 1e-14 * scale)

    def phi(z):
        with np.errstate(invalid="ignore", over="ignore"):
            return gamma * np.asarray(value(z), dtype=float) \
                + 0.5 * np.sum((z - x) ** 2, axis=-1)

    def solve(prefix, level):
        # prefix: (M, level) fixed leading coordinates; returns best tail and value
        m = prefix.shape[0]
        tol_here = outer_tol if level == 0 else inner_tol

        def objective(t):
            mm, p = t.shape
            head = np.repeat(prefix, p, axis=0)
            cand = np.concatenate([head, t.reshape(-1, 1)], axis=1)
            if level + 1 == k:
                return phi(cand).reshape(mm, p)
            _, vals = solve(cand, level + 1)
            return vals.reshape(mm, p)

        tb, vb = _bracket_search(objective, np.full(m, lo[level]), np.full(m, hi[level]),
                                 tol_here, points, min_rounds=6 if level == 0 else 2)
        if level + 1 == k:
            return tb[:, None], vb
        full = np.concatenate([prefix, tb[:, None]], axis=1)
        tail, vals = solve(full, level + 1)
        return np.concatenate([tb[:, None], tail], axis=1), vals

    t_best, v_best = solve(np.zeros((1, 0)), 0)
    t_best = t_best[0]
    if not np.isfinite(v_best[0]):
        raise BruteForceError("objective is infinite on the whole search box")
    edge = np.minimum(t_best - lo, hi - t_best)
    if np.any((edge <= 2 * tol) & (hi > lo)):
        raise BruteForceError("minimizer on the search-box boundary; enlarge the box")
    return t_best


# ---------------------------------------------------------------------------
# Elementary operators

def soft_threshold(x, t):
    """Prox of ``t * |.|_1``."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def hinge_value(alpha, u, xi, x):
    """``alpha * max(0, 1 - xi <x, u>)``."""
    return alpha * np.maximum(0.0, 1.0 - xi * _dot(np.asarray(x, dtype=float), u))


def hinge_prox(alpha, u, xi, gamma, x):
    """Prox of ``gamma * alpha * max(0, 1 - xi <., u>)``.

    With ``m = xi <u, x>``: identity when ``m > 1``, projection onto the
    hyperplane ``m = 1`` when ``1 >= m >= 1 - alpha gamma |u|^2``, otherwise a
    step ``alpha gamma xi u``. A zero ``u`` makes the loss constant.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    nu2 = float(np.dot(u, u))
    if nu2 == 0.0:
        return x.copy()
    m = xi * _dot(x, u)
    lower = 1.0 - alpha * gamma * nu2
    coef = np.where(m > 1.0, 0.0, np.where(m >= lower, (1.0 - m) / nu2, alpha * gamma))
    return x + (coef * xi)[..., None] * u


def hinge_min_norm_subgrad(alpha, u, xi, x):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    active = xi * _dot(x, u) < 1.0
    return np.where(active[..., None], -alpha * xi * u, 0.0) * np.ones_like(x)


def logistic_value(alpha, u, xi, x):
    """``(1 - alpha) log(1 + exp(-xi <x, u>))`` without overflow."""
    t = xi * _dot(np.asarray(x, dtype=float), u)
    return (1.0 - alpha) * np.logaddexp(0.0, -t)


def logistic_grad(alpha, u, xi, x):
    x = np.asarray(x, dtype=float)
    t = xi * _dot(x, u)
    return (-(1.0 - alpha) * xi * expit(-t))[..., None] * np.asarray(u, dtype=float)


def sqdist_value(z: ConvexSet, x):
    """``d_Z(x)^2 / 2``."""
    x = np.asarray(x, dtype=float)
    r = x - project(z, x)
    return 0.5 * np.sum(r * r, axis=-1)


def sqdist_grad(z: ConvexSet, x):
    x = np.asarray(x, dtype=float)
    return x - project(z, x)


# ---------------------------------------------------------------------------
# Oracle factories

def zero_function():
    return ProxOracle(
        value=lambda x: np.zeros(np.shape(x)[:-1]),
        prox=lambda gamma, x: np.array(x, dtype=float),
        min_norm_subgrad=lambda x: np.zeros(np.shape(x)),
        is_zero=True, name="zero")


def indicator(s: ConvexSet):
    """Indicator of ``s``; its prox is the projection for every step size."""
    def value(x):
        return np.where(contains(s, x), 0.0, np.inf)

    def subgrad(x):
        inside = contains(s, x)
        if not np.all(inside):
            raise ValidationError("point outside the domain of the indicator")
        return np.zeros(np.shape(x))

    return ProxOracle(value=value, prox=lambda gamma, x: project(s, x),
                      min_norm_subgrad=subgrad,
                      domain_tag="whole_space" if s.kind == "whole_space" else "set",
                      domain=s, name=f"indicator[{s.describe()}]")


def l1_norm(weight=1.0):
    def subgrad(x):
        x = np.asarray(x, dtype=float)
        return weight * np.sign(x)

    return ProxOracle(
        value=lambda x: weight * np.sum(np.abs(np.asarray(x, dtype=float)), axis=-1),
        prox=lambda gamma, x: soft_threshold(x, gamma * weight),
        min_norm_subgrad=subgrad, name="l1")


def hinge(alpha, u, xi):
    u = as_vector(u, name="u")
    if xi not in (-1, 1):
        raise ValidationError(f"label must be -1 or +1, got {xi!r}")
    return ProxOracle(
        value=lambda x: hinge_value(alpha, u, xi, x),
        prox=lambda gamma, x: hinge_prox(alpha, u, xi, gamma, x),
        min_norm_subgrad=lambda x: hinge_min_norm_subgrad(alpha, u, xi, x),
        name="hinge")


def quadratic(center, weight=1.0):
    """``weight * |x - center|^2 / 2`` as a proxable function."""
    c = as_vector(center, name="center")

    def prox(gamma, x):
        return (np.asarray(x, dtype=float) + gamma * weight * c) / (1.0 + gamma * weight)

    return ProxOracle(
        value=lambda x: 0.5 * weight * np.sum((np.asarray(x, dtype=float) - c) ** 2, axis=-1),
        prox=prox,
        min_norm_subgrad=lambda x: weight * (np.asarray(x, dtype=float) - c),
        name="quadratic")


def zero_smooth():
    return SmoothOracle(
        value=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros(np.shape(x)),
        lipschitz=0.0, is_zero=True, name="zero")


def logistic(alpha, u, xi):
    """Logistic loss; gradient Lipschitz constant ``(1 - alpha) |u|^2 / 4``."""
    u = as_vector(u, name="u")
    if xi not in (-1, 1):
        raise ValidationError(f"label must be -1 or +1, got {xi!r}")
    return SmoothOracle(
        value=lambda x: logistic_value(alpha, u, xi, x),
        grad=lambda x: logistic_grad(alpha, u, xi, x),
        lipschitz=0.25 * (1.0 - alpha) * float(np.dot(u, u)),
        name="logistic")


def half_sqdist(z: ConvexSet):
    return SmoothOracle(value=lambda x: sqdist_value(z, x),
                        grad=lambda x: sqdist_grad(z, x),
                        lipschitz=1.0, name=f"sqdist[{z.describe()}]")


def quadratic_smooth(center, weight=1.0):
    c = as_vector(center, name="center")
    return SmoothOracle(
        value=lambda x: 0.5 * weight * np.sum((np.asarray(x, dtype=float) - c) ** 2, axis=-1),
        grad=lambda x: weight * (np.asarray(x, dtype=float) - c),
        lipschitz=float(weight), name="quadratic")
