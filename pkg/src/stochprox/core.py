"""Problem model: component oracles, finite sampling laws, step schedules and
the counter-based random stream used to draw component indices.

Points of the iterate space are plain 1-D float arrays. Every oracle also
accepts a stacked batch of shape ``(..., dim)`` so that many independent
replications can be advanced in lockstep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ValidationError", "EmptyDistributionError", "NegativeWeightError",
    "ZeroWeightError", "ScheduleError", "NonFiniteError",
    "as_vector", "ProxOracle", "SmoothOracle", "ComponentPair",
    "ComponentDistribution", "ProductDistribution", "make_finite_distribution",
    "StepSchedule", "validate_schedule", "step", "RngStream",
    "draw_uniforms", "sample_component", "sample_indices",
    "ROBBINS_MONRO", "SQUARE_SUM_DIVERGES", "SUM_CONVERGES", "UNKNOWN",
]


class ValidationError(ValueError):
    pass


class EmptyDistributionError(ValidationError):
    pass


class NegativeWeightError(ValidationError):
    pass


class ZeroWeightError(ValidationError):
    pass


class ScheduleError(ValidationError):
    pass


class NonFiniteError(FloatingPointError):
    """An oracle produced NaN or Inf; carries the iteration index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


def as_vector(x, dim=None, name="x"):
    """Coerce to a finite 1-D float array."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite coordinates")
    if dim is not None and v.size != dim:
        raise ValidationError(f"{name} has dimension {v.size}, expected {dim}")
    return v


# ---------------------------------------------------------------------------
# Oracles

@dataclass(frozen=True)
class ProxOracle:
    """Nonsmooth part ``f_k``: value and proximity operator.

    ``prox(gamma, x)`` returns the minimizer of ``gamma * value(z) + |x - z|^2 / 2``.
    ``domain`` is the constraint set for indicator-type functions, ``None``
    when the function is finite everywhere.
    """

    value: Callable
    prox: Callable
    min_norm_subgrad: Optional[Callable] = None
    domain_tag: str = "whole_space"
    domain: object = None
    is_zero: bool = False
    name: str = ""


@dataclass(frozen=True)
class SmoothOracle:
    """Smooth part ``g_k`` with a Lipschitz bound on its gradient."""

    value: Callable
    grad: Callable
    lipschitz: float
    is_zero: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.lipschitz >= 0 or not np.isfinite(self.lipschitz):
            raise ValidationError(f"lipschitz must be finite and >= 0, got {self.lipschitz}")


@dataclass(frozen=True)
class ComponentPair:
    f: ProxOracle
    g: SmoothOracle
    label: str = ""


# ---------------------------------------------------------------------------
# Finite-support laws

class ComponentDistribution:
    """Finite-support law of the component index.

    Attributes
    ----------
    weights : ndarray
        Normalized probabilities, one per component.
    beta : float
        Largest Lipschitz constant among the smooth parts.
    f_mixture, g_mixture : ProxOracle, SmoothOracle or None
        Oracles for the exact averages ``sum_k w_k f_k`` and ``sum_k w_k g_k``
        when a builder knows them in closed form (used by the deterministic
        reference solver).
    """

    def __init__(self, pairs, weights, f_mixture=None, g_mixture=None, dim=None):
        self._pairs = tuple(pairs)
        self.weights = np.asarray(weights, dtype=float)
        self.weights.setflags(write=False)
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        self.cumulative_weights = cum
        self.cumulative_weights.setflags(write=False)
        self.beta = max(p.g.lipschitz for p in self._pairs) if self._pairs else 0.0
        self.f_mixture = f_mixture
        self.g_mixture = g_mixture
        self.dim = dim

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def pairs(self):
        return self._pairs

    def pair(self, k):
        return self._pairs[k]

    def __len__(self):
        return self.n_components

    def f_value(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for w, p in zip(self.weights, self._pairs):
            total = total + w * p.f.value(x)
        return total

    def g_value(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        for w, p in zip(self.weights, self._pairs):
            total = total + w * p.g.value(x)
        return total

    def g_grad(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for w, p in zip(self.weights, self._pairs):
            total = total + w * p.g.grad(x)
        return total

    def objective(self, x):
        """Exact mixture objective; ``+inf`` off the domain of f."""
        with np.errstate(invalid="ignore"):
            return self.f_value(x) + self.g_value(x)


class ProductDistribution(ComponentDistribution):
    """Uniform law on a product index set ``K1 x K2``.

    Component ``k = i * n2 + j`` pairs ``f_parts[i]`` with ``g_parts[j]``. Pairs
    are assembled on demand so memory stays linear in ``n1 + n2``.
    """

    def __init__(self, f_parts, g_parts, f_mixture=None, g_mixture=None, dim=None):
        self.f_parts = tuple(f_parts)
        self.g_parts = tuple(g_parts)
        n1, n2 = len(self.f_parts), len(self.g_parts)
        if n1 == 0 or n2 == 0:
            raise EmptyDistributionError("both factors of a product law must be non-empty")
        self.shape = (n1, n2)
        self.weights = np.full(n1 * n2, 1.0 / (n1 * n2))
        self.weights.setflags(write=False)
        cum = np.arange(1, n1 * n2 + 1) / (n1 * n2)
        cum[-1] = 1.0
        self.cumulative_weights = cum
        self.beta = max(g.lipschitz for g in self.g_parts)
        self.f_mixture = f_mixture
        self.g_mixture = g_mixture
        self.dim = dim
        self._cache = {}

    def _assemble(self, k):
        i, j = divmod(int(k), self.shape[1])
        return ComponentPair(self.f_parts[i], self.g_parts[j], label=f"({i},{j})")

    @property
    def pairs(self):
        return [self.pair(k) for k in range(self.n_components)]

    def pair(self, k):
        if not 0 <= k < self.n_components:
            raise IndexError(k)
        k = int(k)
        pair = self._cache.get(k)
        if pair is None:
            if len(self._cache) >= 4096:
                self._cache.clear()
            pair = self._cache[k] = self._assemble(k)
        return pair

    def f_value(self, x):
        x = np.asarray(x, dtype=float)
        return sum(f.value(x) for f in self.f_parts) / self.shape[0]

    def g_value(self, x):
        x = np.asarray(x, dtype=float)
        return sum(g.value(x) for g in self.g_parts) / self.shape[1]

    def g_grad(self, x):
        x = np.asarray(x, dtype=float)
        return sum(g.grad(x) for g in self.g_parts) / self.shape[1]


def make_finite_distribution(pairs: Sequence[ComponentPair], weights, **kwargs):
    """Build a finite law from component pairs and nonnegative weights.

    Weights are normalized to sum to one.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDistributionError("at least one component pair is required")
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != len(pairs):
        raise ValidationError(f"{len(pairs)} pairs but {w.size} weights")
    if not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite")
    if np.any(w < 0):
        raise NegativeWeightError(f"negative weight {w[w < 0][0]!r}")
    total = w.sum()
    if total <= 0:
        raise ZeroWeightError("weights sum to zero")
    return ComponentDistribution(pairs, w / total, **kwargs)


# ---------------------------------------------------------------------------
# Step schedules

ROBBINS_MONRO = "robbins_monro"
SQUARE_SUM_DIVERGES = "square_sum_diverges"
SUM_CONVERGES = "sum_converges"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``gamma_n``.

    ``power``: ``gamma0 / (n + 1) ** p``; ``constant``: ``gamma0``;
    ``explicit``: the listed values.
    """

    family: str = "power"
    gamma0: float = 1.0
    p: float = 1.0
    values: tuple = ()

    @classmethod
    def power(cls, gamma0, p):
        return cls("power", float(gamma0), float(p))

    @classmethod
    def constant(cls, gamma):
        return cls("constant", float(gamma), 0.0)

    @classmethod
    def explicit(cls, values):
        return cls("explicit", values=tuple(float(v) for v in values))

    def check(self):
        if self.family in ("power", "constant"):
            if not self.gamma0 > 0 or not np.isfinite(self.gamma0):
                raise ScheduleError(f"gamma0 must be positive, got {self.gamma0}")
            if self.family == "power" and (not self.p > 0 or not np.isfinite(self.p)):
                raise ScheduleError(f"exponent p must be positive, got {self.p}")
        elif self.family == "explicit":
            if not self.values:
                raise ScheduleError("explicit schedule is empty")
            if any(not (v > 0 and np.isfinite(v)) for v in self.values):
                raise ScheduleError("explicit step sizes must be positive and finite")
        else:
            raise ScheduleError(f"unknown schedule family {self.family!r}")

    def gammas(self, start, stop):
        """Step sizes for ``n = start, ..., stop - 1`` as an array."""
        if start < 0:
            raise ScheduleError("step index must be nonnegative")
        if self.family == "power":
            n = np.arange(start, stop, dtype=float)
            return self.gamma0 / (n + 1.0) ** self.p
        if self.family == "constant":
            return np.full(max(stop - start, 0), self.gamma0)
        if stop > len(self.values):
            raise ScheduleError(
                f"explicit schedule has {len(self.values)} values, index {stop - 1} requested")
        return np.asarray(self.values[start:stop], dtype=float)

    def sup(self):
        if self.family in ("power", "constant"):
            return self.gamma0
        return max(self.values)


def validate_schedule(s: StepSchedule) -> str:
    """Classify a schedule against the Robbins-Monro conditions.

    Power schedules are classified analytically from the exponent; explicit
    lists are finite prefixes and cannot be classified.
    """
    s.check()
    if s.family == "constant":
        return SQUARE_SUM_DIVERGES
    if s.family == "explicit":
        warnings.warn("explicit step lists cannot be classified; tail behaviour unknown",
                      stacklevel=2)
        return UNKNOWN
    if s.p > 1.0:
        return SUM_CONVERGES
    if s.p <= 0.5:
        return SQUARE_SUM_DIVERGES
    return ROBBINS_MONRO


def step(s: StepSchedule, n: int) -> float:
    if n < 0:
        raise ScheduleError("step index must be nonnegative")
    s.check()
    return float(s.gammas(n, n + 1)[0])


# ---------------------------------------------------------------------------
# Randomness

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Position in a counter-based random stream.

    The draw at ``counter`` is a pure function of ``(seed, stream_id, counter)``
    (Philox-4x64 keyed by ``(seed, stream_id)``), so index draws can never
    depend on solver state.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _MASK64:
                raise ValidationError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def advanced(self, n):
        return replace(self, counter=self.counter + n)


def _raw(seed, stream_id, counter, n):
    block, offset = divmod(int(counter), 4)
    gen = np.random.Philox(key=[int(seed), int(stream_id)], counter=block)
    return gen.random_raw(n + offset)[offset:]


def draw_uniforms(rng: RngStream, n: int):
    """``n`` uniforms on [0, 1) and the advanced stream."""
    raw = _raw(rng.seed, rng.stream_id, rng.counter, n)
    return (raw >> np.uint64(11)).astype(float) * 2.0 ** -53, rng.advanced(n)


def _indices_from_uniforms(dist, u):
    idx = np.searchsorted(dist.cumulative_weights, u, side="right")
    return np.minimum(idx, dist.n_components - 1)


def sample_indices(dist: ComponentDistribution, rng: RngStream, n: int):
    """``n`` consecutive component indices and the advanced stream."""
    u, rng2 = draw_uniforms(rng, n)
    return _indices_from_uniforms(dist, u), rng2


def sample_component(dist: ComponentDistribution, rng: RngStream):
    """One component index drawn with probability ``dist.weights[k]``."""
    idx, rng2 = sample_indices(dist, rng, 1)
    return int(idx[0]), rng2
