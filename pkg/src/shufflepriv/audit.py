"""Numeric privacy diagnostics for discrete mechanisms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from shufflepriv.errors import InvalidParameterError, TruncationError

TAIL_BUDGET = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteRandomiser:
    """Channel with ``transition[x, y] = P[R(x) = y]``."""

    transition: np.ndarray

    def __post_init__(self):
        t = np.array(self.transition, dtype=float)
        if t.ndim != 2 or t.size == 0:
            raise InvalidParameterError("transition must be a non-empty 2-d matrix")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InvalidParameterError("transition entries must be finite and non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1) > 1e-12):
            raise InvalidParameterError("every row must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)

    @property
    def k(self) -> int:
        return self.transition.shape[0]

    @property
    def m(self) -> int:
        return self.transition.shape[1]


def randomized_response(k: int, eps: float) -> FiniteRandomiser:
    """k-ary randomized response: keep the input w.p. ``e^eps / (e^eps + k - 1)``."""
    e = math.exp(eps)
    t = np.full((k, k), 1.0 / (e + k - 1))
    np.fill_diagonal(t, e / (e + k - 1))
    return FiniteRandomiser(t)


def poisson_mechanism_threshold(eps: float, delta: float, sensitivity: int = 1) -> float:
    c = -math.expm1(-eps / sensitivity)
    return 16 * math.log(2 / delta) / c**2 + 2 * sensitivity / c


def poisson_mechanism_check(lam: float, eps: float, delta: float, sensitivity: int = 1) -> bool:
    """Whether adding ``Poi(lam)`` to a ``sensitivity``-bounded count meets the sufficient rate."""
    if not eps > 0 or not 0 < delta <= 1 or sensitivity < 1:
        raise InvalidParameterError("need eps > 0, delta in (0, 1], sensitivity >= 1")
    return lam >= poisson_mechanism_threshold(eps, delta, sensitivity)


def poisson_support_upper(rate: float) -> int:
    return math.ceil(rate + 20 * math.sqrt(rate) + 50)


def poisson_pmf(rate: float, shift: int = 0, upper: int | None = None) -> np.ndarray:
    """pmf of ``shift + Poi(rate)`` on ``0..upper``; checks the omitted upper tail."""
    if upper is None:
        upper = poisson_support_upper(rate) + shift
    support = np.arange(upper + 1)
    pmf = stats.poisson.pmf(support - shift, rate)
    tail = stats.poisson.sf(upper - shift, rate)
    if tail >= TAIL_BUDGET:
        raise TruncationError(f"upper tail {tail:.3g} beyond support {upper} exceeds {TAIL_BUDGET}")
    return pmf


def hockey_stick_delta(pmf_a, pmf_b, eps: float) -> float:
    """``sum_z max(a(z) - e^eps b(z), 0)``: the smallest delta for the pair in this direction."""
    a = np.asarray(pmf_a, dtype=float)
    b = np.asarray(pmf_b, dtype=float)
    for name, pmf in (("pmf_a", a), ("pmf_b", b)):
        missing = 1.0 - math.fsum(pmf)
        if missing > TAIL_BUDGET:
            raise TruncationError(f"{name} is missing {missing:.3g} mass (budget {TAIL_BUDGET})")
    size = max(a.size, b.size)
    a = np.pad(a, (0, size - a.size))
    b = np.pad(b, (0, size - b.size))
    with np.errstate(over="ignore"):
        scale = np.exp(eps)
    with np.errstate(invalid="ignore"):
        excess = np.where(b > 0, a - scale * b, a)
    return math.fsum(np.maximum(excess, 0.0))


def shifted_poisson_pair(rate: float) -> tuple[np.ndarray, np.ndarray]:
    """pmfs of ``1 + Poi(rate)`` and ``Poi(rate)`` on a shared truncated support."""
    upper = poisson_support_upper(rate) + 1
    return poisson_pmf(rate, shift=1, upper=upper), poisson_pmf(rate, upper=upper)


def poisson_noise_delta(rate: float, eps: float) -> float:
    """Worst direction hockey-stick delta for a unit-sensitivity count plus ``Poi(rate)``."""
    a, b = shifted_poisson_pair(rate)
    return max(hockey_stick_delta(a, b, eps), hockey_stick_delta(b, a, eps))


def max_ldp_ratio(r: FiniteRandomiser) -> float:
    """``max_y max_{x,x'} P[R(x)=y] / P[R(x')=y]`` over columns with positive mass."""
    t = r.transition
    col_max = t.max(axis=0)
    col_min = t.min(axis=0)
    live = col_max > 0
    if np.any(col_min[live] == 0):
        return math.inf
    return float(np.max(col_max[live] / col_min[live]))


def trace_h(r: FiniteRandomiser) -> float:
    """Channel trace statistic pairing inputs (0, 1), (2, 3), ...

    ``sum_y [sum_i (P[R(2i+1)=y] - P[R(2i)=y])^2] / sum_x P[R(x)=y]``, skipping
    columns with zero total mass.
    """
    if r.k % 2:
        raise InvalidParameterError(f"trace_h needs an even number of inputs, got {r.k}")
    t = r.transition
    diff_sq = ((t[1::2] - t[0::2]) ** 2).sum(axis=0)
    mass = t.sum(axis=0)
    live = mass > 0
    return math.fsum(diff_sq[live] / mass[live])


def trace_bound(eps: float, delta: float, ell_bits: int) -> float:
    return 2 * (math.exp(eps) + delta * 2.0**ell_bits)


def trace_bound_check(r: FiniteRandomiser, eps: float, delta: float, ell_bits: int) -> bool:
    if r.m > 2**ell_bits:
        raise InvalidParameterError(f"randomiser has {r.m} outputs, more than 2^{ell_bits}")
    return trace_h(r) <= trace_bound(eps, delta, ell_bits)
