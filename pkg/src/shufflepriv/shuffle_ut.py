"""Poisson-noise shuffle protocol for uniformity testing.

Every user sends one informative message ``(j, 1{x == j})`` per symbol ``j``
plus ``Poi(lam / N)`` noise messages ``(j, Bernoulli(1/2))`` per symbol. The
analyser counts the ``(j, 1)`` messages and thresholds a centred,
bias-corrected collision statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from shufflepriv.errors import CalibrationError, InvalidParameterError, MalformedTranscriptError
from shufflepriv.probcore import (
    DiscreteDistribution,
    Histogram,
    RandomSource,
    l2_distance_sq,
    sample_categorical,
    sample_poisson,
)

UNIFORM = "uniform"
NOT_UNIFORM = "not uniform"

# Constant C in the sufficient condition n >= C * k^(3/4) * sqrt(mu) / alpha.
BOUND_CONSTANT = 40.0


def _check_eps_delta(eps: float, delta: float) -> None:
    if not (math.isfinite(eps) and eps > 0):
        raise InvalidParameterError(f"eps must be positive, got {eps}")
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")


def calibrate_lambda(eps: float, delta: float) -> float:
    """Total noise rate per symbol: ``64 ln(2/delta) / (1 - e^-eps)^2``."""
    _check_eps_delta(eps, delta)
    return 64.0 * math.log(2.0 / delta) / (-math.expm1(-eps)) ** 2


@dataclass(frozen=True)
class UtParams:
    k: int
    n: float
    alpha: float
    eps: float
    delta: float
    lam: float

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParameterError("k must be positive")
        if not self.n > 0:
            raise InvalidParameterError("n must be positive")
        if not 0 < self.alpha <= 1:
            raise InvalidParameterError("alpha must lie in (0, 1]")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvalidParameterError("lam must be finite and non-negative")

    @property
    def mu(self) -> float:
        return self.n / self.k + self.lam / 2

    @property
    def tau(self) -> float:
        return 2 * self.n * self.alpha**2

    @classmethod
    def calibrated(cls, k: int, alpha: float, eps: float, delta: float,
                   n: float | None = None, lam: float | None = None) -> UtParams:
        """Parameters with ``lam`` from :func:`calibrate_lambda` and ``n`` from the planner,
        unless overridden."""
        if lam is None:
            lam = calibrate_lambda(eps, delta)
        if n is None:
            n = required_n_protocol1(k, alpha, eps, delta, lam=lam)
        return cls(k=k, n=n, alpha=alpha, eps=eps, delta=delta, lam=lam)


class MessagePair(NamedTuple):
    index: int
    bit: int


@dataclass
class UtTranscript:
    """Shuffled messages as parallel ``indices``/``bits`` arrays, plus the realised N."""

    indices: np.ndarray
    bits: np.ndarray
    n_users: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.bits = np.asarray(self.bits, dtype=np.int8)
        if self.indices.shape != self.bits.shape or self.indices.ndim != 1:
            raise MalformedTranscriptError("indices and bits must be 1-d arrays of equal length")
        if self.n_users < 0:
            raise MalformedTranscriptError("n_users must be non-negative")

    def __len__(self):
        return int(self.indices.size)

    @property
    def messages(self) -> list[MessagePair]:
        return [MessagePair(int(j), int(b)) for j, b in zip(self.indices, self.bits)]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, int]], n_users: int) -> UtTranscript:
        if len(pairs) == 0:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int8), n_users)
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], n_users)


def randomise_ut_batch(xs: np.ndarray, params: UtParams, n_users: int,
                       rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    """Run the randomiser for every entry of ``xs``; returns concatenated (indices, bits).

    Each user's noise counts are independent ``Poi(lam / n_users)`` draws.
    """
    if n_users < 1:
        raise InvalidParameterError("n_users must be at least 1")
    xs = np.asarray(xs, dtype=np.int64)
    k = params.k
    if xs.size and (xs.min() < 0 or xs.max() >= k):
        raise InvalidParameterError(f"inputs must lie in [0, {k})")
    symbols = np.arange(k, dtype=np.int64)
    info_idx = np.tile(symbols, xs.size)
    info_bits = (info_idx == np.repeat(xs, k)).astype(np.int8)
    noise_counts = sample_poisson(params.lam / n_users, rng, size=(xs.size, k))
    noise_idx = np.repeat(info_idx, noise_counts.ravel())
    noise_bits = rng.gen.integers(0, 2, size=noise_idx.size, dtype=np.int8)
    return np.concatenate([info_idx, noise_idx]), np.concatenate([info_bits, noise_bits])


def randomise_ut(x: int, params: UtParams, n_users: int, rng: RandomSource) -> list[MessagePair]:
    idx, bits = randomise_ut_batch(np.array([x]), params, n_users, rng)
    return [MessagePair(int(j), int(b)) for j, b in zip(idx, bits)]


def shuffle(tuples: Sequence[Sequence[tuple[int, int]]], rng: RandomSource) -> UtTranscript:
    """Concatenate all users' messages and apply a uniformly random permutation."""
    flat = [m for user in tuples for m in user]
    t = UtTranscript.from_pairs(flat, n_users=len(tuples))
    return shuffle_arrays(t.indices, t.bits, t.n_users, rng)


def shuffle_arrays(indices: np.ndarray, bits: np.ndarray, n_users: int,
                   rng: RandomSource) -> UtTranscript:
    perm = rng.gen.permutation(len(indices))
    return UtTranscript(np.asarray(indices)[perm], np.asarray(bits)[perm], n_users)


def z_from_counts(counts, n: float, mu: float) -> float:
    """``(k/n) sum_j ((N_j - mu)^2 - N_j)`` with ``k = len(counts)``."""
    c = np.asarray(counts, dtype=float)
    return c.size / n * math.fsum((c - mu) ** 2 - c)


def statistic_z(counts_n1: Histogram, params: UtParams) -> float:
    if counts_n1.k != params.k:
        raise InvalidParameterError(f"histogram has {counts_n1.k} bins, expected {params.k}")
    return z_from_counts(counts_n1.counts, params.n, params.mu)


@dataclass(frozen=True)
class UtVerdict:
    verdict: str
    z: float
    noise_scales: np.ndarray

    @property
    def rejects(self) -> bool:
        return self.verdict == NOT_UNIFORM


def ones_histogram(t: UtTranscript, k: int) -> Histogram:
    """``N_j``: number of ``(j, 1)`` messages in the transcript."""
    if len(t) and (t.indices.min() < 0 or t.indices.max() >= k):
        raise MalformedTranscriptError(f"message index outside [0, {k})")
    return Histogram(np.bincount(t.indices, weights=t.bits, minlength=k).astype(np.int64))


def analyse_ut(t: UtTranscript, params: UtParams) -> UtVerdict:
    k = params.k
    ones = ones_histogram(t, k)
    per_index = np.bincount(t.indices, minlength=k)
    noise_scales = per_index - t.n_users
    if t.n_users >= 1 and np.any(noise_scales < 0):
        raise MalformedTranscriptError("fewer messages for some index than users")
    z = statistic_z(ones, params)
    return UtVerdict(NOT_UNIFORM if z > params.tau else UNIFORM, z, noise_scales)


def poissonised_transcript(p: DiscreteDistribution, params: UtParams, rng: RandomSource) -> UtTranscript:
    """``N ~ Poi(n)`` users with inputs from ``p`` run the randomiser; the shuffled output."""
    if p.k != params.k:
        raise InvalidParameterError("distribution and parameters disagree on k")
    n_users = sample_poisson(params.n, rng)
    if n_users == 0:
        # degenerate draw: nobody sends anything, Z is computed from zero counts
        return UtTranscript(np.zeros(0, np.int64), np.zeros(0, np.int8), 0)
    xs = sample_categorical(p, rng, size=n_users)
    idx, bits = randomise_ut_batch(xs, params, n_users, rng)
    return shuffle_arrays(idx, bits, n_users, rng)


def run_protocol1(p: DiscreteDistribution, params: UtParams, rng: RandomSource) -> tuple[UtVerdict, int]:
    """One Poissonised end-to-end execution; returns the verdict and the realised N."""
    t = poissonised_transcript(p, params, rng)
    return analyse_ut(t, params), t.n_users


def expected_z(p: DiscreteDistribution, n: float, k: int) -> float:
    if p.k != k:
        raise InvalidParameterError("distribution and k disagree")
    return n * k * l2_distance_sq(p, DiscreteDistribution.uniform(k))


def var_z_exact(p: DiscreteDistribution, params: UtParams) -> float:
    """Exact variance of Z under Poissonised sampling and calibrated noise."""
    k, n = params.k, params.n
    shifted = p.probs + params.lam / (2 * n)
    dev_sq = (p.probs - 1.0 / k) ** 2
    return k**2 * math.fsum(2 * shifted**2 + 4 * n * shifted * dev_sq)


def var_z_upper_bound(p: DiscreteDistribution, params: UtParams) -> float:
    """Upper bound on Var[Z] expressed through E[Z]."""
    k, n, mu = params.k, params.n, params.mu
    ez = expected_z(p, n, k)
    return 2 * k**3 * mu**2 / n**2 + (2 * k / n + 4 * k**1.5 * mu / n) * ez + 4 * math.sqrt(k / n) * ez**1.5


def satisfies_sample_bound(n: float, k: int, alpha: float, lam: float) -> bool:
    """Whether ``n >= 40 k^(3/4) sqrt(n/k + lam/2) / alpha``."""
    return n * alpha >= BOUND_CONSTANT * k**0.75 * math.sqrt(n / k + lam / 2)


def required_n_protocol1(k: int, alpha: float, eps: float, delta: float,
                         lam: float | None = None) -> int:
    """Smallest integer n meeting the sufficient sample condition.

    Squaring gives ``n^2 - c^2 n / k - c^2 lam / 2 >= 0`` with
    ``c = 40 k^(3/4) / alpha``; the positive root is rounded up.
    """
    if k < 1 or not 0 < alpha <= 1:
        raise InvalidParameterError("need k >= 1 and alpha in (0, 1]")
    if lam is None:
        lam = calibrate_lambda(eps, delta)
    c2 = (BOUND_CONSTANT * k**0.75 / alpha) ** 2
    b = c2 / k
    root = (b + math.sqrt(b * b + 2 * c2 * lam)) / 2
    if not math.isfinite(root):
        raise CalibrationError("sample-size root is not finite")
    n = max(1, math.ceil(root))
    # absorb rounding in the closed form
    while not satisfies_sample_bound(n, k, alpha, lam):
        n += 1
    while n > 1 and satisfies_sample_bound(n - 1, k, alpha, lam):
        n -= 1
    return n


@dataclass(frozen=True)
class RobustProfile:
    """Curve ``gamma -> (eps_bar, delta_bar)`` for a gamma fraction of honest users."""

    eps: float
    delta: float
    eps_factor: float = 2.0

    def __call__(self, gamma: float) -> tuple[float, float]:
        if not 0 < gamma <= 1:
            raise InvalidParameterError(f"gamma must lie in (0, 1], got {gamma}")
        return self.eps_factor * self.eps, 4 * self.delta**gamma


def robust_profile_p1(eps: float, delta: float) -> RobustProfile:
    _check_eps_delta(eps, delta)
    return RobustProfile(eps, delta, eps_factor=2.0)
