"""Probability primitives over finite domains.

Symbols are 0-based throughout: a distribution over ``k`` symbols is indexed
``0..k-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from shufflepriv.errors import InvalidParameterError

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability vector over ``{0, ..., k-1}``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidParameterError("probs must be a non-empty 1-d vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidParameterError("probabilities must be finite and non-negative")
        total = math.fsum(probs)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise InvalidParameterError(f"probabilities sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return int(self.probs.size)

    @classmethod
    def uniform(cls, k: int) -> DiscreteDistribution:
        if k < 1:
            raise InvalidParameterError("k must be positive")
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def point_mass(cls, k: int, x: int) -> DiscreteDistribution:
        if not 0 <= x < k:
            raise InvalidParameterError(f"symbol {x} outside [0, {k})")
        probs = np.zeros(k)
        probs[x] = 1.0
        return cls(probs)

    @classmethod
    def from_weights(cls, weights: Sequence[float], tol: float = NORMALIZATION_TOL) -> DiscreteDistribution:
        """Build from weights that must already sum to 1 within ``tol``; renormalizes explicitly."""
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidParameterError("weights must be a non-empty vector of finite non-negative values")
        total = math.fsum(w)
        if abs(total - 1.0) > tol:
            raise InvalidParameterError(f"weights sum to {total!r}, outside 1 +/- {tol}")
        return cls(w / total)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.k == other.k and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass
class Histogram:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or (counts.size and (counts.min() < 0)):
            raise InvalidParameterError("counts must be a 1-d vector of non-negative integers")
        self.counts = counts.astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def k(self) -> int:
        return int(self.counts.size)

    @classmethod
    def from_symbols(cls, symbols, k: int) -> Histogram:
        symbols = np.asarray(symbols, dtype=np.int64)
        return cls(np.bincount(symbols, minlength=k)[:k])


@dataclass
class RandomSource:
    """Seeded random stream; ``(seed, stream_id)`` fully determines the draws.

    ``path`` extends the stream id for nested sub-streams (e.g. repeated runs
    inside one trial).
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise InvalidParameterError("seed and stream_id must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, *self.path))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> RandomSource:
        return RandomSource(self.seed, self.stream_id, (*self.path, index))


def _check_rate(rate) -> None:
    arr = np.asarray(rate, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidParameterError(f"Poisson rate must be finite and non-negative, got {rate!r}")


def sample_poisson(rate: float, rng: RandomSource, size=None):
    """Draw from Poi(rate). A zero rate always yields 0."""
    _check_rate(rate)
    out = rng.gen.poisson(rate, size=size)
    return int(out) if size is None else out


def sample_categorical(d: DiscreteDistribution, rng: RandomSource, size=None):
    """Draw symbols i.i.d. from ``d``."""
    out = rng.gen.choice(d.k, size=size, p=d.probs)
    return int(out) if size is None else out


def _same_k(p: DiscreteDistribution, q: DiscreteDistribution) -> None:
    if p.k != q.k:
        raise InvalidParameterError(f"domain sizes differ: {p.k} vs {q.k}")


def tv_distance(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    _same_k(p, q)
    return 0.5 * math.fsum(np.abs(p.probs - q.probs))


def l2_distance_sq(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    _same_k(p, q)
    return math.fsum((p.probs - q.probs) ** 2)


def make_far_distribution(k: int, alpha_prime: float) -> DiscreteDistribution:
    """Paninski-style perturbation of the uniform distribution at TV distance ``alpha_prime``.

    Symbols 0, 2, 4, ... get ``(1 + 2a)/k`` and symbols 1, 3, ... get ``(1 - 2a)/k``.
    """
    if k < 2 or k % 2:
        raise InvalidParameterError(f"k must be a positive even integer, got {k}")
    if not 0 < alpha_prime <= 0.5:
        raise InvalidParameterError(f"alpha_prime must lie in (0, 1/2], got {alpha_prime}")
    probs = np.empty(k)
    probs[0::2] = (1 + 2 * alpha_prime) / k
    probs[1::2] = (1 - 2 * alpha_prime) / k
    return DiscreteDistribution(probs)
