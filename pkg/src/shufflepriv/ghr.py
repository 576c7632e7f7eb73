"""Generalised Hadamard Response randomiser and the l2 identity tester built on it.

Each input ``x`` owns a set ``C_x`` of ``s = b/2`` outputs: the +1 entries of a
non-constant Sylvester row inside one of ``a`` diagonal blocks of size ``b``.
Outputs in ``C_x`` are ``e^eps`` times as likely as the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from shufflepriv.errors import InvalidParameterError, MalformedTranscriptError
from shufflepriv.probcore import DiscreteDistribution, Histogram, RandomSource, sample_categorical, sample_poisson

UNIFORM = "uniform"
NOT_UNIFORM = "not uniform"
MATCH = "match"
FAR = "far"

DEFAULT_SAFETY_CONST = 8.0

# relative slack when comparing e^eps against powers of two, so that
# eps = ln 2 lands on a = 2 despite rounding in exp/log
_POW2_SLACK = 1e-12


def sylvester_plus(b: int) -> np.ndarray:
    """Boolean ``b x b`` mask of the +1 entries of the Sylvester Hadamard matrix H_b."""
    r = np.arange(b, dtype=np.uint64)
    return np.bitwise_count(r[:, None] & r[None, :]) % 2 == 0


@dataclass(frozen=True)
class GhrScheme:
    k: int
    eps_l: float
    a: int
    b: int

    @property
    def K(self) -> int:
        return self.a * self.b

    @property
    def s(self) -> int:
        return self.b // 2

    @property
    def message_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.K)))

    def row_map(self, x):
        """``x -> (copy, row)``; copies are filled in order, each skipping its all-ones row 0."""
        x = np.asarray(x)
        return x // (self.b - 1), 1 + x % (self.b - 1)

    @property
    def in_set_probability(self) -> float:
        """Probability that the output falls in ``C_x``: ``s e^eps / (s e^eps + K - s)``."""
        return 1.0 / (1.0 + (self.K - self.s) * math.exp(-self.eps_l) / self.s)

    @cached_property
    def _plus(self) -> np.ndarray:
        return sylvester_plus(self.b)


def ghr_params(k: int, eps_l: float) -> GhrScheme:
    if k < 2:
        raise InvalidParameterError(f"k must be at least 2, got {k}")
    if not (math.isfinite(eps_l) and eps_l > 0):
        raise InvalidParameterError(f"eps_l must be positive, got {eps_l}")
    limit = 2 * k if eps_l >= math.log(2 * k) else min(math.exp(eps_l), 2 * k)
    a = 1
    while 2 * a <= limit * (1 + _POW2_SLACK):
        a *= 2
    b = 1
    while a * b < k + a:  # b >= k/a + 1
        b *= 2
    return GhrScheme(k=k, eps_l=eps_l, a=a, b=b)


def _check_x(scheme: GhrScheme, x) -> None:
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() >= scheme.k):
        raise InvalidParameterError(f"input symbol outside [0, {scheme.k})")


def row_membership(scheme: GhrScheme, x, y):
    """Whether output ``y`` lies in ``C_x`` (vectorised over ``x`` and ``y``)."""
    _check_x(scheme, x)
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= scheme.K):
        raise InvalidParameterError(f"output symbol outside [0, {scheme.K})")
    copy, row = scheme.row_map(x)
    block, col = np.divmod(y, scheme.b)
    same_block = block == copy
    even = np.bitwise_count(np.asarray(row, dtype=np.uint64) & np.asarray(col, dtype=np.uint64)) % 2 == 0
    out = same_block & even
    return bool(out) if out.ndim == 0 else out


def membership_row(scheme: GhrScheme, x: int) -> np.ndarray:
    return row_membership(scheme, np.full(scheme.K, x), np.arange(scheme.K))


def membership_matrix(scheme: GhrScheme) -> np.ndarray:
    """Boolean ``k x K`` matrix with ``[x, y] = (y in C_x)``."""
    copy, row = scheme.row_map(np.arange(scheme.k))
    m = np.zeros((scheme.k, scheme.K), dtype=bool)
    for x in range(scheme.k):
        start = copy[x] * scheme.b
        m[x, start:start + scheme.b] = scheme._plus[row[x]]
    return m


def _row_from_mask(scheme: GhrScheme, mask: np.ndarray) -> np.ndarray:
    return (np.expm1(scheme.eps_l) * mask + 1.0) / (scheme.s * math.exp(scheme.eps_l) + scheme.K - scheme.s)


def transition_matrix(scheme: GhrScheme) -> np.ndarray:
    """Exact ``k x K`` channel ``P[R(x) = y]``."""
    return _row_from_mask(scheme, membership_matrix(scheme))


def ghr_randomise_batch(scheme: GhrScheme, xs, rng: RandomSource) -> np.ndarray:
    """Privatise every entry of ``xs``.

    With probability ``in_set_probability`` the output is uniform on ``C_x``,
    otherwise uniform on its complement; both by rejection sampling.
    """
    xs = np.asarray(xs, dtype=np.int64)
    _check_x(scheme, xs)
    gen = rng.gen
    b, K = scheme.b, scheme.K
    copy, row = scheme.row_map(xs)
    row = row.astype(np.uint64)
    inside = gen.random(xs.size) < scheme.in_set_probability
    ys = np.empty(xs.size, dtype=np.int64)

    pending = np.flatnonzero(inside)
    while pending.size:
        col = gen.integers(0, b, size=pending.size)
        ok = np.bitwise_count(row[pending] & col.astype(np.uint64)) % 2 == 0
        ys[pending[ok]] = copy[pending[ok]] * b + col[ok]
        pending = pending[~ok]

    pending = np.flatnonzero(~inside)
    while pending.size:
        y = gen.integers(0, K, size=pending.size)
        block, col = np.divmod(y, b)
        member = (block == copy[pending]) & (np.bitwise_count(row[pending] & col.astype(np.uint64)) % 2 == 0)
        ok = ~member
        ys[pending[ok]] = y[ok]
        pending = pending[~ok]
    return ys


def ghr_randomise(scheme: GhrScheme, x: int, rng: RandomSource) -> int:
    return int(ghr_randomise_batch(scheme, np.array([x]), rng)[0])


def induced_distribution(scheme: GhrScheme, p: DiscreteDistribution) -> DiscreteDistribution:
    """Distribution of ``R(x)`` for ``x ~ p``."""
    if p.k != scheme.k:
        raise InvalidParameterError("distribution and scheme disagree on k")
    copy, row = scheme.row_map(np.arange(scheme.k))
    weights = np.zeros((scheme.a, scheme.b))
    weights[copy, row] = p.probs
    signal = (weights @ scheme._plus).ravel()
    denom = scheme.s * math.exp(scheme.eps_l) + scheme.K - scheme.s
    q = (np.expm1(scheme.eps_l) * signal + 1.0) / denom
    return DiscreteDistribution(q)


def distance_scale(scheme: GhrScheme) -> float:
    """``(e^eps - 1) / (e^eps + K/s - 1)``, the contraction of l2 distances under the channel."""
    e = math.exp(scheme.eps_l)
    return (e - 1) / (e + scheme.K / scheme.s - 1)


def gamma_l2_sq(scheme: GhrScheme, alpha: float) -> float:
    return 2 * alpha**2 / (scheme.s * scheme.k) * distance_scale(scheme) ** 2


@dataclass(frozen=True)
class GhrAnalyserParams:
    scheme: GhrScheme
    alpha: float
    gamma_l2_sq: float
    q_star: DiscreteDistribution

    @classmethod
    def build(cls, scheme: GhrScheme, alpha: float) -> GhrAnalyserParams:
        if not 0 < alpha <= 1:
            raise InvalidParameterError("alpha must lie in (0, 1]")
        q_star = induced_distribution(scheme, DiscreteDistribution.uniform(scheme.k))
        return cls(scheme, alpha, gamma_l2_sq(scheme, alpha), q_star)


def l2_statistic(counts: Histogram, n: float, q_star: DiscreteDistribution) -> float:
    """``sum_y (M_y - n q*_y)^2 - M_y``; unbiased for ``n^2 ||q - q*||^2`` under Poissonised counts."""
    if counts.k != q_star.k:
        raise InvalidParameterError("histogram and reference disagree on domain size")
    m = counts.counts.astype(float)
    return math.fsum((m - n * q_star.probs) ** 2 - m)


def l2_identity_test(counts: Histogram, n: float, q_star: DiscreteDistribution, gamma_l2_sq: float) -> str:
    if not gamma_l2_sq > 0:
        raise InvalidParameterError("gamma_l2_sq must be positive")
    return FAR if l2_statistic(counts, n, q_star) > n**2 * gamma_l2_sq / 2 else MATCH


@dataclass(frozen=True)
class GhrVerdict:
    verdict: str
    t: float
    threshold: float

    @property
    def rejects(self) -> bool:
        return self.verdict == NOT_UNIFORM


def analyse_ghr(messages, params: GhrAnalyserParams, n: float) -> GhrVerdict:
    messages = np.asarray(messages, dtype=np.int64)
    K = params.scheme.K
    if messages.size and (messages.min() < 0 or messages.max() >= K):
        raise MalformedTranscriptError(f"message outside [0, {K})")
    counts = Histogram.from_symbols(messages, K)
    t = l2_statistic(counts, n, params.q_star)
    threshold = n**2 * params.gamma_l2_sq / 2
    return GhrVerdict(NOT_UNIFORM if t > threshold else UNIFORM, t, threshold)


def run_ghr_protocol(p: DiscreteDistribution, params: GhrAnalyserParams, n: float,
                     rng: RandomSource) -> tuple[GhrVerdict, int]:
    """Poissonised run: ``N ~ Poi(n)`` users each send one GHR message; messages are shuffled."""
    if p.k != params.scheme.k:
        raise InvalidParameterError("distribution and scheme disagree on k")
    n_users = sample_poisson(n, rng)
    xs = sample_categorical(p, rng, size=n_users)
    ys = ghr_randomise_batch(params.scheme, xs, rng)
    ys = ys[rng.gen.permutation(ys.size)]
    return analyse_ghr(ys, params, n), n_users


def required_n_ldp(k: int, alpha: float, eps_l: float, safety_const: float = DEFAULT_SAFETY_CONST) -> int:
    if k < 1 or not alpha > 0 or not eps_l > 0 or not safety_const > 0:
        raise InvalidParameterError("k, alpha, eps_l and safety_const must be positive")
    a2 = alpha**2
    expm1 = math.expm1(eps_l)
    terms = k**1.5 / (a2 * expm1**2) + k**1.5 / (a2 * math.exp(eps_l)) + math.sqrt(k) / a2
    return max(1, math.ceil(safety_const * terms))
