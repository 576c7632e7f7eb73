"""Privacy amplification by shuffling and the GHR-based shuffle protocol.

The amplification bound turns ``n`` shuffled ``eps_l``-LDP messages into a
central ``(eps, delta)`` guarantee. The protocol inverts a slightly looser
closed form of that bound to pick the largest usable ``eps_l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from shufflepriv.errors import AmplificationInvalidError, CalibrationError, InvalidParameterError
from shufflepriv.ghr import (
    DEFAULT_SAFETY_CONST,
    GhrAnalyserParams,
    GhrScheme,
    GhrVerdict,
    ghr_params,
    required_n_ldp,
    run_ghr_protocol,
)
from shufflepriv.probcore import DiscreteDistribution, RandomSource
from shufflepriv.shuffle_ut import RobustProfile

BISECTION_TOL = 1e-10
BISECTION_MAX_ITER = 200
_EPS_L_FLOOR = 1e-12
_N_SEARCH_CAP = 2**48


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")


def validity_gate(n: float, delta: float) -> float:
    """Largest local epsilon the amplification bound accepts: ``ln(n / (16 ln(2/delta)))``."""
    ratio = n / (16 * math.log(2 / delta))
    return math.log(ratio) if ratio > 0 else -math.inf


def amplified_epsilon(eps_l: float, n: float, delta: float) -> float:
    """Central epsilon after shuffling ``n`` messages of an ``eps_l``-LDP randomiser."""
    _check_delta(delta)
    if not n > 0 or not eps_l >= 0:
        raise InvalidParameterError("need n > 0 and eps_l >= 0")
    gate = validity_gate(n, delta)
    if eps_l > gate:
        raise AmplificationInvalidError(
            f"eps_l={eps_l:.6g} exceeds the validity bound {gate:.6g} at n={n}, delta={delta}", gate)
    e = math.exp(eps_l)
    shrink = math.tanh(eps_l / 2)  # (e - 1) / (e + 1)
    return math.log1p(8 * shrink * (math.sqrt(e * math.log(4 / delta) / n) + e / n))


def inversion_rhs(eps_l: float, n: float, delta: float) -> float:
    """``ln(1 + 16 e^(eps_l/2) (e^eps_l - 1)/(e^eps_l + 1) sqrt(ln(4/delta)/n))``."""
    return math.log1p(16 * math.exp(eps_l / 2) * math.tanh(eps_l / 2) * math.sqrt(math.log(4 / delta) / n))


def invert_amplification(eps_target: float, n: float, delta: float) -> float:
    """Local epsilon whose shuffled guarantee is ``eps_target``; raises if the bound cannot apply."""
    _check_delta(delta)
    if not eps_target > 0:
        raise InvalidParameterError(f"eps_target must be positive, got {eps_target}")
    if not n > 0:
        raise InvalidParameterError("n must be positive")
    gate = validity_gate(n, delta)
    lo, hi = _EPS_L_FLOOR, math.log(n) if n > 1 else 0.0
    if hi <= lo or inversion_rhs(hi, n, delta) < eps_target:
        raise AmplificationInvalidError(f"n={n} too small to reach eps={eps_target}", gate)
    if inversion_rhs(lo, n, delta) >= eps_target:
        raise AmplificationInvalidError(f"eps={eps_target} needs eps_l below {lo}", gate)
    # run to machine precision; well inside the 1e-10 bracket tolerance
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if inversion_rhs(mid, n, delta) < eps_target:
            lo = mid
        else:
            hi = mid
    if hi - lo > BISECTION_TOL:
        raise CalibrationError("bisection for eps_l did not converge")
    eps_l = 0.5 * (lo + hi)
    if eps_l > gate:
        raise AmplificationInvalidError(
            f"eps_l={eps_l:.6g} violates the validity bound {gate:.6g}; n={n} is too small", gate)
    if amplified_epsilon(eps_l, n, delta) > eps_target:
        raise AmplificationInvalidError(f"amplified epsilon exceeds {eps_target} at n={n}", gate)
    return eps_l


@dataclass(frozen=True)
class Protocol2Setup:
    k: int
    alpha: float
    eps: float
    delta: float
    n: float
    eps_l: float
    analyser: GhrAnalyserParams

    @property
    def scheme(self) -> GhrScheme:
        return self.analyser.scheme

    @property
    def realized_eps_bound(self) -> float:
        return amplified_epsilon(self.eps_l, self.n, self.delta)


@lru_cache(maxsize=64)
def calibrate_protocol2(k: int, alpha: float, eps: float, delta: float, n: float,
                        eps_l: float | None = None) -> Protocol2Setup:
    """Resolve ``eps_l`` from ``(eps, n, delta)`` (unless forced) and build the analyser."""
    if eps_l is None:
        eps_l = invert_amplification(eps, n, delta)
    scheme = ghr_params(k, eps_l)
    return Protocol2Setup(k, alpha, eps, delta, n, eps_l, GhrAnalyserParams.build(scheme, alpha))


@dataclass(frozen=True)
class Protocol2Result:
    verdict: GhrVerdict
    n_users: int
    eps_l: float
    realized_eps_bound: float


def run_protocol2(p: DiscreteDistribution, k: int, alpha: float, eps: float, delta: float,
                  n: float, rng: RandomSource) -> Protocol2Result:
    setup = calibrate_protocol2(k, alpha, eps, delta, n)
    verdict, n_users = run_ghr_protocol(p, setup.analyser, n, rng)
    return Protocol2Result(verdict, n_users, setup.eps_l, setup.realized_eps_bound)


def _protocol2_ok(n: int, k: int, alpha: float, eps: float, delta: float, safety_const: float) -> bool:
    try:
        eps_l = invert_amplification(eps, n, delta)
    except AmplificationInvalidError:
        return False
    return n >= required_n_ldp(k, alpha, eps_l, safety_const)


def required_n_protocol2(k: int, alpha: float, eps: float, delta: float,
                         safety_const: float = DEFAULT_SAFETY_CONST) -> int:
    """Smallest n for which amplification applies and the LDP tester's requirement at
    ``eps_l(n)`` is met. Doubling search followed by integer bisection."""
    if k < 2 or not 0 < alpha <= 1 or not eps > 0:
        raise InvalidParameterError("need k >= 2, alpha in (0, 1], eps > 0")
    _check_delta(delta)
    hi = 1
    while not _protocol2_ok(hi, k, alpha, eps, delta, safety_const):
        hi *= 2
        if hi > _N_SEARCH_CAP:
            raise CalibrationError(f"no n below {_N_SEARCH_CAP} satisfies the protocol requirements")
    lo = hi // 2  # fails (or is 0)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _protocol2_ok(mid, k, alpha, eps, delta, safety_const):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class AmplifiedRobustProfile(RobustProfile):
    eps_factor: float = 1.0

    def amplified_at(self, gamma: float, eps_l: float, n: float) -> float:
        """Amplified epsilon when only ``gamma * n`` users are honest, at ``delta(gamma) = 4^(1-gamma) delta^gamma``."""
        self(gamma)
        return amplified_epsilon(eps_l, gamma * n, 4 ** (1 - gamma) * self.delta**gamma)


def robust_profile_p2(eps: float, delta: float) -> AmplifiedRobustProfile:
    if not eps > 0:
        raise InvalidParameterError("eps must be positive")
    _check_delta(delta)
    return AmplifiedRobustProfile(eps, delta)
