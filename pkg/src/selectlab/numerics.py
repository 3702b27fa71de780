"""Scalar machinery: margin constants, the binomial distribution, and the
binary-bet regret decomposition everything else reduces to.

For a bet between branches with success probabilities ``u_L`` and ``u_R`` and a
policy that picks ``L`` with probability ``q``::

    V      = q * u_L + (1 - q) * u_R
    V*     = max(u_L, u_R)
    regret = 1 - V / V*  =  w * |u_L - u_R| / max(u_L, u_R)

where ``w`` is the mass on the suboptimal branch (``L`` wins ties).
On a fair bet (``u_R = 1 - u_L``) the factor becomes ``4m / (1 + 2m)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from selectlab.errors import DomainError

__all__ = [
    "BetOutcome",
    "MarginConstants",
    "bet_regret",
    "binom_cdf",
    "binom_cdf_table",
    "binom_median",
    "binom_pmf_table",
    "c_of_margin",
    "margin_constants",
    "wrong_mass_bound",
]


@dataclass(frozen=True)
class MarginConstants:
    gamma: float
    c_gamma: float
    t_gamma: float  # math.inf exactly when gamma == 1/2

    @property
    def t_is_infinite(self) -> bool:
        return math.isinf(self.t_gamma)


@dataclass(frozen=True)
class BetOutcome:
    value_pi: float
    value_star: float
    regret: float
    wrong_mass: float
    margin: float


def _check_gamma(gamma: float) -> None:
    if not (0.0 < gamma <= 0.5):
        raise DomainError(f"gamma must lie in (0, 1/2], got {gamma!r}")


def _check_prob(name: str, x: float) -> None:
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {x!r}")


def c_of_margin(m):
    """``4m / (1 + 2m)``; accepts scalars or arrays."""
    return 4.0 * m / (1.0 + 2.0 * m)


def margin_constants(gamma: float) -> MarginConstants:
    _check_gamma(gamma)
    c = c_of_margin(gamma)
    if gamma == 0.5:
        t = math.inf
    else:
        t = math.sqrt((1.0 + 2.0 * gamma) / (1.0 - 2.0 * gamma))
    return MarginConstants(gamma=gamma, c_gamma=c, t_gamma=t)


def bet_regret(u_L: float, u_R: float, q: float) -> BetOutcome:
    """Exact outcome of a binary bet placed with probability ``q`` on ``L``."""
    _check_prob("u_L", u_L)
    _check_prob("u_R", u_R)
    _check_prob("q", q)
    v_star = max(u_L, u_R)
    if v_star <= 0.0:
        raise DomainError("goal is trivially unsatisfiable: max(u_L, u_R) = 0")
    v_pi = q * u_L + (1.0 - q) * u_R
    # equal branches: every bet is optimal, so report an exact zero
    regret = 0.0 if u_L == u_R else max(0.0, 1.0 - v_pi / v_star)
    wrong = 1.0 - q if u_L >= u_R else q
    return BetOutcome(
        value_pi=v_pi,
        value_star=v_star,
        regret=regret,
        wrong_mass=wrong,
        margin=abs(u_L - u_R) / 2.0,
    )


def wrong_mass_bound(delta: float, gamma: float) -> float:
    """Largest wrong-branch mass compatible with regret ``delta`` at margin >= gamma."""
    if not (0.0 <= delta <= 1.0):
        raise DomainError(f"delta must lie in [0, 1], got {delta!r}")
    _check_gamma(gamma)
    return delta / c_of_margin(gamma)


def _check_binom(n: int, p: float) -> None:
    if n < 0 or int(n) != n:
        raise DomainError(f"n must be a non-negative integer, got {n!r}")
    _check_prob("p", p)


def binom_pmf_table(n: int, p: float) -> np.ndarray:
    """All ``n + 1`` binomial probabilities, evaluated in log space."""
    _check_binom(n, p)
    pmf = np.zeros(n + 1)
    if p == 0.0:
        pmf[0] = 1.0
        return pmf
    if p == 1.0:
        pmf[n] = 1.0
        return pmf
    log_p, log_q = math.log(p), math.log1p(-p)
    log_nf = math.lgamma(n + 1)
    for j in range(n + 1):
        log_term = (
            log_nf - math.lgamma(j + 1) - math.lgamma(n - j + 1) + j * log_p + (n - j) * log_q
        )
        pmf[j] = math.exp(log_term)
    return pmf


def binom_cdf_table(n: int, p: float) -> np.ndarray:
    """``F(0), ..., F(n)`` via compensated partial sums; ``F(n) = 1``."""
    pmf = binom_pmf_table(n, p)
    out = np.empty(n + 1)
    total = 0.0
    comp = 0.0
    # Neumaier summation
    for k in range(n + 1):
        x = float(pmf[k])
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        out[k] = min(1.0, total + comp)
    out[n] = 1.0
    return out


def binom_cdf(n: int, p: float, k: int) -> float:
    _check_binom(n, p)
    if k < 0 or k > n or int(k) != k:
        raise DomainError(f"k must be an integer in [0, {n}], got {k!r}")
    return float(binom_cdf_table(n, p)[k])


def binom_median(n: int, p: float) -> int:
    """Lower median ``min{k : F(k) >= 1/2}``."""
    cdf = binom_cdf_table(n, p)
    return int(np.argmax(cdf >= 0.5))
