"""Independent oracles shared by the test modules.

Nothing here calls the filtering or CDF code under test: binomial tables
come from exact rational enumeration and POMDP quantities from summing over
every latent trajectory.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def binom_cdf_fraction(n: int, p: Fraction, k: int) -> Fraction:
    """Pr[X <= k] by enumerating all 2^n outcome strings."""
    total = Fraction(0)
    for bits in itertools.product((0, 1), repeat=n):
        if sum(bits) <= k:
            prob = Fraction(1)
            for b in bits:
                prob *= p if b else 1 - p
            total += prob
    return total


def path_joint(pomdp, observations, actions) -> np.ndarray:
    """Joint Pr(o_0..o_t, x_t = x | actions) by summing over all latent paths."""
    X = pomdp.n_latent
    out = np.zeros(X)
    t = len(actions)
    for path in itertools.product(range(X), repeat=t + 1):
        pr = pomdp.initial[path[0]] * pomdp.observation[path[0], observations[0]]
        for i in range(t):
            pr *= pomdp.transition[path[i], actions[i], path[i + 1]]
            pr *= pomdp.observation[path[i + 1], observations[i + 1]]
        out[path[-1]] += pr
    return out


def brute_test_probability(pomdp, h, t) -> float:
    """Pr(future observations in W | h, alpha) as a ratio of two path sums."""
    denom = path_joint(pomdp, h.observations, h.actions).sum()
    num = 0.0
    for w in t.event:
        num += path_joint(pomdp, h.observations + tuple(w), h.actions + tuple(t.actions)).sum()
    return num / denom


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
