"""Named instances shared by the CLI suites and the test-suite.

Each builder returns plain objects (environment, evaluation pieces) so a
caller can feed them to the matching ``verify_*`` function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from selectlab.agents import MemoryMap, PredictionCache, constant_memory, identity_memory, random_memory
from selectlab.environments import (
    EvaluationDistribution,
    FinitePOMDP,
    History,
    build_alias_env,
    build_dyadic_psr_env,
    enumerate_histories,
    random_pomdp,
    same_last_pairs,
    uniform,
)
from selectlab.errors import ConfigurationError
from selectlab.goals import Test, test_universe

# observation indices of the aliasing construction
_ZERO, _ONE, _U, _START = 0, 1, 2, 3

ALIAS_H1 = History((_START, _U), (0,))
ALIAS_H2 = History((_START, _U), (1,))
ALIAS_TEST = Test((0,), ((_ZERO,),))


@dataclass
class AliasInstance:
    pomdp: FinitePOMDP
    pairs: list
    tests: list
    histories: list[History]


def alias_instance(high: float = 0.8) -> AliasInstance:
    """Two same-last histories with p_T = high / 1-high on a single test."""
    pairs = [((ALIAS_H1, ALIAS_H2), 0.5), ((ALIAS_H2, ALIAS_H1), 0.5)]
    return AliasInstance(build_alias_env(high), pairs, [(ALIAS_TEST, 1.0)], [ALIAS_H1, ALIAS_H2])


def alias_blocks() -> list[list[tuple[Test, float]]]:
    """Block 1 separates the alias histories; block 2 holds tests both agree on."""
    agree = [
        Test((0, 0), ((_ZERO, _ZERO), (_ONE, _ONE))),  # certain under both histories
        Test((0, 0), ((_ZERO, _ONE),)),  # impossible under both
    ]
    return [[(ALIAS_TEST, 0.5)], [(t, 0.25) for t in agree]]


def alias_regimes() -> tuple[list[tuple[float, list[tuple[Test, float]]]], dict[History, int]]:
    """Two regimes with overlapping test supports; regime = which action was taken."""
    second = Test((1,), ((_ZERO,),))
    regimes = [
        (0.5, [(ALIAS_TEST, 1.0)]),
        (0.5, [(ALIAS_TEST, 0.5), (second, 0.5)]),
    ]
    return regimes, {ALIAS_H1: 0, ALIAS_H2: 1}


def named_memory(kind: str, histories, rng: np.random.Generator | None = None, n_ids: int = 2) -> MemoryMap:
    if kind == "constant":
        return constant_memory(histories)
    if kind == "identity":
        return identity_memory(histories)
    if kind == "random":
        return random_memory(histories, n_ids, rng if rng is not None else np.random.default_rng(0))
    raise ConfigurationError(f"unknown memory kind {kind!r}")


@dataclass
class RandomPairConfig:
    pomdp: FinitePOMDP
    histories: list
    pairs: list
    tests: list
    memory: MemoryMap
    resolver: Any
    gamma: float


RESOLVERS = ("cell_optimal", "majority", "fixed:0.5", "fixed:0.0")


def random_pair_config(seed: int, history_length: int = 1, test_depth: int = 2) -> RandomPairConfig:
    """A seeded POMDP with same-last pairs, a depth-limited universe and a random memory."""
    rng = np.random.default_rng(seed)
    n_latent = int(rng.integers(2, 4))
    n_obs = int(rng.integers(2, 4))
    pomdp = random_pomdp(n_latent, 2, n_obs, rng, concentration=0.2)
    histories = enumerate_histories(pomdp, history_length)
    pairs = same_last_pairs(histories)
    universe = test_universe(2, n_obs, test_depth)
    weights = rng.dirichlet(np.ones(len(universe)))
    tests = list(zip(universe, (float(w) for w in weights)))
    memory = random_memory([h for h, _ in histories], int(rng.integers(1, 4)), rng)
    resolver = RESOLVERS[seed % len(RESOLVERS)]
    # place gamma below the largest two-sided separation so witness sets are usually nonempty
    probs = PredictionCache(pomdp)
    best = 0.0
    for (h, h2), _ in pairs:
        for t, _ in tests:
            a, b = probs(h, t) - 0.5, probs(h2, t) - 0.5
            if a * b < 0:
                best = max(best, min(abs(a), abs(b)))
    gamma = max(0.01, best * float(rng.uniform(0.3, 1.0))) if best > 0 else 0.1
    return RandomPairConfig(pomdp, histories, pairs, tests, memory, resolver, gamma)


def pomdp_evaluation(
    pomdp: FinitePOMDP, history_length: int, test_depth: int, family=("singletons", "prefix", "complements")
) -> EvaluationDistribution:
    """Histories enumerated to a fixed length, uniform tests, same-last pairs."""
    histories = enumerate_histories(pomdp, history_length)
    tests = uniform(test_universe(pomdp.n_actions, pomdp.n_obs, test_depth, family))
    return EvaluationDistribution(tuple(histories), tuple(tests), tuple(same_last_pairs(histories)))


# tests and length-0 histories of the two-state linear system
DYADIC_TESTS = [Test((0,), ((0,),)), Test((1,), ((0,),))]
DYADIC_HISTORIES = [History((0,)), History((1,))]


def dyadic_instance(flip: float = 0.125):
    return build_dyadic_psr_env(flip), DYADIC_TESTS, DYADIC_HISTORIES
