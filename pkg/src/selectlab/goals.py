"""Diagnostic task objects and their exact success probabilities.

Three kinds of binary bet are modelled:

* composite counting goals over an MDP: "at most k of the next n attempts of
  (s, a) land in s'" versus "more than k"; branch values are ``F(k)`` and
  ``1 - F(k)`` for ``F`` the Binomial(n, P[s, a, s']) CDF.
* fair bets on a POMDP test ``T = (alpha, W)``: report L wins iff the
  observations produced by ``alpha`` fall in ``W``; report R wins otherwise.
* threshold bets: report L as above, report R wins an independent lottery
  with probability ``lambda``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from selectlab.environments import FiniteMDP, FinitePOMDP, History, filter_belief
from selectlab.errors import DomainError, PreconditionError, ResourceError
from selectlab.numerics import binom_cdf_table

DEFAULT_TEST_DEPTH_CAP = 4
# slack used when deciding p >= 1/2 + gamma (and friends) on floating inputs
MARGIN_TOL = 1e-12

__all__ = [
    "CompositeGoal",
    "GoalValue",
    "Test",
    "ThresholdGoal",
    "composite_goal_value",
    "composite_value_table",
    "fair_goal_value",
    "predictive_table",
    "sequence_distribution",
    "test_from_dict",
    "test_probability",
    "test_to_dict",
    "test_universe",
    "threshold_goal_value",
    "threshold_grid",
    "witness_tests",
]


@dataclass(frozen=True)
class CompositeGoal:
    s: int
    a: int
    s_next: int
    n: int
    k: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"n must be >= 1, got {self.n}")
        if not (0 <= self.k <= self.n):
            raise DomainError(f"k must lie in [0, n={self.n}], got {self.k}")


@dataclass(frozen=True, order=True)
class Test:
    """Action sequence plus an explicit event over the resulting observations."""

    __test__ = False  # not a pytest class

    actions: tuple[int, ...]
    event: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        actions = tuple(int(a) for a in self.actions)
        event = tuple(sorted({tuple(int(o) for o in w) for w in self.event}))
        for w in event:
            if len(w) != len(actions):
                raise DomainError(f"event member {w} has length {len(w)}, test depth is {len(actions)}")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "event", event)

    @property
    def depth(self) -> int:
        return len(self.actions)

    def complement(self, n_obs: int) -> "Test":
        members = set(self.event)
        rest = [w for w in itertools.product(range(n_obs), repeat=self.depth) if w not in members]
        return Test(self.actions, tuple(rest))

    def is_proper(self, n_obs: int) -> bool:
        return 0 < len(self.event) < n_obs**self.depth

    def __str__(self) -> str:
        ev = ",".join("".join(map(str, w)) for w in self.event)
        return f"[{''.join(map(str, self.actions))}|{ev}]"


@dataclass(frozen=True)
class ThresholdGoal:
    test: Test
    lam: float

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam!r}")


@dataclass(frozen=True)
class GoalValue:
    """Optimal values of the two branches; ``margin = |u1 - u2| / 2``."""

    u_branch1: float
    u_branch2: float
    v_star: float
    margin: float

    @classmethod
    def of(cls, u1: float, u2: float) -> "GoalValue":
        return cls(u1, u2, max(u1, u2), abs(u1 - u2) / 2.0)


# ---------------------------------------------------------------------------
# Composite goals
# ---------------------------------------------------------------------------


def _require_communicating(mdp: FiniteMDP) -> None:
    if not mdp.communicating:
        raise PreconditionError("composite goals need a communicating MDP; attempt times may be infinite")


def composite_goal_value(mdp: FiniteMDP, g: CompositeGoal) -> GoalValue:
    _require_communicating(mdp)
    p = float(mdp.kernel[g.s, g.a, g.s_next])
    f = float(binom_cdf_table(g.n, p)[g.k])
    return GoalValue.of(f, 1.0 - f)


def composite_value_table(mdp: FiniteMDP, n: int) -> np.ndarray:
    """``F[s, a, s', k]`` for every cell; branch 2 is ``1 - F``."""
    _require_communicating(mdp)
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    S, A = mdp.n_states, mdp.n_actions
    out = np.empty((S, A, S, n + 1))
    cache: dict[float, np.ndarray] = {}
    for s, a, s2 in itertools.product(range(S), range(A), range(S)):
        p = float(mdp.kernel[s, a, s2])
        if p not in cache:
            cache[p] = binom_cdf_table(n, p)
        out[s, a, s2] = cache[p]
    return out


# ---------------------------------------------------------------------------
# Test probabilities
# ---------------------------------------------------------------------------


def _check_depth(depth: int, cap: int) -> None:
    if depth > cap:
        raise ResourceError(f"test depth {depth} exceeds cap {cap}")


def _event_probability(pomdp: FinitePOMDP, belief: np.ndarray, actions: Sequence[int], event: Sequence[tuple[int, ...]]) -> float:
    # walk the prefix tree of the event so shared prefixes are propagated once
    if not actions:
        return float(belief.sum()) if event else 0.0
    pred = belief @ pomdp.transition[:, actions[0], :]
    groups: dict[int, list[tuple[int, ...]]] = {}
    for w in event:
        groups.setdefault(w[0], []).append(w[1:])
    total = 0.0
    for o, tails in groups.items():
        nxt = pred * pomdp.observation[:, o]
        if nxt.sum() > 0.0:
            total += _event_probability(pomdp, nxt, actions[1:], tails)
    return total


def test_probability(pomdp: FinitePOMDP, h: History, t: Test, cap: int = DEFAULT_TEST_DEPTH_CAP) -> float:
    """``Pr(O_{t+1:t+k} in W | h, A_{t:t+k-1} = alpha)``."""
    _check_depth(t.depth, cap)
    b = filter_belief(pomdp, h).weights
    return min(1.0, max(0.0, _event_probability(pomdp, b, t.actions, t.event)))


# keep pytest from collecting the function above as a test
test_probability.__test__ = False  # type: ignore[attr-defined]


def sequence_distribution(pomdp: FinitePOMDP, h: History, actions: Sequence[int]) -> dict[tuple[int, ...], float]:
    """Distribution over observation sequences produced by ``actions`` after ``h``."""
    b = filter_belief(pomdp, h).weights
    out: dict[tuple[int, ...], float] = {}

    def walk(alpha: np.ndarray, depth: int, prefix: tuple[int, ...]) -> None:
        if depth == len(actions):
            out[prefix] = float(alpha.sum())
            return
        pred = alpha @ pomdp.transition[:, actions[depth], :]
        for o in range(pomdp.n_obs):
            nxt = pred * pomdp.observation[:, o]
            if nxt.sum() > 0.0:
                walk(nxt, depth + 1, prefix + (o,))

    walk(b, 0, ())
    return out


def predictive_table(
    pomdp: FinitePOMDP, histories: Iterable[History], tests: Iterable[Test]
) -> dict[tuple[History, Test], float]:
    tests = list(tests)
    return {(h, t): test_probability(pomdp, h, t) for h in histories for t in tests}


# ---------------------------------------------------------------------------
# Fair and threshold bets
# ---------------------------------------------------------------------------


def fair_goal_value(p_T: float) -> GoalValue:
    if not (0.0 <= p_T <= 1.0):
        raise DomainError(f"p_T must lie in [0, 1], got {p_T!r}")
    return GoalValue(p_T, 1.0 - p_T, 0.5 + abs(p_T - 0.5), abs(p_T - 0.5))


def threshold_goal_value(p_T: float, lam: float) -> GoalValue:
    if not (0.0 <= p_T <= 1.0) or not (0.0 <= lam <= 1.0):
        raise DomainError(f"p_T and lambda must lie in [0, 1], got {p_T!r}, {lam!r}")
    return GoalValue.of(p_T, lam)


def threshold_grid(K: int) -> np.ndarray:
    """Midpoints ``(k - 1/2) / K`` of a uniform K-partition of [0, 1]."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    return (np.arange(1, K + 1) - 0.5) / K


# ---------------------------------------------------------------------------
# Witness sets and universes
# ---------------------------------------------------------------------------


def is_high(p: float, gamma: float) -> bool:
    return p >= 0.5 + gamma - MARGIN_TOL


def is_low(p: float, gamma: float) -> bool:
    return p <= 0.5 - gamma + MARGIN_TOL


def witness_tests(
    pomdp: FinitePOMDP,
    h: History,
    h_prime: History,
    gamma: float,
    test_universe: Iterable[Test],
) -> list[Test]:
    """Tests with ``p_T(h) >= 1/2 + gamma`` and ``p_T(h') <= 1/2 - gamma``."""
    out = []
    for t in test_universe:
        if is_high(test_probability(pomdp, h, t), gamma) and is_low(test_probability(pomdp, h_prime, t), gamma):
            out.append(t)
    return out


def _cylinders(n_obs: int, k: int) -> list[tuple[tuple[int, ...], ...]]:
    out = []
    for j in range(1, k):
        for prefix in itertools.product(range(n_obs), repeat=j):
            out.append(tuple(prefix + tail for tail in itertools.product(range(n_obs), repeat=k - j)))
    return out


def test_universe(
    n_actions: int,
    n_obs: int,
    depth: int,
    family: Sequence[str] = ("singletons", "prefix", "complements"),
    cap: int = DEFAULT_TEST_DEPTH_CAP,
    max_powerset: int = 9,
) -> list[Test]:
    """Every ``(alpha, W)`` with ``1 <= |alpha| <= depth`` and W from ``family``.

    Families: ``singletons`` ({w}), ``prefix`` (cylinders fixing the first j < k
    observations), ``complements`` (complements of the other chosen members)
    and ``all`` (every proper nonempty subset of ``O^k``; only allowed while
    ``|O|^k <= max_powerset``).
    """
    _check_depth(depth, cap)
    unknown = set(family) - {"singletons", "prefix", "complements", "all"}
    if unknown:
        raise DomainError(f"unknown test families {sorted(unknown)}")
    tests: set[Test] = set()
    for k in range(1, depth + 1):
        words = list(itertools.product(range(n_obs), repeat=k))
        events: set[tuple[tuple[int, ...], ...]] = set()
        if "all" in family:
            if len(words) > max_powerset:
                raise ResourceError(f"power set of O^{k} has 2^{len(words)} members")
            for r in range(1, len(words)):
                events.update(itertools.combinations(words, r))
        if "singletons" in family:
            events.update((w,) for w in words)
        if "prefix" in family:
            events.update(_cylinders(n_obs, k))
        if "complements" in family:
            full = set(words)
            events.update(tuple(sorted(full - set(ev))) for ev in list(events))
        events = {ev for ev in events if 0 < len(ev) < len(words)}
        for alpha in itertools.product(range(n_actions), repeat=k):
            tests.update(Test(alpha, ev) for ev in events)
    return sorted(tests)


test_universe.__test__ = False  # type: ignore[attr-defined]


def test_to_dict(t: Test) -> dict[str, Any]:
    return {"actions": list(t.actions), "event": [list(w) for w in t.event]}


def test_from_dict(d: dict[str, Any]) -> Test:
    return Test(tuple(d["actions"]), tuple(tuple(w) for w in d["event"]))


test_to_dict.__test__ = False  # type: ignore[attr-defined]
test_from_dict.__test__ = False  # type: ignore[attr-defined]
