"""Goal-conditioned stochastic policies and their exact regret.

A policy's entire interface to a bet is ``q``, the probability of branch 1
(report ``L``).  Policies see a :class:`BetCell` carrying the goal, the
history it is posed at (``None`` for fully observed composite goals) and
the goal's exact branch values.  Everything here is evaluated in
expectation; nothing is sampled.
"""

from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence, Union

import numpy as np

from selectlab.environments import EvaluationDistribution, FiniteMDP, FinitePOMDP, History
from selectlab.errors import ConfigurationError, DomainError
from selectlab.goals import (
    CompositeGoal,
    GoalValue,
    Test,
    ThresholdGoal,
    composite_value_table,
    fair_goal_value,
    test_probability,
    threshold_goal_value,
    threshold_grid,
)
from selectlab.numerics import BetOutcome, bet_regret

Goal = Union[CompositeGoal, Test, ThresholdGoal]


@dataclass(frozen=True)
class BetCell:
    goal: Goal
    history: History | None
    value: GoalValue

    @property
    def key(self) -> tuple:
        return (self.goal, self.history)


WeightedCells = list[tuple[BetCell, float]]


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class BranchPolicy:
    """Maps a bet cell to the probability of choosing branch 1."""

    vectorized = False

    def q(self, cell: BetCell) -> float:
        raise NotImplementedError

    def q_array(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """Branch-1 probabilities from branch values alone (vectorized policies only)."""
        raise NotImplementedError(f"{type(self).__name__} needs the full cell")

    def describe(self) -> dict[str, Any]:
        return {"kind": type(self).__name__}


class OptimalPolicy(BranchPolicy):
    """Branch 1 whenever its value is at least branch 2's."""

    vectorized = True

    def q(self, cell: BetCell) -> float:
        return 1.0 if cell.value.u_branch1 >= cell.value.u_branch2 else 0.0

    def q_array(self, u1, u2):
        return np.where(u1 >= u2, 1.0, 0.0)

    def describe(self):
        return {"kind": "optimal"}


class NoisyPolicy(BranchPolicy):
    def __init__(self, epsilon: float, base: BranchPolicy | None = None):
        if not (0.0 <= epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in [0, 1], got {epsilon!r}")
        self.epsilon = float(epsilon)
        self.base = base if base is not None else OptimalPolicy()
        self.vectorized = self.base.vectorized

    def _mix(self, q):
        return (1.0 - self.epsilon) * q + self.epsilon * (1.0 - q)

    def q(self, cell):
        return self._mix(self.base.q(cell))

    def q_array(self, u1, u2):
        return self._mix(self.base.q_array(u1, u2))

    def describe(self):
        return {"kind": "noisy", "epsilon": self.epsilon, "base": self.base.describe()}


class ConstantPolicy(BranchPolicy):
    """Ignores the cell; ``ConstantPolicy(1.0)`` always reports L."""

    vectorized = True

    def __init__(self, q: float):
        if not (0.0 <= q <= 1.0):
            raise DomainError(f"q must lie in [0, 1], got {q!r}")
        self.q_value = float(q)

    def q(self, cell):
        return self.q_value

    def q_array(self, u1, u2):
        return np.full(np.shape(u1), self.q_value)

    def describe(self):
        return {"kind": "constant", "q": self.q_value}


def _stable_unit(seed: int, key: Any) -> float:
    digest = hashlib.blake2b(f"{seed}|{key!r}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


class SeededRandomPolicy(BranchPolicy):
    """An arbitrary stochastic policy: q is a fixed pseudo-random function of (seed, cell)."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def q(self, cell):
        return _stable_unit(self.seed, cell.key)

    def describe(self):
        return {"kind": "seeded_random", "seed": self.seed}


class FunctionPolicy(BranchPolicy):
    def __init__(self, fn: Callable[[BetCell], float], name: str = "function"):
        self.fn = fn
        self.name = name

    def q(self, cell):
        return float(self.fn(cell))

    def describe(self):
        return {"kind": self.name}


def optimal_policy() -> OptimalPolicy:
    return OptimalPolicy()


def noisy_policy(epsilon: float, base: BranchPolicy | None = None) -> NoisyPolicy:
    return NoisyPolicy(epsilon, base)


# ---------------------------------------------------------------------------
# Memory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryMap:
    assignment: dict[History, Hashable]

    def __call__(self, h: History) -> Hashable:
        try:
            return self.assignment[h]
        except KeyError:
            raise ConfigurationError(f"memory map is not defined on history {h}") from None

    def aliased(self, h: History, h2: History) -> bool:
        return self(h) == self(h2)

    @property
    def alphabet(self) -> set[Hashable]:
        return set(self.assignment.values())


def identity_memory(histories: Iterable[History]) -> MemoryMap:
    return MemoryMap({h: i for i, h in enumerate(sorted(set(histories)))})


def constant_memory(histories: Iterable[History]) -> MemoryMap:
    return MemoryMap({h: 0 for h in histories})


def random_memory(histories: Iterable[History], n_ids: int, rng: np.random.Generator) -> MemoryMap:
    hs = sorted(set(histories))
    ids = rng.integers(0, n_ids, size=len(hs))
    return MemoryMap({h: int(i) for h, i in zip(hs, ids)})


class MemoryPolicy(BranchPolicy):
    """Bets depend on the history only through ``memory(h)``."""

    def __init__(self, memory: MemoryMap, table: dict[tuple[Hashable, Goal], float], resolver: str = "custom"):
        self.memory = memory
        self.table = dict(table)
        self.resolver = resolver

    def q(self, cell):
        if cell.history is None:
            raise ConfigurationError("memory-based policies need a history")
        key = (self.memory(cell.history), cell.goal)
        try:
            return self.table[key]
        except KeyError:
            raise ConfigurationError(f"memory id {key[0]!r} has no resolved bet for goal {cell.goal}") from None

    def describe(self):
        return {"kind": "m_based", "resolver": self.resolver, "memory_ids": len(self.memory.alphabet)}


Resolver = Union[str, float, Callable[[list[tuple[BetCell, float]]], float]]


def _resolve_cell(members: list[tuple[BetCell, float]], resolver: Resolver) -> float:
    if callable(resolver):
        return float(resolver(members))
    if isinstance(resolver, (int, float)) and not isinstance(resolver, bool):
        return float(resolver)
    if resolver == "cell_optimal":
        # weighted regret is linear in q, so an endpoint is optimal; ties go to q = 1
        r1 = math.fsum(w * bet_regret(c.value.u_branch1, c.value.u_branch2, 1.0).regret for c, w in members)
        r0 = math.fsum(w * bet_regret(c.value.u_branch1, c.value.u_branch2, 0.0).regret for c, w in members)
        return 1.0 if r1 <= r0 else 0.0
    if resolver == "majority":
        votes = math.fsum(w if c.value.u_branch1 >= c.value.u_branch2 else -w for c, w in members)
        return 1.0 if votes >= 0 else 0.0
    if isinstance(resolver, str) and resolver.startswith("fixed:"):
        return float(resolver.split(":", 1)[1])
    raise ConfigurationError(f"unknown resolver {resolver!r}")


def m_based_policy(memory: MemoryMap, cells: Sequence[tuple[BetCell, float]], resolver: Resolver = "cell_optimal") -> MemoryPolicy:
    """Resolve one bet per (memory id, goal) from the weighted cells it must serve.

    The default ``cell_optimal`` resolver picks, for every memory cell, the q
    minimising the weighted regret of the histories mapped to it.
    """
    groups: dict[tuple[Hashable, Goal], list[tuple[BetCell, float]]] = defaultdict(list)
    for cell, w in cells:
        if cell.history is None:
            raise ConfigurationError("memory-based policies need history-indexed cells")
        groups[(memory(cell.history), cell.goal)].append((cell, w))
    table = {key: _resolve_cell(members, resolver) for key, members in groups.items()}
    name = resolver if isinstance(resolver, str) else ("fixed" if isinstance(resolver, (int, float)) else "callable")
    return MemoryPolicy(memory, table, name)


# ---------------------------------------------------------------------------
# Cell builders
# ---------------------------------------------------------------------------


class PredictionCache:
    """Memoised ``p_T(h)`` for one POMDP."""

    def __init__(self, pomdp: FinitePOMDP):
        self.pomdp = pomdp
        self._cache: dict[tuple[History, Test], float] = {}

    def __call__(self, h: History, t: Test) -> float:
        key = (h, t)
        if key not in self._cache:
            self._cache[key] = test_probability(self.pomdp, h, t)
        return self._cache[key]


def _probs(pomdp_or_cache: FinitePOMDP | PredictionCache) -> PredictionCache:
    if isinstance(pomdp_or_cache, PredictionCache):
        return pomdp_or_cache
    return PredictionCache(pomdp_or_cache)


def fair_cells(
    pomdp: FinitePOMDP | PredictionCache,
    histories: Sequence[tuple[History, float]],
    tests: Sequence[tuple[Test, float]],
) -> WeightedCells:
    probs = _probs(pomdp)
    return [
        (BetCell(t, h, fair_goal_value(probs(h, t))), wh * wt)
        for h, wh in histories
        for t, wt in tests
    ]


def threshold_cells(
    pomdp: FinitePOMDP | PredictionCache,
    histories: Sequence[tuple[History, float]],
    tests: Sequence[tuple[Test, float]],
    K: int,
) -> WeightedCells:
    probs = _probs(pomdp)
    grid = threshold_grid(K)
    out = []
    for h, wh in histories:
        for t, wt in tests:
            p = probs(h, t)
            for lam in grid:
                out.append((BetCell(ThresholdGoal(t, float(lam)), h, threshold_goal_value(p, float(lam))), wh * wt / K))
    return out


def pair_cells(
    pomdp: FinitePOMDP | PredictionCache,
    pairs: Sequence[tuple[tuple[History, History], float]],
    tests: Sequence[tuple[Test, float]],
) -> WeightedCells:
    """Fair-bet cells weighted so their weighted regret is the pair-averaged regret."""
    probs = _probs(pomdp)
    weights: dict[tuple[History, Test], float] = defaultdict(float)
    for (h, h2), wp in pairs:
        for t, wt in tests:
            weights[(h, t)] += 0.5 * wp * wt
            weights[(h2, t)] += 0.5 * wp * wt
    return [(BetCell(t, h, fair_goal_value(probs(h, t))), w) for (h, t), w in sorted(weights.items())]


def composite_cells(mdp: FiniteMDP, n: int) -> WeightedCells:
    F = composite_value_table(mdp, n)
    S, A = mdp.n_states, mdp.n_actions
    w = 1.0 / (S * A * S * (n + 1))
    out = []
    for (s, a, s2, k), f in np.ndenumerate(F):
        out.append((BetCell(CompositeGoal(s, a, s2, n, k), None, GoalValue.of(float(f), 1.0 - float(f))), w))
    return out


# ---------------------------------------------------------------------------
# Regret profiles
# ---------------------------------------------------------------------------


@dataclass
class RegretProfile:
    cells: list[tuple[BetCell, float, BetOutcome]] = field(default_factory=list)
    average: float = 0.0
    pair_average: float | None = None


def cell_outcome(policy: BranchPolicy, cell: BetCell) -> BetOutcome:
    return bet_regret(cell.value.u_branch1, cell.value.u_branch2, policy.q(cell))


def weighted_regret(policy: BranchPolicy, cells: Sequence[tuple[BetCell, float]]) -> float:
    return math.fsum(w * cell_outcome(policy, c).regret for c, w in cells)


def regret_profile(
    policy: BranchPolicy,
    cells: Sequence[tuple[BetCell, float]],
    pairs: Sequence[tuple[BetCell, float]] | None = None,
) -> RegretProfile:
    """Exact per-cell regrets and their weighted average.

    ``pairs`` are cells from :func:`pair_cells`; their weighted regret is the
    pair-averaged regret.
    """
    rows = [(c, w, cell_outcome(policy, c)) for c, w in cells]
    total_w = math.fsum(w for _, w, _ in rows)
    avg = math.fsum(w * o.regret for _, w, o in rows) / total_w if rows else 0.0
    pair_avg = weighted_regret(policy, pairs) if pairs is not None else None
    return RegretProfile(rows, avg, pair_avg)


def evaluation_profile(policy: BranchPolicy, pomdp: FinitePOMDP | PredictionCache, ev: EvaluationDistribution) -> RegretProfile:
    """Fair-bet profile over ``H x D``, plus the pair average when pairs are given."""
    probs = _probs(pomdp)
    cells = fair_cells(probs, ev.histories, ev.tests)
    pcells = pair_cells(probs, ev.pairs, ev.tests) if ev.pairs else None
    return regret_profile(policy, cells, pcells)


def composite_q_table(policy: BranchPolicy, mdp: FiniteMDP, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(F, q)`` arrays of shape ``(S, A, S, n + 1)`` for the composite goal family."""
    F = composite_value_table(mdp, n)
    if policy.vectorized:
        q = policy.q_array(F, 1.0 - F)
    else:
        q = np.empty_like(F)
        for (s, a, s2, k), f in np.ndenumerate(F):
            cell = BetCell(CompositeGoal(s, a, s2, n, k), None, GoalValue.of(float(f), 1.0 - float(f)))
            q[s, a, s2, k] = policy.q(cell)
    return F, np.asarray(q, dtype=float)


def composite_regrets(F: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorised bet regret on the composite family (branch values F, 1 - F)."""
    u1, u2 = F, 1.0 - F
    v = q * u1 + (1.0 - q) * u2
    return np.maximum(0.0, 1.0 - v / np.maximum(u1, u2))


def policy_from_dict(spec: dict[str, Any]) -> BranchPolicy:
    kind = spec.get("kind", "optimal")
    if kind == "optimal":
        return OptimalPolicy()
    if kind == "noisy":
        base = policy_from_dict(spec["base"]) if "base" in spec else None
        return NoisyPolicy(spec.get("epsilon", 0.0), base)
    if kind == "constant":
        return ConstantPolicy(spec["q"])
    if kind == "seeded_random":
        return SeededRandomPolicy(spec["seed"])
    raise ConfigurationError(f"unknown policy kind {kind!r}")
