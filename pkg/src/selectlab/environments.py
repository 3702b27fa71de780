"""Exact tabular environments.

Fully observed MDPs, finite POMDPs with enumerable histories, the binary
structural causal models used for the counterfactual counterexample, and
builders for the small constructions the verifier relies on.

Kernels are stored as numpy arrays indexed ``[state, action, next_state]``
(MDP, POMDP transition) and ``[state, observation]`` (POMDP observation).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from selectlab.errors import (
    AbductionError,
    ConditioningError,
    ConfigurationError,
    DomainError,
    ResourceError,
    ValidationError,
)

if TYPE_CHECKING:
    from selectlab.goals import Test

STOCHASTIC_TOL = 1e-12
DEFAULT_HISTORY_CAP = 4


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    kernel: np.ndarray  # P[s, a, s']
    initial: np.ndarray

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        initial = np.array(self.initial, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValidationError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if initial.shape != (kernel.shape[0],):
            raise ValidationError(f"initial must have shape ({kernel.shape[0]},), got {initial.shape}")
        kernel.setflags(write=False)
        initial.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "initial", initial)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    @cached_property
    def communicating(self) -> bool:
        return _strongly_connected(self.kernel.max(axis=1) > 0.0)


@dataclass(frozen=True, eq=False)
class FinitePOMDP:
    transition: np.ndarray  # T[x, a, x']
    observation: np.ndarray  # Z[x, o]
    initial: np.ndarray
    obs_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        Z = np.array(self.observation, dtype=float)
        mu = np.array(self.initial, dtype=float)
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ValidationError(f"transition must have shape (X, A, X), got {T.shape}")
        if Z.ndim != 2 or Z.shape[0] != T.shape[0]:
            raise ValidationError(f"observation must have shape ({T.shape[0]}, O), got {Z.shape}")
        if mu.shape != (T.shape[0],):
            raise ValidationError(f"initial must have shape ({T.shape[0]},), got {mu.shape}")
        if self.obs_labels is not None and len(self.obs_labels) != Z.shape[1]:
            raise ValidationError("obs_labels length must match the number of observations")
        for arr in (T, Z, mu):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "observation", Z)
        object.__setattr__(self, "initial", mu)
        if self.obs_labels is not None:
            object.__setattr__(self, "obs_labels", tuple(self.obs_labels))

    @property
    def n_latent(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_obs(self) -> int:
        return self.observation.shape[1]


@dataclass(frozen=True, order=True)
class History:
    """``(o_0, a_0, o_1, ..., a_{t-1}, o_t)`` split into its two streams."""

    observations: tuple[int, ...]
    actions: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(int(o) for o in self.observations))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.observations) != len(self.actions) + 1:
            raise DomainError(
                f"history needs one more observation than actions, got "
                f"{len(self.observations)} observations and {len(self.actions)} actions"
            )

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def last(self) -> int:
        return self.observations[-1]

    def extend(self, action: int, obs: int) -> "History":
        return History(self.observations + (obs,), self.actions + (action,))

    def __str__(self) -> str:
        parts = [str(self.observations[0])]
        for a, o in zip(self.actions, self.observations[1:]):
            parts.append(f"{a}>{o}")
        return " ".join(parts)


@dataclass(frozen=True, eq=False)
class Belief:
    weights: np.ndarray


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    stochastic: bool
    bad_rows: list[str] = field(default_factory=list)
    action_witness: tuple[int, int, int, int] | None = None
    communicating: bool | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.stochastic


def _strongly_connected(adjacency: np.ndarray) -> bool:
    n = adjacency.shape[0]
    reach = adjacency.astype(bool) | np.eye(n, dtype=bool)
    # transitive closure by repeated squaring
    for _ in range(max(1, math.ceil(math.log2(max(n, 2)))) + 1):
        reach = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
    return bool(reach.all())


def _bad_rows(name: str, table: np.ndarray) -> list[str]:
    bad = []
    if table.ndim == 1:
        if abs(table.sum() - 1.0) > STOCHASTIC_TOL:
            bad.append(f"{name} sums to {table.sum():.15g}")
    else:
        sums = table.sum(axis=-1)
        for idx in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
            bad.append(f"{name}{list(map(int, idx))} sums to {sums[idx]:.15g}")
    for idx in zip(*np.nonzero(table < 0.0)):
        bad.append(f"{name}{list(map(int, idx))} is negative")
    return bad


def _action_witness(kernel: np.ndarray) -> tuple[int, int, int, int] | None:
    n_actions = kernel.shape[1]
    for a, b in itertools.combinations(range(n_actions), 2):
        diff = np.argwhere(kernel[:, a, :] != kernel[:, b, :])
        if len(diff):
            s, s_next = diff[0]
            return int(s), a, b, int(s_next)
    return None


def validate(env: FiniteMDP | FinitePOMDP, strict: bool = True) -> ValidationReport:
    """Check stochasticity, the action-dependence witness and (MDP) communication.

    With ``strict`` a non-stochastic row raises :class:`ValidationError`
    listing the offending rows; otherwise they are only reported.
    """
    if isinstance(env, FiniteMDP):
        bad = _bad_rows("P", env.kernel) + _bad_rows("initial", env.initial)
        kernel = env.kernel
    elif isinstance(env, FinitePOMDP):
        bad = (
            _bad_rows("T", env.transition)
            + _bad_rows("Z", env.observation)
            + _bad_rows("initial", env.initial)
        )
        kernel = env.transition
    else:
        raise TypeError(f"cannot validate {type(env).__name__}")

    report = ValidationReport(stochastic=not bad, bad_rows=bad)
    if bad and strict:
        raise ValidationError("non-stochastic rows: " + "; ".join(bad))
    if kernel.shape[1] < 2:
        report.warnings.append("fewer than two actions")
    report.action_witness = _action_witness(kernel)
    if report.action_witness is None:
        msg = "transition kernel does not depend on the action"
        report.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    if isinstance(env, FiniteMDP):
        report.communicating = env.communicating
        if not report.communicating:
            report.warnings.append("MDP is not communicating")
    return report


# ---------------------------------------------------------------------------
# Random environments
# ---------------------------------------------------------------------------


def random_mdp(
    n_states: int, n_actions: int, rng: np.random.Generator, concentration: float = 1.0
) -> FiniteMDP:
    """Dirichlet rows; almost surely communicating and action dependent."""
    kernel = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    return FiniteMDP(kernel, initial)


def random_pomdp(
    n_latent: int,
    n_actions: int,
    n_obs: int,
    rng: np.random.Generator,
    concentration: float = 1.0,
) -> FinitePOMDP:
    T = rng.dirichlet(np.full(n_latent, concentration), size=(n_latent, n_actions))
    Z = rng.dirichlet(np.full(n_obs, concentration), size=n_latent)
    mu = rng.dirichlet(np.ones(n_latent))
    return FinitePOMDP(T, Z, mu)


# ---------------------------------------------------------------------------
# Histories and filtering
# ---------------------------------------------------------------------------


def _forward(pomdp: FinitePOMDP, h: History) -> np.ndarray:
    """Unnormalised ``Pr(x_t, o_{0:t} | a_{0:t-1})``."""
    alpha = pomdp.initial * pomdp.observation[:, h.observations[0]]
    for a, o in zip(h.actions, h.observations[1:]):
        alpha = (alpha @ pomdp.transition[:, a, :]) * pomdp.observation[:, o]
    return alpha


def history_likelihood(pomdp: FinitePOMDP, h: History) -> float:
    """Probability of the observation stream given the history's actions."""
    return float(_forward(pomdp, h).sum())


def filter_belief(pomdp: FinitePOMDP, h: History) -> Belief:
    alpha = _forward(pomdp, h)
    z = alpha.sum()
    if z <= 0.0:
        raise ConditioningError(f"history {h} has probability zero")
    return Belief(alpha / z)


def enumerate_histories(
    pomdp: FinitePOMDP, length: int, cap: int = DEFAULT_HISTORY_CAP
) -> list[tuple[History, float]]:
    """All positive-probability histories of exactly ``length`` steps.

    Weights are probabilities under uniformly random reference actions; the
    list is sorted by history.
    """
    if length < 0:
        raise DomainError("history length must be non-negative")
    if length > cap:
        raise ResourceError(f"history length {length} exceeds cap {cap}")
    n_a = pomdp.n_actions
    out: list[tuple[History, float]] = []

    def walk(h: History, alpha: np.ndarray, action_prob: float) -> None:
        if h.length == length:
            out.append((h, float(alpha.sum()) * action_prob))
            return
        for a in range(n_a):
            pred = alpha @ pomdp.transition[:, a, :]
            for o in range(pomdp.n_obs):
                nxt = pred * pomdp.observation[:, o]
                if nxt.sum() > 0.0:
                    walk(h.extend(a, o), nxt, action_prob / n_a)

    for o in range(pomdp.n_obs):
        alpha = pomdp.initial * pomdp.observation[:, o]
        if alpha.sum() > 0.0:
            walk(History((o,)), alpha, 1.0)
    out.sort(key=lambda item: item[0])
    return out


# ---------------------------------------------------------------------------
# Builders for the proof constructions
# ---------------------------------------------------------------------------

# Observation indices of the two-environment construction: "0", "1", "u".
PROP1_OBS = ("0", "1", "u")
PROP1_U = 2


def build_prop1_env(r: float, n_actions: int = 2) -> FinitePOMDP:
    """Latents (x0, x1, y0, y1); x_i moves to y_i and y_i is absorbing.

    x0, x1 emit ``u``; y0 emits ``0`` and y1 emits ``1``; the initial mass is
    ``(r, 1 - r, 0, 0)``.  Actions have no effect.
    """
    if not (0.5 < r < 1.0):
        raise DomainError(f"r must lie in (1/2, 1), got {r!r}")
    T = np.zeros((4, n_actions, 4))
    T[0, :, 2] = 1.0
    T[1, :, 3] = 1.0
    T[2, :, 2] = 1.0
    T[3, :, 3] = 1.0
    Z = np.zeros((4, 3))
    Z[0, PROP1_U] = Z[1, PROP1_U] = 1.0
    Z[2, 0] = 1.0
    Z[3, 1] = 1.0
    return FinitePOMDP(T, Z, np.array([r, 1.0 - r, 0.0, 0.0]), obs_labels=PROP1_OBS)


def build_prop1_pair(p: float, q: float, n_actions: int = 2) -> tuple[FinitePOMDP, FinitePOMDP]:
    for name, v in (("p", p), ("q", q)):
        if not (0.5 < v < 1.0):
            raise DomainError(f"{name} must lie in (1/2, 1), got {v!r}")
    if p == q:
        raise DomainError("the construction needs p != q")
    return build_prop1_env(p, n_actions), build_prop1_env(q, n_actions)


# Observation indices of the aliasing construction: "0", "1", "u", "s".
ALIAS_OBS = ("0", "1", "u", "s")


def build_alias_env(high: float = 0.8) -> FinitePOMDP:
    """Two histories ending in ``u`` with beliefs ``(high, 1-high)`` and its mirror.

    Latents (z, x0, x1, y0, y1).  From the start state z (observation ``s``),
    action 0 lands in x0 with probability ``high`` and action 1 with
    probability ``1 - high``; x_i then moves to the absorbing y_i, exactly as
    in :func:`build_prop1_env`.  The histories ``s 0>u`` and ``s 1>u`` share
    their last observation but disagree on every test that asks for ``0``.
    """
    if not (0.0 <= high <= 1.0):
        raise DomainError(f"high must lie in [0, 1], got {high!r}")
    T = np.zeros((5, 2, 5))
    T[0, 0, 1], T[0, 0, 2] = high, 1.0 - high
    T[0, 1, 1], T[0, 1, 2] = 1.0 - high, high
    T[1, :, 3] = 1.0
    T[2, :, 4] = 1.0
    T[3, :, 3] = 1.0
    T[4, :, 4] = 1.0
    Z = np.zeros((5, 4))
    Z[0, 3] = 1.0
    Z[1, 2] = Z[2, 2] = 1.0
    Z[3, 0] = 1.0
    Z[4, 1] = 1.0
    return FinitePOMDP(T, Z, np.array([1.0, 0, 0, 0, 0]), obs_labels=ALIAS_OBS)


def build_coin_env(n_actions: int = 2) -> FinitePOMDP:
    """One latent state emitting a fair coin; every singleton test has p = 1/2."""
    T = np.ones((1, n_actions, 1))
    Z = np.array([[0.5, 0.5]])
    return FinitePOMDP(T, Z, np.array([1.0]))


def build_dyadic_psr_env(flip: float = 0.125) -> FinitePOMDP:
    """Two latents, two observations, two actions with a rank-2 linear PSR.

    Action 0 keeps the latent state, action 1 swaps it; the observation
    reports the latent state correctly with probability ``1 - flip``.  With
    ``flip`` a multiple of 1/8 and histories of length 0 every depth-<=2 test
    probability is a multiple of 1/512, which makes threshold estimation on
    a 512-point grid exact.
    """
    if not (0.0 <= flip < 0.5):
        raise DomainError(f"flip must lie in [0, 1/2), got {flip!r}")
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = T[1, 0, 1] = 1.0
    T[0, 1, 1] = T[1, 1, 0] = 1.0
    Z = np.array([[1.0 - flip, flip], [flip, 1.0 - flip]])
    return FinitePOMDP(T, Z, np.array([0.5, 0.5]))


def build_environment(tag: str, **params: Any) -> FinitePOMDP | FiniteMDP | tuple | "ScmPair":
    """Named builders selectable from manifests."""
    builders = {
        "prop1": lambda: build_prop1_pair(params["p"], params["q"], params.get("n_actions", 2)),
        "prop1_env": lambda: build_prop1_env(params["r"], params.get("n_actions", 2)),
        "alias": lambda: build_alias_env(params.get("high", 0.8)),
        "coin": lambda: build_coin_env(params.get("n_actions", 2)),
        "dyadic_psr": lambda: build_dyadic_psr_env(params.get("flip", 0.125)),
        "l3": build_l3_pair,
        "random_mdp": lambda: random_mdp(
            params["n_states"],
            params["n_actions"],
            np.random.default_rng(params["seed"]),
            params.get("concentration", 1.0),
        ),
        "random_pomdp": lambda: random_pomdp(
            params["n_latent"],
            params["n_actions"],
            params["n_obs"],
            np.random.default_rng(params["seed"]),
            params.get("concentration", 1.0),
        ),
    }
    if tag not in builders:
        raise ConfigurationError(f"unknown environment builder {tag!r}; known: {sorted(builders)}")
    try:
        return builders[tag]()
    except KeyError as exc:
        raise ConfigurationError(f"builder {tag!r} is missing parameter {exc}") from None


# ---------------------------------------------------------------------------
# Structural causal models (binary, single state)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryScm:
    """``S' = f(A, U)`` with ``U ~ Bernoulli(u_prob)``; ``table[a][u]`` holds f."""

    name: str
    table: tuple[tuple[int, int], tuple[int, int]]
    u_prob: Fraction = Fraction(1, 2)

    def _u_weight(self, u: int) -> Fraction:
        return self.u_prob if u == 1 else 1 - self.u_prob

    def next_state(self, a: int, u: int) -> int:
        return self.table[a][u]

    def interventional(self, a: int) -> Fraction:
        """``P(S' = 1 | do(A = a))`` in exact arithmetic."""
        return sum((self._u_weight(u) for u in (0, 1) if self.table[a][u] == 1), Fraction(0))


@dataclass(frozen=True)
class ScmPair:
    model_I: BinaryScm
    model_II: BinaryScm

    def kernel_gap(self) -> Fraction:
        return max(abs(self.model_I.interventional(a) - self.model_II.interventional(a)) for a in (0, 1))


def build_l3_pair() -> ScmPair:
    """Model I ignores the action (S' = U); model II flips it (S' = A xor U)."""
    model_I = BinaryScm("I", ((0, 1), (0, 1)))
    model_II = BinaryScm("II", ((0, 1), (1, 0)))
    pair = ScmPair(model_I, model_II)
    if pair.kernel_gap() != 0:
        raise AssertionError("interventional kernels of the L3 pair must coincide")
    return pair


def counterfactual(model: BinaryScm, observed_a: int, observed_s: int, alt_a: int) -> int:
    """Abduct U from the evidence, then re-run the mechanism under ``alt_a``."""
    consistent = [u for u in (0, 1) if model.table[observed_a][u] == observed_s and model._u_weight(u) > 0]
    if not consistent:
        raise AbductionError(f"evidence (a={observed_a}, s={observed_s}) is impossible in model {model.name}")
    outcomes = {model.next_state(alt_a, u) for u in consistent}
    if len(outcomes) != 1:
        raise AbductionError(f"counterfactual is not determined by the evidence in model {model.name}")
    return outcomes.pop()


# ---------------------------------------------------------------------------
# Evaluation distributions
# ---------------------------------------------------------------------------


def _normalized(items: Iterable[tuple[Any, float]], what: str) -> list[tuple[Any, float]]:
    items = [(k, float(w)) for k, w in items if w > 0.0]
    total = math.fsum(w for _, w in items)
    if total <= 0.0:
        raise ValidationError(f"{what} has no positive weight")
    return [(k, w / total) for k, w in items]


@dataclass(frozen=True)
class EvaluationDistribution:
    """Weighted histories, tests and same-last-observation history pairs.

    ``regimes`` optionally labels each history with a (latent) regime index.
    Weights are renormalised on construction.
    """

    histories: tuple[tuple[History, float], ...] = ()
    tests: tuple[tuple["Test", float], ...] = ()
    pairs: tuple[tuple[tuple[History, History], float], ...] = ()
    regimes: dict[History, int] | None = None

    def __post_init__(self):
        if self.histories:
            object.__setattr__(self, "histories", tuple(_normalized(self.histories, "history distribution")))
        if self.tests:
            object.__setattr__(self, "tests", tuple(_normalized(self.tests, "test distribution")))
        if self.pairs:
            pairs = tuple(_normalized(self.pairs, "pair distribution"))
            for (h, h2), _ in pairs:
                if h.last != h2.last:
                    raise ValidationError(f"pair ({h}) / ({h2}) does not share its last observation")
            object.__setattr__(self, "pairs", pairs)
        if self.regimes is not None:
            missing = [h for h in self.pair_histories() if h not in self.regimes]
            if missing:
                raise ValidationError(f"regime label missing for {len(missing)} paired histories")

    def pair_histories(self) -> list[History]:
        seen: dict[History, None] = {}
        for (h, h2), _ in self.pairs:
            seen.setdefault(h)
            seen.setdefault(h2)
        return list(seen)

    def with_tests(self, tests: Sequence[tuple["Test", float]]) -> "EvaluationDistribution":
        return EvaluationDistribution(self.histories, tuple(tests), self.pairs, self.regimes)


def uniform(items: Iterable[Any]) -> list[tuple[Any, float]]:
    items = list(items)
    return [(x, 1.0 / len(items)) for x in items]


def same_last_pairs(
    histories: Sequence[tuple[History, float]], include_diagonal: bool = False
) -> list[tuple[tuple[History, History], float]]:
    """Draw h, then h' from the same distribution conditioned on last(h') = last(h)."""
    by_last: dict[int, list[tuple[History, float]]] = {}
    for h, w in histories:
        by_last.setdefault(h.last, []).append((h, w))
    pairs = []
    for h, w in histories:
        group = [(h2, w2) for h2, w2 in by_last[h.last] if include_diagonal or h2 != h]
        z = math.fsum(w2 for _, w2 in group)
        for h2, w2 in group:
            pairs.append(((h, h2), w * w2 / z))
    return pairs


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------


def environment_to_dict(env: FiniteMDP | FinitePOMDP) -> dict[str, Any]:
    if isinstance(env, FiniteMDP):
        return {
            "type": "mdp",
            "states": env.n_states,
            "actions": env.n_actions,
            "kernel": env.kernel.tolist(),
            "initial": env.initial.tolist(),
        }
    if isinstance(env, FinitePOMDP):
        out = {
            "type": "pomdp",
            "latent": env.n_latent,
            "actions": env.n_actions,
            "observations": env.n_obs,
            "transition": env.transition.tolist(),
            "observation": env.observation.tolist(),
            "initial": env.initial.tolist(),
        }
        if env.obs_labels is not None:
            out["obs_labels"] = list(env.obs_labels)
        return out
    raise TypeError(f"cannot serialise {type(env).__name__}")


def environment_from_dict(spec: dict[str, Any]) -> Any:
    """Inline ``{"type": "mdp"|"pomdp", ...}`` or ``{"builder": tag, ...params}``."""
    if "builder" in spec:
        params = {k: v for k, v in spec.items() if k != "builder"}
        return build_environment(spec["builder"], **params)
    kind = spec.get("type")
    try:
        if kind == "mdp":
            return FiniteMDP(spec["kernel"], spec["initial"])
        if kind == "pomdp":
            return FinitePOMDP(
                spec["transition"], spec["observation"], spec["initial"], spec.get("obs_labels")
            )
    except KeyError as exc:
        raise ConfigurationError(f"environment spec is missing {exc}") from None
    raise ConfigurationError(f"environment spec needs 'type' in {{mdp, pomdp}} or a 'builder' tag, got {spec!r}")
