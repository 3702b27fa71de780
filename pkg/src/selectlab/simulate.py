"""Seeded Monte Carlo counterparts of the exact quantities.

Used only as an independent cross-check: every function returns an
estimate together with its standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from selectlab.environments import FiniteMDP, FinitePOMDP, History
from selectlab.errors import ConditioningError, PreconditionError
from selectlab.goals import CompositeGoal, Test


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int

    def agrees(self, exact: float, z: float = 4.0) -> bool:
        # a degenerate (0 or 1) proportion has zero sample spread
        se = max(self.stderr, 1.0 / self.n)
        return abs(self.mean - exact) <= z * se


def _proportion(hits: np.ndarray) -> McEstimate:
    n = int(hits.size)
    p = float(hits.mean())
    return McEstimate(p, math.sqrt(p * (1.0 - p) / n), n)


def _step_categorical(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of a (N, k) probability table."""
    u = rng.random(rows.shape[0])[:, None]
    idx = (rows.cumsum(axis=1) < u).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def sample_test_probability(
    pomdp: FinitePOMDP, h: History, t: Test, n_samples: int, rng: np.random.Generator
) -> McEstimate:
    """Rejection sampling: simulate, keep runs reproducing ``h``, then play ``t``."""
    x = _step_categorical(np.broadcast_to(pomdp.initial, (n_samples, pomdp.n_latent)), rng)
    o = _step_categorical(pomdp.observation[x], rng)
    keep = o == h.observations[0]
    for a, obs in zip(h.actions, h.observations[1:]):
        x = _step_categorical(pomdp.transition[x, a], rng)
        o = _step_categorical(pomdp.observation[x], rng)
        keep &= o == obs
    if not keep.any():
        raise ConditioningError(f"no sample reproduced history {h}")
    x = x[keep]
    seqs = []
    for a in t.actions:
        x = _step_categorical(pomdp.transition[x, a], rng)
        seqs.append(_step_categorical(pomdp.observation[x], rng))
    words = np.stack(seqs, axis=1) if seqs else np.zeros((x.size, 0), dtype=int)
    event = np.array(t.event, dtype=int).reshape(len(t.event), t.depth)
    hits = (words[:, None, :] == event[None, :, :]).all(axis=2).any(axis=1)
    return _proportion(hits)


def sample_composite_goal(
    mdp: FiniteMDP, g: CompositeGoal, n_samples: int, rng: np.random.Generator, max_steps: int = 100_000
) -> McEstimate:
    """Probability that at most ``k`` of the next ``n`` attempts of (s, a) land in s'.

    The agent acts uniformly at random except in state ``s``, where it plays
    ``a``; the marker action at time 0 is not counted as an attempt.
    """
    S, A = mdp.n_states, mdp.n_actions
    state = _step_categorical(np.broadcast_to(mdp.initial, (n_samples, S)), rng)
    action = rng.integers(A, size=n_samples)
    attempts = np.zeros(n_samples, dtype=int)
    successes = np.zeros(n_samples, dtype=int)
    counted = np.zeros(n_samples, dtype=bool)  # the time-0 transition is never an attempt
    for _ in range(max_steps):
        state_next = _step_categorical(mdp.kernel[state, action], rng)
        live = attempts < g.n
        attempt_now = live & (state == g.s) & (action == g.a) & counted
        attempts += attempt_now
        successes += attempt_now & (state_next == g.s_next)
        state = state_next
        action = np.where(state == g.s, g.a, rng.integers(A, size=n_samples))
        counted = np.ones(n_samples, dtype=bool)
        if (attempts >= g.n).all():
            return _proportion(successes <= g.k)
    raise PreconditionError("attempt budget not reached within max_steps")


def sample_bet_value(u1: float, u2: float, q: float, n_samples: int, rng: np.random.Generator) -> McEstimate:
    """Success rate of committing to branch 1 with probability ``q``."""
    branch1 = rng.random(n_samples) < q
    win = np.where(branch1, rng.random(n_samples) < u1, rng.random(n_samples) < u2)
    return _proportion(win)
