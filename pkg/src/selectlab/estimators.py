"""Recovery procedures that read a model back out of betting behaviour.

* transition kernel from composite-goal branch probabilities:
  ``p_hat = (sum_k (1 - q_k) - 1/2) / n``
* predictive state from threshold bets: ``p_hat_T(h) = mean_k q_{T, lambda_k}(h)``
* linear-PSR operators ``B_sigma = Y_sigma S^{-1}`` from estimated S and Y.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from selectlab.agents import BetCell, BranchPolicy, PredictionCache, composite_q_table
from selectlab.environments import FiniteMDP, FinitePOMDP, History
from selectlab.errors import DomainError, InvertibilityError, ResourceError
from selectlab.goals import (
    DEFAULT_TEST_DEPTH_CAP,
    Test,
    ThresholdGoal,
    threshold_goal_value,
    threshold_grid,
)

Sigma = tuple[int, int]  # (action, observation)


# ---------------------------------------------------------------------------
# Fully observed: transition kernel
# ---------------------------------------------------------------------------


@dataclass
class TransitionEstimate:
    table: np.ndarray  # p_hat[s, a, s'], unclamped
    truth: np.ndarray | None = None
    n: int = 0

    @property
    def clamped(self) -> np.ndarray:
        return np.clip(self.table, 0.0, 1.0)

    @property
    def abs_error(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("no reference kernel attached")
        return np.abs(self.table - self.truth)

    @property
    def mean_abs_error(self) -> float:
        return float(self.abs_error.mean())


def estimate_transition(q_row: Sequence[float], n: int) -> float:
    q_row = np.asarray(q_row, dtype=float)
    if q_row.shape != (n + 1,):
        raise DomainError(f"expected {n + 1} branch probabilities, got shape {q_row.shape}")
    if np.any(q_row < 0.0) or np.any(q_row > 1.0):
        raise DomainError("branch probabilities must lie in [0, 1]")
    return (math.fsum(1.0 - q_row) - 0.5) / n


def estimate_world_model(policy: BranchPolicy, mdp: FiniteMDP, n: int) -> TransitionEstimate:
    _, q = composite_q_table(policy, mdp, n)
    table = ((1.0 - q).sum(axis=-1) - 0.5) / n
    return TransitionEstimate(table=table, truth=np.array(mdp.kernel), n=n)


# ---------------------------------------------------------------------------
# Partially observed: threshold estimator
# ---------------------------------------------------------------------------


@dataclass
class PredictiveStateEstimate:
    tests: list[Test]
    values: np.ndarray  # eta_hat over tests
    truth: np.ndarray | None = None

    def __getitem__(self, t: Test) -> float:
        return float(self.values[self.tests.index(t)])

    @property
    def squared_errors(self) -> np.ndarray:
        if self.truth is None:
            raise ValueError("no reference predictive state attached")
        return (self.values - self.truth) ** 2


def threshold_estimate(policy: BranchPolicy, h: History | None, t: Test | None, p: float, K: int) -> float:
    """Mean of the branch-1 probabilities over the K-point threshold grid."""
    qs = []
    for lam in threshold_grid(K):
        goal = ThresholdGoal(t, float(lam)) if t is not None else None
        qs.append(policy.q(BetCell(goal, h, threshold_goal_value(p, float(lam)))))
    return math.fsum(qs) / K


def estimate_predictive_state(
    policy: BranchPolicy,
    pomdp: FinitePOMDP | PredictionCache,
    h: History,
    tests: Sequence[Test],
    K: int,
) -> PredictiveStateEstimate:
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    probs = pomdp if isinstance(pomdp, PredictionCache) else PredictionCache(pomdp)
    truth = np.array([probs(h, t) for t in tests])
    values = np.array([threshold_estimate(policy, h, t, p, K) for t, p in zip(tests, truth)])
    return PredictiveStateEstimate(list(tests), values, truth)


def compose_test(sigma: Sigma, t: Test, cap: int = DEFAULT_TEST_DEPTH_CAP) -> Test:
    """``sigma o T = ((a, alpha), {o} x W)``."""
    a, o = sigma
    if t.depth + 1 > cap:
        raise ResourceError(f"composed test depth {t.depth + 1} exceeds cap {cap}")
    return Test((a,) + t.actions, tuple((o,) + w for w in t.event))


# ---------------------------------------------------------------------------
# Linear PSR operators
# ---------------------------------------------------------------------------


@dataclass
class PsrSystem:
    """Exact ``S`` and ``Y_sigma`` for a test list and a set of histories."""

    tests: list[Test]
    histories: list[History]
    S: np.ndarray
    Y: dict[Sigma, np.ndarray]

    @property
    def d(self) -> int:
        return len(self.tests)

    @property
    def sigmas(self) -> list[Sigma]:
        return sorted(self.Y)


def all_sigmas(pomdp: FinitePOMDP) -> list[Sigma]:
    return list(itertools.product(range(pomdp.n_actions), range(pomdp.n_obs)))


def state_vector(probs: PredictionCache, h: History, tests: Sequence[Test]) -> np.ndarray:
    return np.array([probs(h, t) for t in tests])


def psr_system(pomdp: FinitePOMDP | PredictionCache, tests: Sequence[Test], histories: Sequence[History]) -> PsrSystem:
    probs = pomdp if isinstance(pomdp, PredictionCache) else PredictionCache(pomdp)
    env = probs.pomdp
    tests = list(tests)
    S = np.column_stack([state_vector(probs, h, tests) for h in histories])
    Y = {}
    for sigma in all_sigmas(env):
        composed = [compose_test(sigma, t) for t in tests]
        Y[sigma] = np.column_stack([state_vector(probs, h, composed) for h in histories])
    return PsrSystem(tests, list(histories), S, Y)


def select_histories(
    pomdp: FinitePOMDP | PredictionCache, tests: Sequence[Test], candidates: Iterable[History], d: int | None = None
) -> list[History]:
    """Greedy choice of ``d`` histories maximising the smallest singular value of S."""
    probs = pomdp if isinstance(pomdp, PredictionCache) else PredictionCache(pomdp)
    d = len(tests) if d is None else d
    pool = list(candidates)
    vecs = {h: state_vector(probs, h, tests) for h in pool}
    chosen: list[History] = []
    for _ in range(d):
        best, best_score = None, -1.0
        for h in pool:
            if h in chosen:
                continue
            M = np.column_stack([vecs[g] for g in chosen + [h]])
            score = float(np.linalg.svd(M, compute_uv=False).min())
            if score > best_score:
                best, best_score = h, score
        if best is None:
            break
        chosen.append(best)
    return chosen


def linear_update_violation(
    pomdp: FinitePOMDP | PredictionCache, system: PsrSystem, histories: Iterable[History]
) -> float:
    """``max_h max_sigma || s_sigma(h) - B_sigma s(h) ||_inf`` with ``B = Y S^{-1}``.

    Zero (up to rounding) exactly when the linear update holds on ``histories``.
    """
    probs = pomdp if isinstance(pomdp, PredictionCache) else PredictionCache(pomdp)
    B = {sig: np.linalg.solve(system.S.T, Y.T).T for sig, Y in system.Y.items()}
    worst = 0.0
    for h in histories:
        s = state_vector(probs, h, system.tests)
        for sig, Bs in B.items():
            s_sig = state_vector(probs, h, [compose_test(sig, t) for t in system.tests])
            worst = max(worst, float(np.abs(s_sig - Bs @ s).max()))
    return worst


@dataclass
class PsrOperators:
    S_hat: np.ndarray
    Y_hat: dict[Sigma, np.ndarray]
    B_hat: dict[Sigma, np.ndarray]
    inv_norm_hat: float  # ||S_hat^{-1}||_2 (SVD)
    min_pivot: float
    condition_holds: bool | None = None  # invertibility gate, when a budget was supplied
    condition_lhs: float | None = None
    condition_rhs: float | None = None
    residual: float = 0.0  # max_sigma ||B_hat S_hat - Y_hat||_F
    diagnostics: dict[str, float] = field(default_factory=dict)


def invertibility_gate(d: int, n_sigma: int, eps_K: float, inv_norm: float) -> tuple[bool, float, float]:
    """``d sqrt((1 + |A||O|) eps_K) <= 1 / (2 ||S^{-1}||_2)``."""
    lhs = d * math.sqrt((1 + n_sigma) * eps_K)
    rhs = 1.0 / (2.0 * inv_norm)
    return lhs <= rhs, lhs, rhs


def recover_psr_operators(
    S_hat: np.ndarray,
    Y_hats: dict[Sigma, np.ndarray],
    error_budget: float | None = None,
    inv_norm: float | None = None,
) -> PsrOperators:
    """``B_hat_sigma = Y_hat_sigma S_hat^{-1}`` through a pivoted LU factorization.

    ``error_budget`` (eps_K) and ``inv_norm`` (``||S^{-1}||_2`` of the true S, or
    a bound on it) enable the invertibility gate; the result records whether
    it holds but the solve is attempted regardless.
    """
    S_hat = np.asarray(S_hat, dtype=float)
    d = S_hat.shape[0]
    if S_hat.shape != (d, d):
        raise DomainError(f"S_hat must be square, got {S_hat.shape}")
    for sig, Y in Y_hats.items():
        if np.shape(Y) != (d, d):
            raise DomainError(f"Y_hat{sig} has shape {np.shape(Y)}, expected {(d, d)}")

    svals = np.linalg.svd(S_hat, compute_uv=False)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
    with warnings.catch_warnings():
        # singularity is reported below with our own tolerance
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(S_hat, check_finite=True)
    min_pivot = float(np.abs(np.diag(lu)).min())
    tol = 1e-10 * d * max(float(np.abs(S_hat).max()), 1e-300)
    if min_pivot <= tol:
        raise InvertibilityError(
            f"S_hat is singular: smallest pivot {min_pivot:.3e} <= tolerance {tol:.3e} "
            f"(condition number {cond:.3e})",
            condition_number=cond,
        )

    B_hat = {}
    residual = 0.0
    for sig, Y in sorted(Y_hats.items()):
        Y = np.asarray(Y, dtype=float)
        # B S = Y  <=>  S^T B^T = Y^T
        B = scipy.linalg.lu_solve((lu, piv), Y.T, trans=1).T
        B_hat[sig] = B
        residual = max(residual, float(np.linalg.norm(B @ S_hat - Y)))

    ops = PsrOperators(
        S_hat=S_hat,
        Y_hat={k: np.asarray(v, dtype=float) for k, v in Y_hats.items()},
        B_hat=B_hat,
        inv_norm_hat=float(1.0 / svals[-1]),
        min_pivot=min_pivot,
        residual=residual,
        diagnostics={"condition_number": cond},
    )
    if error_budget is not None and inv_norm is not None:
        ops.condition_holds, ops.condition_lhs, ops.condition_rhs = invertibility_gate(
            d, len(Y_hats), error_budget, inv_norm
        )
    return ops


def operator_error_constant(S: np.ndarray, Ys: dict[Sigma, np.ndarray]) -> float:
    """``8 d^2 (1 + |A||O|) (||S^{-1}||^2 + ||S^{-1}||^4 sum_sigma ||Y_sigma||^2)`` (spectral norms)."""
    d = S.shape[0]
    kappa = float(np.linalg.norm(np.linalg.inv(S), 2))
    y_sq = math.fsum(float(np.linalg.norm(Y, 2)) ** 2 for Y in Ys.values())
    return 8.0 * d * d * (1 + len(Ys)) * (kappa**2 + kappa**4 * y_sq)


def estimate_psr_system(policy: BranchPolicy, system: PsrSystem, K: int) -> tuple[np.ndarray, dict[Sigma, np.ndarray]]:
    """Threshold-bet estimates of every entry of S and Y_sigma."""

    def est(M: np.ndarray, tests: list[Test]) -> np.ndarray:
        out = np.empty_like(M)
        for j, h in enumerate(system.histories):
            for i, t in enumerate(tests):
                out[i, j] = threshold_estimate(policy, h, t, float(M[i, j]), K)
        return out

    S_hat = est(system.S, system.tests)
    Y_hat = {sig: est(Y, [compose_test(sig, t) for t in system.tests]) for sig, Y in system.Y.items()}
    return S_hat, Y_hat
