"""Every bound as an executable inequality.

Each ``verify_*`` function computes a left-hand side from exact evaluation of
a policy, a right-hand side from the bound's formula with explicit
constants, and returns a :class:`BoundReport` (or a list of them).
``satisfied`` always means ``lhs <= rhs + 1e-9``; theorem-specific
requirements that are not an inequality (e.g. "the two counterfactuals
differ") are recorded as assumption flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Hashable, Sequence

import numpy as np

from selectlab.agents import (
    BetCell,
    BranchPolicy,
    MemoryMap,
    OptimalPolicy,
    PredictionCache,
    Resolver,
    cell_outcome,
    composite_q_table,
    composite_regrets,
    fair_cells,
    m_based_policy,
    pair_cells,
    threshold_cells,
    weighted_regret,
)
from selectlab.environments import (
    PROP1_U,
    EvaluationDistribution,
    FiniteMDP,
    FinitePOMDP,
    History,
    build_l3_pair,
    build_prop1_pair,
    counterfactual,
)
from selectlab.estimators import (
    PsrSystem,
    Sigma,
    estimate_psr_system,
    estimate_world_model,
    invertibility_gate,
    linear_update_violation,
    operator_error_constant,
    psr_system,
    recover_psr_operators,
    threshold_estimate,
)
from selectlab.errors import DomainError, InvertibilityError
from selectlab.goals import MARGIN_TOL, Test, is_high, is_low, test_universe
from selectlab.numerics import margin_constants

SLOP = 1e-9

WeightedTests = Sequence[tuple[Test, float]]
WeightedPairs = Sequence[tuple[tuple[History, History], float]]


@dataclass
class BoundReport:
    theorem: str
    lhs: float
    rhs: float
    inputs: dict[str, Any] = field(default_factory=dict)
    vacuous: bool = False
    flags: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs + SLOP

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        """Satisfied (or vacuous) with clean assumption flags."""
        return (self.vacuous or self.satisfied) and not self.flags


def _probs(pomdp: FinitePOMDP | PredictionCache) -> PredictionCache:
    return pomdp if isinstance(pomdp, PredictionCache) else PredictionCache(pomdp)


# ---------------------------------------------------------------------------
# Fully observed
# ---------------------------------------------------------------------------


def transition_rhs(truth: np.ndarray, n: int, gamma: float, avg_regret: float) -> float:
    """``2 t E[sqrt(p(1-p)/n)] + ((n+1)/n) avg_regret / c + 7/(2n)``.

    The 7/(2n) collects the proof's lower-order terms: ``|K_gamma| <= 2 t sigma + 2``
    contributes 2/n, the half-step offset 1/(2n) and the median-mean gap 1/n.
    """
    mc = margin_constants(gamma)
    if mc.t_is_infinite:
        return math.inf
    spread = float(np.sqrt(truth * (1.0 - truth) / n).mean())
    return 2.0 * mc.t_gamma * spread + ((n + 1) / n) * avg_regret / mc.c_gamma + 3.5 / n


def _transition_pieces(mdp: FiniteMDP, policy: BranchPolicy, n: int):
    F, q = composite_q_table(policy, mdp, n)
    avg_regret = float(composite_regrets(F, q).mean())
    est = estimate_world_model(policy, mdp, n)
    return est, avg_regret


def verify_thm1(mdp: FiniteMDP, policy: BranchPolicy, n: int, gamma: float, _pieces=None) -> BoundReport:
    """Mean absolute error of the composite-goal transition estimate."""
    if not (0.0 < gamma <= 0.5):
        raise DomainError(f"gamma must lie in (0, 1/2], got {gamma!r}")
    est, avg_regret = _pieces if _pieces is not None else _transition_pieces(mdp, policy, n)
    lhs = est.mean_abs_error
    rhs = transition_rhs(est.truth, n, gamma, avg_regret)
    max_lhs = 1.0 + 0.5 / n
    return BoundReport(
        "transition_recovery",
        lhs,
        rhs,
        inputs={"gamma": gamma, "n": n, "avg_regret": avg_regret, "policy": policy.describe()},
        vacuous=rhs >= max_lhs,
        details={"max_abs_error": float(est.abs_error.max()), "estimate": est},
    )


def verify_thm1_grid(mdp: FiniteMDP, policy: BranchPolicy, n: int, gammas: Sequence[float]) -> list[BoundReport]:
    pieces = _transition_pieces(mdp, policy, n)
    return [verify_thm1(mdp, policy, n, g, _pieces=pieces) for g in gammas]


def perturb_kernel(kernel: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic kernel within ``eps`` of ``kernel`` entrywise (zero-sum row noise)."""
    if eps < 0:
        raise DomainError("eps_cmp must be non-negative")
    P = np.array(kernel, dtype=float)
    out = P.copy()
    S, A, _ = P.shape
    for s in range(S):
        for a in range(A):
            d = rng.uniform(-1.0, 1.0, size=S)
            d -= d.mean()
            peak = np.abs(d).max()
            if peak == 0.0 or eps == 0.0:
                continue
            d *= eps / peak
            # shrink until every entry stays in [0, 1]
            t = 1.0
            for x, dx in zip(P[s, a], d):
                if dx > 0:
                    t = min(t, (1.0 - x) / dx)
                elif dx < 0:
                    t = min(t, x / -dx)
            out[s, a] = P[s, a] + t * d
    return out


def saturating_perturbations(kernel: np.ndarray, eps: float):
    """Kernels moving exactly one entry by +-eps (balanced within its row)."""
    P = np.array(kernel, dtype=float)
    S, A, _ = P.shape
    for s in range(S):
        for a in range(A):
            row = P[s, a]
            for j in range(S):
                for sign in (1.0, -1.0):
                    room_j = (1.0 - row[j]) if sign > 0 else row[j]
                    if room_j < eps:
                        continue
                    partners = [
                        i for i in range(S)
                        if i != j and ((row[i] if sign > 0 else 1.0 - row[i]) >= eps)
                    ]
                    if not partners:
                        continue
                    i = partners[0]
                    Q = P.copy()
                    Q[s, a, j] += sign * eps
                    Q[s, a, i] -= sign * eps
                    yield (s, a, j, sign), Q


def verify_cor1(
    mdp: FiniteMDP,
    policy: BranchPolicy,
    n: int,
    gamma: float,
    eps_cmp: float,
    seed: int = 0,
    mode: str = "random",
) -> BoundReport:
    """Error against an interventional kernel within ``eps_cmp`` of P."""
    pieces = _transition_pieces(mdp, policy, n)
    base = verify_thm1(mdp, policy, n, gamma, _pieces=pieces)
    est = pieces[0]
    if mode == "random":
        do_kernel = perturb_kernel(mdp.kernel, eps_cmp, np.random.default_rng(seed))
        chosen = None
    elif mode == "adversarial":
        do_kernel, chosen, worst = mdp.kernel, None, -1.0
        for tag, Q in saturating_perturbations(mdp.kernel, eps_cmp):
            err = float(np.abs(est.table - Q).mean())
            if err > worst:
                do_kernel, chosen, worst = Q, tag, err
    else:
        raise DomainError(f"unknown perturbation mode {mode!r}")
    gap = float(np.abs(do_kernel - mdp.kernel).max())
    flags = [] if gap <= eps_cmp + 1e-15 else ["do_kernel_outside_budget"]
    return BoundReport(
        "interventional_recovery",
        float(np.abs(est.table - do_kernel).mean()),
        base.rhs + eps_cmp,
        inputs={**base.inputs, "eps_cmp": eps_cmp, "mode": mode, "seed": seed},
        vacuous=base.vacuous,
        flags=flags,
        details={"kernel_gap": gap, "saturated_entry": chosen},
    )


def verify_cor2() -> BoundReport:
    """Equal interventional kernels, different counterfactuals."""
    pair = build_l3_pair()
    kernel_gap = pair.kernel_gap()
    cf_I = counterfactual(pair.model_I, 0, 1, 1)
    cf_II = counterfactual(pair.model_II, 0, 1, 1)
    same_I = counterfactual(pair.model_I, 1, 1, 1)
    same_II = counterfactual(pair.model_II, 1, 1, 1)
    flags = []
    if kernel_gap != 0:
        flags.append("kernels_differ")
    if cf_I == cf_II:
        flags.append("counterfactuals_agree")
    if (same_I, same_II) != (1, 1):
        flags.append("factual_counterfactual_mismatch")
    return BoundReport(
        "no_counterfactual_recovery",
        float(kernel_gap),
        float(abs(cf_I - cf_II)),
        inputs={"evidence": "a=0,s=1", "alt_action": 1},
        flags=flags,
        details={
            "kernel_gap_exact": str(kernel_gap),
            "kernels": {a: (str(pair.model_I.interventional(a)), str(pair.model_II.interventional(a))) for a in (0, 1)},
            "counterfactual_I": cf_I,
            "counterfactual_II": cf_II,
        },
    )


# ---------------------------------------------------------------------------
# Partially observed
# ---------------------------------------------------------------------------


def measure_nondegeneracy(
    pomdp: FinitePOMDP | PredictionCache,
    histories: Sequence[tuple[History, float]],
    tests: WeightedTests,
    gamma: float,
) -> tuple[float, float, float]:
    """``(q_gamma, eta, eta')``: mass of margin >= gamma, of p >= 1/2+gamma, of p <= 1/2-gamma."""
    probs = _probs(pomdp)
    q_g = eta = eta_p = 0.0
    for h, wh in histories:
        for t, wt in tests:
            p = probs(h, t)
            w = wh * wt
            if abs(p - 0.5) >= gamma - MARGIN_TOL:
                q_g += w
            if is_high(p, gamma):
                eta += w
            if is_low(p, gamma):
                eta_p += w
    return q_g, eta, eta_p


def verify_thm4(
    pomdp: FinitePOMDP | PredictionCache,
    policy: BranchPolicy,
    ev: EvaluationDistribution,
    gamma: float,
) -> BoundReport:
    """Wrong-bet mass on margin >= gamma cells is at most avg regret / c(gamma)."""
    probs = _probs(pomdp)
    c = margin_constants(gamma).c_gamma
    cells = fair_cells(probs, ev.histories, ev.tests)
    lhs = avg = 0.0
    for cell, w in cells:
        out = cell_outcome(policy, cell)
        avg += w * out.regret
        if cell.value.margin >= gamma - MARGIN_TOL:
            lhs += w * out.wrong_mass
    q_g, eta, eta_p = measure_nondegeneracy(probs, ev.histories, ev.tests, gamma)
    details: dict[str, Any] = {"q_gamma": q_g, "eta": eta, "eta_prime": eta_p}
    if q_g > 0:
        details["conditional_lhs"] = lhs / q_g
        details["conditional_rhs"] = avg / (q_g * c)
    else:
        details["conditional"] = "skipped: q_gamma = 0"
    return BoundReport(
        "predictive_necessity",
        lhs,
        avg / c,
        inputs={"gamma": gamma, "avg_regret": avg, "policy": policy.describe()},
        details=details,
    )


def prop1_closed_form(r: float, t: Test) -> float:
    zeros, ones = (0,) * t.depth, (1,) * t.depth
    return r * (zeros in t.event) + (1.0 - r) * (ones in t.event)


def prop1_universe(n_actions: int, depth: int) -> list[Test]:
    tests = set(test_universe(n_actions, 3, depth, ("singletons", "prefix", "complements")))
    tests.update(test_universe(n_actions, 3, min(depth, 2), ("all",)))
    return sorted(tests)


def verify_prop1(p: float, q: float, depth: int, n_actions: int = 2) -> BoundReport:
    """Optimal fair bets coincide across the two environments; predictive states differ."""
    E_p, E_q = build_prop1_pair(p, q, n_actions)
    h = History((PROP1_U,))
    cache_p, cache_q = PredictionCache(E_p), PredictionCache(E_q)
    disagreements = 0
    rule_breaks = 0
    gap = 0.0
    closed_dev = 0.0
    universe = prop1_universe(n_actions, depth)
    for t in universe:
        pp, pq = cache_p(h, t), cache_q(h, t)
        bet_p, bet_q = pp >= 0.5, pq >= 0.5
        disagreements += bet_p != bet_q
        rule_breaks += bet_p != ((0,) * t.depth in t.event)
        gap = max(gap, abs(pp - pq))
        closed_dev = max(closed_dev, abs(pp - prop1_closed_form(p, t)), abs(pq - prop1_closed_form(q, t)))
    flags = []
    if abs(gap - abs(p - q)) > 1e-12:
        flags.append("gap_not_p_minus_q")
    if closed_dev > 1e-12:
        flags.append("closed_form_mismatch")
    if rule_breaks:
        flags.append("bet_rule_mismatch")
    return BoundReport(
        "fair_bet_nonidentifiability",
        float(disagreements),
        0.0,
        inputs={"p": p, "q": q, "depth": depth},
        flags=flags,
        details={"n_tests": len(universe), "max_gap": gap, "closed_form_max_dev": closed_dev},
    )


def verify_thm5(
    pomdp: FinitePOMDP | PredictionCache,
    policy: BranchPolicy,
    ev: EvaluationDistribution,
    tests: WeightedTests | None,
    K: int,
) -> BoundReport:
    """Mean squared error of the threshold estimator is at most 2 avg_K + 1/(4K^2)."""
    probs = _probs(pomdp)
    tests = list(tests) if tests is not None else list(ev.tests)
    avg_K = weighted_regret(policy, threshold_cells(probs, ev.histories, tests, K))
    lhs = 0.0
    worst = 0.0
    for h, wh in ev.histories:
        for t, wt in tests:
            p = probs(h, t)
            err = threshold_estimate(policy, h, t, p, K) - p
            lhs += wh * wt * err * err
            worst = max(worst, abs(err))
    return BoundReport(
        "threshold_recovery",
        lhs,
        2.0 * avg_K + 1.0 / (4.0 * K * K),
        inputs={"K": K, "avg_regret": avg_K, "policy": policy.describe()},
        details={"max_abs_error": worst, "half_grid_step": 0.5 / K},
    )


def psr_reports(
    S: np.ndarray,
    Ys: dict[Sigma, np.ndarray],
    S_hat: np.ndarray,
    Y_hats: dict[Sigma, np.ndarray],
    eps_K: float,
    inputs: dict[str, Any],
) -> list[BoundReport]:
    """Entry-error bound, invertibility gate and operator-error bound for given estimates."""
    d = S.shape[0]
    n_sigma = len(Ys)
    sy_lhs = float(np.linalg.norm(S_hat - S) ** 2 + sum(np.linalg.norm(Y_hats[s] - Ys[s]) ** 2 for s in Ys))
    sy = BoundReport(
        "psr_entry_recovery",
        sy_lhs,
        d * d * (1 + n_sigma) * eps_K,
        inputs={**inputs, "eps_K": eps_K},
    )
    kappa = float(np.linalg.norm(np.linalg.inv(S), 2))
    gate, g_lhs, g_rhs = invertibility_gate(d, n_sigma, eps_K, kappa)
    B = {s: np.linalg.solve(S.T, Y.T).T for s, Y in Ys.items()}
    gate_details = {"gate_holds": gate, "gate_lhs": g_lhs, "gate_rhs": g_rhs, "inv_norm_S": kappa}
    if not gate:
        op = BoundReport(
            "psr_operator_recovery", 0.0, math.inf, inputs={**inputs, "eps_K": eps_K}, vacuous=True,
            details={"skipped": "invertibility condition fails", **gate_details},
        )
        return [sy, op]
    flags = []
    try:
        ops = recover_psr_operators(S_hat, Y_hats, error_budget=eps_K, inv_norm=kappa)
    except InvertibilityError:
        # cannot happen when the gate holds; surfaced rather than hidden
        flags.append("gate_held_but_S_hat_singular")
        return [sy, BoundReport("psr_operator_recovery", math.inf, 0.0, inputs=inputs, flags=flags)]
    b_lhs = float(sum(np.linalg.norm(ops.B_hat[s] - B[s]) ** 2 for s in Ys))
    C = operator_error_constant(S, Ys)
    op = BoundReport(
        "psr_operator_recovery",
        b_lhs,
        C * eps_K,
        inputs={**inputs, "eps_K": eps_K},
        details={
            **gate_details,
            "C": C,
            "residual": ops.residual,
            "operator_error_fro": math.sqrt(b_lhs),
            "inv_norm_S_hat": ops.inv_norm_hat,
            "operators": ops,
        },
    )
    return [sy, op]


def verify_thm6(
    pomdp: FinitePOMDP | PredictionCache,
    tests: Sequence[Test],
    histories: Sequence[History],
    policy: BranchPolicy,
    K: int,
    update_histories: Sequence[History] | None = None,
) -> list[BoundReport]:
    """Threshold-estimated S and Y, then B_hat = Y_hat S_hat^{-1}.

    The linear update is first checked on ``update_histories`` (default: the
    chosen histories); a violation above 1e-8 ends the check with an
    ``assumption failed`` flag.
    """
    probs = _probs(pomdp)
    system = psr_system(probs, tests, histories)
    inputs = {"K": K, "d": system.d, "policy": policy.describe()}
    if abs(np.linalg.det(system.S)) < 1e-12:
        return [BoundReport("psr_entry_recovery", 0.0, 0.0, inputs=inputs, flags=["S_not_invertible"])]
    violation = linear_update_violation(probs, system, update_histories or histories)
    if violation > 1e-8:
        return [
            BoundReport(
                "psr_entry_recovery", 0.0, 0.0, inputs=inputs,
                flags=["linear_update_assumption_failed"], details={"violation": violation},
            )
        ]
    S_hat, Y_hats = estimate_psr_system(policy, system, K)
    avg_K = _psr_threshold_regret(policy, probs, system, K)
    eps_K = 2.0 * avg_K + 1.0 / (4.0 * K * K)
    reports = psr_reports(system.S, system.Y, S_hat, Y_hats, eps_K, {**inputs, "avg_regret": avg_K})
    for r in reports:
        r.details["linear_update_violation"] = violation
    return reports


def _psr_threshold_regret(policy: BranchPolicy, probs: PredictionCache, system: PsrSystem, K: int) -> float:
    from selectlab.estimators import compose_test

    family = list(system.tests)
    for sig in system.sigmas:
        family.extend(compose_test(sig, t) for t in system.tests)
    hist = [(h, 1.0 / len(system.histories)) for h in system.histories]
    # indexed family: duplicates count separately, as in the entry count d^2 (1 + |A||O|)
    tests = [(t, 1.0 / len(family)) for t in family]
    return weighted_regret(policy, threshold_cells(probs, hist, tests, K))


# ---------------------------------------------------------------------------
# Memory and aliasing
# ---------------------------------------------------------------------------


def separating_tests(
    probs: PredictionCache, h: History, h2: History, tests: WeightedTests, gamma: float, oriented: bool = False
) -> list[tuple[Test, float, str]]:
    """Witness tests for (h, h'): ``high`` orientation is p(h) >= 1/2+gamma, p(h') <= 1/2-gamma.

    Unless ``oriented``, the mirrored orientation (``low``) is included too;
    either one forces the same pair regret on an aliased pair.
    """
    out = []
    for t, w in tests:
        ph, ph2 = probs(h, t), probs(h2, t)
        if is_high(ph, gamma) and is_low(ph2, gamma):
            out.append((t, w, "high"))
        elif not oriented and is_low(ph, gamma) and is_high(ph2, gamma):
            out.append((t, w, "low"))
    return out


def _alias_mass(
    probs: PredictionCache,
    memory: MemoryMap,
    pairs: WeightedPairs,
    tests: WeightedTests,
    gamma: float,
    pair_filter=None,
) -> tuple[float, float]:
    """(alias mass, total witness mass) under ``pairs x tests``."""
    alias = witness = 0.0
    for (h, h2), wp in pairs:
        if pair_filter is not None and not pair_filter(h, h2):
            continue
        mass = math.fsum(w for _, w, _ in separating_tests(probs, h, h2, tests, gamma))
        witness += wp * mass
        if memory.aliased(h, h2):
            alias += wp * mass
    return alias, witness


def _pair_regret(probs, memory, resolver, pairs, tests, policy):
    cells = pair_cells(probs, pairs, tests)
    if policy is None:
        policy = m_based_policy(memory, cells, resolver)
    return weighted_regret(policy, cells), policy


def verify_thm7(
    pomdp: FinitePOMDP | PredictionCache,
    memory: MemoryMap,
    resolver: Resolver,
    pairs: WeightedPairs,
    tests: WeightedTests,
    gamma: float,
    policy: BranchPolicy | None = None,
) -> BoundReport:
    """Pair-averaged regret of an M-based policy is at least alias mass * c(gamma) / 2.

    ``policy`` defaults to the resolver's M-based policy; any policy passed in
    must factor through ``memory``.
    """
    probs = _probs(pomdp)
    c = margin_constants(gamma).c_gamma
    q_alias, witness = _alias_mass(probs, memory, pairs, tests, gamma)
    pair_regret, policy = _pair_regret(probs, memory, resolver, pairs, tests, policy)
    return BoundReport(
        "memory_necessity",
        q_alias * c / 2.0,
        pair_regret,
        inputs={"gamma": gamma, "resolver": str(resolver), "memory_ids": len(memory.alphabet)},
        vacuous=witness == 0.0,
        details={
            "q_alias": q_alias,
            "witness_mass": witness,
            "alias_mass_cap": 2.0 * pair_regret / c,
        },
    )


def verify_cor3(
    pomdp: FinitePOMDP | PredictionCache,
    blocks: Sequence[WeightedTests],
    memory: MemoryMap,
    resolver: Resolver,
    pairs: WeightedPairs,
    gamma: float,
    policy: BranchPolicy | None = None,
) -> list[BoundReport]:
    """Per-block alias mass <= 2 pair_regret / (p_i c(gamma)).

    ``blocks`` partition the test distribution; weights are the joint
    weights under D (block mass p_i is their sum).
    """
    probs = _probs(pomdp)
    c = margin_constants(gamma).c_gamma
    total = math.fsum(w for block in blocks for _, w in block)
    D = [(t, w / total) for block in blocks for t, w in block]
    seen = [t for t, _ in D]
    if len(set(seen)) != len(seen):
        raise DomainError("blocks must be disjoint")
    pair_regret, policy = _pair_regret(probs, memory, resolver, pairs, D, policy)
    reports = []
    for i, block in enumerate(blocks):
        p_i = math.fsum(w for _, w in block) / total
        if p_i <= 0.0:
            continue
        D_i = [(t, w / total / p_i) for t, w in block]
        q_i, witness_i = _alias_mass(probs, memory, pairs, D_i, gamma)
        reports.append(
            BoundReport(
                "block_modularity",
                q_i,
                2.0 * pair_regret / (p_i * c),
                inputs={"gamma": gamma, "block": i, "block_mass": p_i, "resolver": str(resolver)},
                vacuous=witness_i == 0.0,
                details={"pair_regret": pair_regret},
            )
        )
    return reports


def mixture_tests(regimes: Sequence[tuple[float, WeightedTests]]) -> list[tuple[Test, float]]:
    """Marginal ``D = sum_i Lambda(i) D_i``; supports may overlap."""
    lam_total = math.fsum(l for l, _ in regimes)
    merged: dict[Test, float] = {}
    for lam, tests in regimes:
        z = math.fsum(w for _, w in tests)
        for t, w in tests:
            merged[t] = merged.get(t, 0.0) + (lam / lam_total) * (w / z)
    return sorted(merged.items())


def verify_cor4(
    pomdp: FinitePOMDP | PredictionCache,
    regimes: Sequence[tuple[float, WeightedTests]],
    memory: MemoryMap,
    resolver: Resolver,
    pairs: WeightedPairs,
    labels: dict[History, int],
    gamma: float,
    policy: BranchPolicy | None = None,
) -> BoundReport:
    """Probability of aliasing a regime-mismatched pair on a separating test."""
    probs = _probs(pomdp)
    c = margin_constants(gamma).c_gamma
    D = mixture_tests(regimes)
    mismatch = math.fsum(w for (h, h2), w in pairs if labels[h] != labels[h2])
    alias, witness = _alias_mass(probs, memory, pairs, D, gamma, pair_filter=lambda h, h2: labels[h] != labels[h2])
    pair_regret, policy = _pair_regret(probs, memory, resolver, pairs, D, policy)
    return BoundReport(
        "regime_tracking",
        alias,
        2.0 * pair_regret / c,
        inputs={"gamma": gamma, "regimes": len(regimes), "resolver": str(resolver)},
        vacuous=mismatch == 0.0,
        details={"regime_mismatch_mass": mismatch, "witness_mass": witness, "pair_regret": pair_regret},
    )


def decision_profile(probs: PredictionCache, h: History, tests: Sequence[Test], gamma: float) -> tuple[str, ...]:
    """Per test: ``L`` if p >= 1/2+gamma, ``R`` if p <= 1/2-gamma, else ``_`` (undecided)."""
    out = []
    for t in tests:
        p = probs(h, t)
        out.append("L" if is_high(p, gamma) else "R" if is_low(p, gamma) else "_")
    return tuple(out)


def profile_memory(profiles: dict[History, tuple[str, ...]], rng: np.random.Generator | None = None) -> MemoryMap:
    """A gamma-minimal memory: one (randomly relabelled) id per profile class."""
    classes = sorted(set(profiles.values()))
    ids = list(range(len(classes)))
    if rng is not None:
        ids = [int(i) for i in rng.permutation(len(classes))]
    label = {cls: f"m{ids[i]}" for i, cls in enumerate(classes)}
    return MemoryMap({h: label[p] for h, p in profiles.items()})


def find_recoding(M1: MemoryMap, M2: MemoryMap, support: Sequence[History]):
    """Maps phi, psi with M1 = phi(M2) and M2 = psi(M1) on ``support``, or None."""
    phi: dict[Hashable, Hashable] = {}
    psi: dict[Hashable, Hashable] = {}
    for h in support:
        a, b = M1(h), M2(h)
        if phi.setdefault(b, a) != a or psi.setdefault(a, b) != b:
            return None
    return phi, psi


def verify_cor5(
    pomdp: FinitePOMDP | PredictionCache,
    ev: EvaluationDistribution,
    tests: WeightedTests | None,
    gamma: float,
    memories: tuple[MemoryMap, MemoryMap] | None = None,
    seed: int = 0,
) -> BoundReport:
    """Two gamma-minimal low-regret memories agree up to an invertible recoding.

    Without ``memories`` two independently relabelled profile partitions are
    built.  LHS counts support histories where no recoding exists (0 when
    certified).
    """
    probs = _probs(pomdp)
    c = margin_constants(gamma).c_gamma
    tests = list(tests) if tests is not None else list(ev.tests)
    test_list = [t for t, _ in tests]
    support = ev.pair_histories()
    profiles = {h: decision_profile(probs, h, test_list, gamma) for h in support}

    flags: list[str] = []
    incomplete = []
    for (h, h2), w in ev.pairs:
        if w > 0 and profiles[h] != profiles[h2] and not separating_tests(probs, h, h2, tests, gamma):
            incomplete.append(f"{h} / {h2}")
    if incomplete:
        flags.append("gamma_completeness_failed")

    if memories is None:
        rng = np.random.default_rng(seed)
        memories = (profile_memory(profiles, rng), profile_memory(profiles, rng))
    minimality = []
    premise = []
    for j, M in enumerate(memories, start=1):
        if any(profiles[h] == profiles[g] and M(h) != M(g) for h in support for g in support):
            minimality.append(j)
        q_alias, _ = _alias_mass(probs, M, ev.pairs, tests, gamma)
        if q_alias > 0:
            premise.append({"memory": j, "regret_floor": q_alias * c / 2.0})
    if minimality:
        flags.append("gamma_minimality_failed")
    if premise:
        flags.append("low_regret_premise_fails")

    recoding = find_recoding(memories[0], memories[1], support)
    conflicts = 0 if recoding is not None else sum(
        1 for h in support for g in support
        if (memories[0](h) == memories[0](g)) != (memories[1](h) == memories[1](g))
    )
    return BoundReport(
        "representational_convergence",
        float(conflicts),
        0.0,
        inputs={"gamma": gamma, "support": len(support), "tests": len(test_list)},
        flags=flags,
        details={
            "profile_classes": len(set(profiles.values())),
            "phi": recoding[0] if recoding else None,
            "psi": recoding[1] if recoding else None,
            "incomplete_pairs": incomplete,
            "premise_failures": premise,
        },
    )


def lemma1_identity(n_triples: int, seed: int) -> BoundReport:
    """Max deviation between regret from its definition and the wrong-mass identity."""
    from selectlab.numerics import bet_regret

    rng = np.random.default_rng(seed)
    worst = 0.0
    for u_L, u_R, q in rng.uniform(0.0, 1.0, size=(n_triples, 3)):
        out = bet_regret(float(u_L), float(u_R), float(q))
        ident = out.wrong_mass * abs(u_L - u_R) / max(u_L, u_R)
        worst = max(worst, abs(out.regret - ident))
    return BoundReport("bet_regret_identity", worst, 1e-12, inputs={"n_triples": n_triples, "seed": seed})
