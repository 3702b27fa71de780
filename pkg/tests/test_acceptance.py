"""Acceptance checks, one per criterion.

Each check returns ``(ok, detail)`` and prints a ``PASS``/``FAIL`` line.
Run under pytest, or directly with ``python3 tests/test_acceptance.py``
for the summary lines alone.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from selectlab import cli
from selectlab.agents import MemoryMap, PredictionCache, constant_memory, identity_memory, noisy_policy, optimal_policy
from selectlab.environments import (
    EvaluationDistribution,
    FinitePOMDP,
    History,
    enumerate_histories,
    random_mdp,
    random_pomdp,
)
from selectlab.goals import CompositeGoal, Test, composite_goal_value, test_probability
from selectlab.numerics import bet_regret
from selectlab.scenarios import (
    alias_blocks,
    alias_instance,
    alias_regimes,
    dyadic_instance,
    pomdp_evaluation,
    random_pair_config,
)
from selectlab.simulate import sample_bet_value, sample_composite_goal, sample_test_probability
from selectlab.verifier import (
    lemma1_identity,
    psr_reports,
    verify_cor1,
    verify_cor2,
    verify_cor3,
    verify_cor4,
    verify_cor5,
    verify_prop1,
    verify_thm1_grid,
    verify_thm4,
    verify_thm5,
    verify_thm6,
    verify_thm7,
)

MC_SAMPLES = 100_000


def _line(number: int, title: str, ok: bool, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"


def regret_identity() -> tuple[bool, str]:
    start = time.perf_counter()
    r = lemma1_identity(10_000, 2024)
    elapsed = time.perf_counter() - start
    return r.lhs <= 1e-12 and elapsed < 1.0, f"max deviation {r.lhs:.2e}, {elapsed:.2f}s"


def transition_sweep() -> tuple[bool, str]:
    start = time.perf_counter()
    gammas = (0.1, 0.25, 0.4)
    cells = violations = vacuous = decay_misses = 0
    for n_states in range(3, 7):
        for n_actions in (2, 3):
            mdp = random_mdp(n_states, n_actions, np.random.default_rng(100 * n_states + n_actions))
            for eps in (0.0, 0.01, 0.05, 0.1):
                policy = noisy_policy(eps) if eps else optimal_policy()
                for n in (10, 20, 50, 100, 200):
                    reports = verify_thm1_grid(mdp, policy, n, gammas)
                    for r in reports:
                        cells += 1
                        vacuous += r.vacuous
                        violations += not (r.vacuous or r.satisfied)
                    if eps == 0.0:
                        decay_misses += reports[0].details["max_abs_error"] > 2.0 / n + 1e-12
    elapsed = time.perf_counter() - start
    ok = violations == 0 and decay_misses == 0 and elapsed < 30.0
    return ok, (
        f"{cells} cells, {vacuous} vacuous, {violations} violations, "
        f"{decay_misses} zero-noise cells above 2/n, {elapsed:.1f}s"
    )


def interventional_sweep() -> tuple[bool, str]:
    cells = bad = 0
    for seed in range(4):
        mdp = random_mdp(4, 2, np.random.default_rng(seed))
        for policy in (optimal_policy(), noisy_policy(0.05)):
            for n in (20, 100):
                for eps_cmp in (0.0, 0.02, 0.05):
                    for mode in ("random", "adversarial"):
                        r = verify_cor1(mdp, policy, n, 0.25, eps_cmp, seed=seed, mode=mode)
                        cells += 1
                        bad += not (r.satisfied and not r.flags)
    return bad == 0, f"{cells} cells, {bad} violations"


def counterfactual_pair() -> tuple[bool, str]:
    r = verify_cor2()
    cf = (r.details["counterfactual_I"], r.details["counterfactual_II"])
    ok = r.lhs == 0.0 and cf == (1, 0) and not r.flags
    return ok, f"kernel gap {r.details['kernel_gap_exact']}, counterfactuals {cf}"


def predictive_necessity_sweep() -> tuple[bool, str]:
    cells = bad = conditional = 0
    for seed in range(6):
        rng = np.random.default_rng(300 + seed)
        env = random_pomdp(int(rng.integers(2, 4)), 2, 2, rng)
        for depth in (1, 2, 3):
            ev = pomdp_evaluation(env, 1, depth)
            for eps in (0.0, 0.01, 0.05, 0.1):
                policy = noisy_policy(eps) if eps else optimal_policy()
                for gamma in (0.1, 0.25, 0.4):
                    r = verify_thm4(env, policy, ev, gamma)
                    cells += 1
                    bad += not r.satisfied
                    if r.details["q_gamma"] > 0:
                        conditional += 1
                        bad += r.details["conditional_lhs"] > r.details["conditional_rhs"] + 1e-9
    return bad == 0, f"{cells} cells, {conditional} conditional checks, {bad} violations"


def fair_bet_counterexample() -> tuple[bool, str]:
    r = verify_prop1(0.7, 0.6, 3)
    gap = r.details["max_gap"]
    ok = r.lhs == 0.0 and not r.flags and abs(gap - 0.1) <= 1e-12 and r.details["closed_form_max_dev"] <= 1e-12
    return ok, f"{r.details['n_tests']} tests, {int(r.lhs)} bet disagreements, max gap {gap:.15f}"


def threshold_sweep() -> tuple[bool, str]:
    cells = bad = 0
    for seed in range(3):
        env = random_pomdp(3, 2, 2, np.random.default_rng(500 + seed))
        ev = pomdp_evaluation(env, 1, 2)
        for K in (1, 2, 4, 8, 16, 32, 64):
            for eps in (0.0, 0.05, 0.1):
                r = verify_thm5(env, noisy_policy(eps) if eps else optimal_policy(), ev, None, K)
                cells += 1
                bad += not r.satisfied
                if eps == 0.0:
                    bad += r.details["max_abs_error"] > 0.5 / K + 1e-12
    # a fair coin test on the single K=1 threshold: tie bet, squared error 1/4
    coin = FinitePOMDP(np.ones((1, 1, 1)), np.array([[0.5, 0.5]]), np.array([1.0]))
    ev = EvaluationDistribution(histories=((History((0,)), 1.0),), tests=((Test((0,), ((0,),)), 1.0),))
    edge = verify_thm5(coin, optimal_policy(), ev, None, 1)
    boundary = abs(edge.lhs - 0.25) <= 1e-12 and abs(edge.rhs - 0.25) <= 1e-12
    return bad == 0 and boundary, f"{cells} cells, {bad} violations, K=1 boundary LHS {edge.lhs}"


def psr_recovery() -> tuple[bool, str]:
    env, tests, hs = dyadic_instance()
    exact = verify_thm6(env, tests, hs, optimal_policy(), 512)
    op_err = math.sqrt(exact[1].lhs)
    ok = all(r.ok for r in exact) and op_err <= 1e-6
    noisy_ok = all(r.ok for eps in (0.001, 0.003) for r in verify_thm6(env, tests, hs, noisy_policy(eps), 512))

    rng = np.random.default_rng(8)
    S = np.array([[0.6, 0.3], [0.2, 0.7]])
    Ys = {(a, o): rng.uniform(0, 0.5, (2, 2)) @ S for a in range(2) for o in range(2)}
    synthetic_ok = True
    for noise in (1e-4, 1e-3, 5e-3):
        S_hat = S + rng.uniform(-noise, noise, S.shape)
        Y_hat = {s: Y + rng.uniform(-noise, noise, Y.shape) for s, Y in Ys.items()}
        sy, op = psr_reports(S, Ys, S_hat, Y_hat, noise**2, {})
        synthetic_ok &= sy.satisfied and op.satisfied and op.details["gate_holds"]

    near = dyadic_instance(0.49)
    gated = verify_thm6(*near, optimal_policy(), 64)
    gate_ok = gated[0].satisfied and gated[1].vacuous and not gated[1].details["gate_holds"]
    return ok and noisy_ok and synthetic_ok and gate_ok, (
        f"exact |B_hat - B|_F {op_err:.1e}, noisy runs {'ok' if noisy_ok else 'violated'}, "
        f"synthetic {'ok' if synthetic_ok else 'violated'}, gate on near-singular S {'tripped' if gate_ok else 'missed'}"
    )


def memory_necessity() -> tuple[bool, str]:
    inst = alias_instance(0.8)
    tight = verify_thm7(inst.pomdp, constant_memory(inst.histories), "cell_optimal", inst.pairs, inst.tests, 0.3)
    tight_ok = abs(tight.lhs - 0.375) <= 1e-12 and abs(tight.rhs - 0.375) <= 1e-12 and abs(tight.slack) < 1e-9
    bad = vacuous = 0
    for seed in range(100):
        cfg = random_pair_config(seed)
        r = verify_thm7(cfg.pomdp, cfg.memory, cfg.resolver, cfg.pairs, cfg.tests, cfg.gamma)
        bad += not r.satisfied
        vacuous += r.vacuous
    return tight_ok and bad == 0, (
        f"aliased pair lhs {tight.lhs:.12f} rhs {tight.rhs:.12f}; 100 random configs, {bad} violations, {vacuous} vacuous"
    )


def memory_corollaries() -> tuple[bool, str]:
    inst = alias_instance(0.8)
    blocks = verify_cor3(inst.pomdp, alias_blocks(), constant_memory(inst.histories), "cell_optimal", inst.pairs, 0.3)
    blocks_ok = len(blocks) == 2 and all(r.satisfied for r in blocks) and blocks[0].lhs > 0

    regimes, labels = alias_regimes()
    blind = verify_cor4(inst.pomdp, regimes, constant_memory(inst.histories), "cell_optimal", inst.pairs, labels, 0.3)
    aware = verify_cor4(inst.pomdp, regimes, MemoryMap(labels), "cell_optimal", inst.pairs, labels, 0.3)
    regimes_ok = blind.satisfied and blind.lhs > 0 and aware.lhs == 0.0

    ev = EvaluationDistribution(pairs=tuple(inst.pairs), tests=tuple(inst.tests))
    conv = [verify_cor5(inst.pomdp, ev, None, 0.3, seed=s) for s in range(3)]
    conv_ok = all(r.ok and r.lhs == 0.0 and r.details["phi"] is not None for r in conv)
    return blocks_ok and regimes_ok and conv_ok, (
        f"block alias {[round(r.lhs, 6) for r in blocks]} vs caps {[round(r.rhs, 6) for r in blocks]}; "
        f"regime event {blind.lhs:.3f} <= {blind.rhs:.3f}; recoding {conv[0].details['phi']}"
    )


def determinism() -> tuple[bool, str]:
    names = list(cli.bundled_manifests())
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in names:
            a, b = Path(tmp, name, "a"), Path(tmp, name, "b")
            codes = (cli.run(name, str(a)), cli.run(name, str(b), jobs=4))
            same = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("results.csv", "estimates.csv"))
            if not same or codes != (0, 0):
                mismatched.append(f"{name}{codes}")
    return not mismatched, f"{len(names)} manifests, serial vs 4 workers; mismatches: {mismatched or 'none'}"


def monte_carlo() -> tuple[bool, str]:
    misses = []
    for seed in range(3):
        rng = np.random.default_rng(900 + seed)
        env = random_pomdp(3, 2, 2, rng)
        h = enumerate_histories(env, 1)[int(rng.integers(4))][0]
        t = Test((int(rng.integers(2)), int(rng.integers(2))), ((0, 0), (1, 1)))
        mc = sample_test_probability(env, h, t, MC_SAMPLES, rng)
        if not mc.agrees(test_probability(env, h, t)):
            misses.append(f"test prob seed {seed}")

        mdp = random_mdp(3, 2, rng)
        g = CompositeGoal(0, 1, 2, 6, 2)
        mc = sample_composite_goal(mdp, g, MC_SAMPLES, rng)
        if not mc.agrees(composite_goal_value(mdp, g).u_branch1):
            misses.append(f"composite goal seed {seed}")

        u1, u2, q = rng.uniform(size=3)
        exact = bet_regret(u1, u2, q).value_pi
        if not sample_bet_value(u1, u2, q, MC_SAMPLES, rng).agrees(exact):
            misses.append(f"bet value seed {seed}")
    return not misses, f"9 configs at {MC_SAMPLES} samples, outside 4 SE: {misses or 'none'}"


CRITERIA = [
    (1, "regret identity", regret_identity),
    (2, "transition recovery sweep", transition_sweep),
    (3, "interventional kernel", interventional_sweep),
    (4, "counterfactual pair", counterfactual_pair),
    (5, "predictive necessity", predictive_necessity_sweep),
    (6, "fair-bet counterexample", fair_bet_counterexample),
    (7, "threshold recovery", threshold_sweep),
    (8, "PSR recovery", psr_recovery),
    (9, "memory necessity", memory_necessity),
    (10, "blocks, regimes, recoding", memory_corollaries),
    (11, "CLI determinism", determinism),
    (12, "Monte Carlo cross-check", monte_carlo),
]


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(number, title, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for number, title, check in CRITERIA:
        ok, detail = check()
        results.append(ok)
        print(_line(number, title, ok, detail), flush=True)
    raise SystemExit(0 if all(results) else 1)
