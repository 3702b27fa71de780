import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selectlab.agents import (
    BetCell,
    ConstantPolicy,
    FunctionPolicy,
    MemoryMap,
    NoisyPolicy,
    PredictionCache,
    SeededRandomPolicy,
    cell_outcome,
    composite_cells,
    composite_q_table,
    composite_regrets,
    constant_memory,
    fair_cells,
    identity_memory,
    m_based_policy,
    noisy_policy,
    optimal_policy,
    pair_cells,
    policy_from_dict,
    random_memory,
    regret_profile,
    threshold_cells,
    weighted_regret,
)
from selectlab.environments import History, enumerate_histories, random_mdp, random_pomdp, same_last_pairs, uniform
from selectlab.errors import ConfigurationError, DomainError
from selectlab.goals import CompositeGoal, GoalValue, Test, fair_goal_value, test_universe, threshold_goal_value
from selectlab.scenarios import alias_instance

T0 = Test((0,), ((0,),))


def fair(p: float, h: History | None = None) -> BetCell:
    return BetCell(T0, h, fair_goal_value(p))


class TestOptimalAndNoisy:
    def test_optimal_examples(self):
        pi = optimal_policy()
        assert pi.q(BetCell(CompositeGoal(0, 0, 1, 4, 2), None, GoalValue.of(0.6875, 0.3125))) == 1.0
        assert pi.q(fair(0.2)) == 0.0
        tie = BetCell(T0, None, threshold_goal_value(0.4, 0.4))
        assert pi.q(tie) == 1.0 and cell_outcome(pi, tie).regret == 0.0

    def test_noisy_examples(self):
        cell = fair(0.8)
        assert noisy_policy(0.0).q(cell) == optimal_policy().q(cell)
        assert cell_outcome(noisy_policy(1.0), cell).regret == pytest.approx(0.75, abs=1e-12)
        assert cell_outcome(noisy_policy(0.1), cell).regret == pytest.approx(0.075, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_noisy_fair_regret_closed_form(self, eps, p):
        m = abs(p - 0.5)
        assert cell_outcome(noisy_policy(eps), fair(p)).regret == pytest.approx(eps * 4 * m / (1 + 2 * m), abs=1e-12)

    def test_noisy_domain(self):
        with pytest.raises(DomainError):
            NoisyPolicy(1.5)
        with pytest.raises(DomainError):
            ConstantPolicy(-0.1)

    def test_noisy_over_seeded_random_base(self):
        base = SeededRandomPolicy(3)
        cell = fair(0.7)
        assert NoisyPolicy(0.2, base).q(cell) == pytest.approx(0.8 * base.q(cell) + 0.2 * (1 - base.q(cell)))
        assert base.q(cell) == SeededRandomPolicy(3).q(cell) != SeededRandomPolicy(4).q(cell)

    def test_policy_from_dict(self):
        assert isinstance(policy_from_dict({"kind": "noisy", "epsilon": 0.1}), NoisyPolicy)
        assert policy_from_dict({"kind": "constant", "q": 0.3}).q(fair(0.9)) == 0.3
        with pytest.raises(ConfigurationError):
            policy_from_dict({"kind": "oracle"})


class TestProfiles:
    def _eval(self, seed=0):
        env = random_pomdp(3, 2, 2, np.random.default_rng(seed))
        hs = enumerate_histories(env, 1)
        tests = uniform(test_universe(2, 2, 2)[:8])
        return env, hs, tests

    def test_optimal_profile_zero(self):
        env, hs, tests = self._eval()
        prof = regret_profile(optimal_policy(), fair_cells(env, hs, tests))
        assert prof.average == 0.0 and all(o.regret == 0.0 for _, _, o in prof.cells)

    def test_noisy_average_matches_closed_form(self):
        env, hs, tests = self._eval(1)
        cells = fair_cells(env, hs, tests)
        closed = sum(w * 0.3 * 4 * c.value.margin / (1 + 2 * c.value.margin) for c, w in cells)
        assert regret_profile(noisy_policy(0.3), cells).average == pytest.approx(closed, abs=1e-12)

    def test_two_cell_average(self):
        # fair bets with p=1: regret 1 - (1-q); choose q values giving 0.1 and 0.3
        cells = [(fair(1.0, History((0,))), 0.5), (fair(1.0, History((1,))), 0.5)]
        pi = FunctionPolicy(lambda c: 0.9 if c.history.last == 0 else 0.7)
        assert regret_profile(pi, cells).average == pytest.approx(0.2)

    def test_noisy_monotone_in_epsilon(self):
        env, hs, tests = self._eval(2)
        cells = fair_cells(env, hs, tests)
        vals = [weighted_regret(noisy_policy(e), cells) for e in (0, 0.01, 0.05, 0.1, 0.25, 1.0)]
        assert vals == sorted(vals)

    def test_threshold_cell_weights(self):
        env, hs, tests = self._eval(3)
        cells = threshold_cells(env, hs, tests, 4)
        assert len(cells) == len(hs) * len(tests) * 4
        assert sum(w for _, w in cells) == pytest.approx(1.0, abs=1e-12)

    def test_pair_cells_equal_pair_average(self):
        env, hs, tests = self._eval(4)
        pairs = same_last_pairs(hs)
        pi = SeededRandomPolicy(9)
        probs = PredictionCache(env)
        direct = 0.0
        for (h, g), wp in pairs:
            for t, wt in tests:
                rh = cell_outcome(pi, BetCell(t, h, fair_goal_value(probs(h, t)))).regret
                rg = cell_outcome(pi, BetCell(t, g, fair_goal_value(probs(g, t)))).regret
                direct += wp * wt * 0.5 * (rh + rg)
        assert weighted_regret(pi, pair_cells(probs, pairs, tests)) == pytest.approx(direct, abs=1e-14)

    def test_composite_vectorised_matches_cells(self):
        mdp = random_mdp(3, 2, np.random.default_rng(5))
        for pi in (optimal_policy(), noisy_policy(0.2), ConstantPolicy(0.3)):
            F, q = composite_q_table(pi, mdp, 8)
            vec = composite_regrets(F, q).mean()
            assert vec == pytest.approx(weighted_regret(pi, composite_cells(mdp, 8)), abs=1e-12)

    def test_composite_scalar_path(self):
        mdp = random_mdp(2, 2, np.random.default_rng(6))
        pi = SeededRandomPolicy(1)
        F, q = composite_q_table(pi, mdp, 3)
        assert q.shape == F.shape and np.all((0 <= q) & (q <= 1))


class TestMemory:
    def test_memory_map_total(self):
        m = MemoryMap({History((0,)): "a"})
        with pytest.raises(ConfigurationError):
            m(History((1,)))

    def test_alias_pair_best_common_q(self):
        inst = alias_instance(0.8)
        cells = pair_cells(inst.pomdp, inst.pairs, inst.tests)
        pi = m_based_policy(constant_memory(inst.histories), cells)
        assert weighted_regret(pi, cells) == pytest.approx(0.375, abs=1e-12)
        # the regret is linear in q; every common q gives the same value here
        for q in np.linspace(0, 1, 11):
            assert weighted_regret(m_based_policy(constant_memory(inst.histories), cells, float(q)), cells) == pytest.approx(0.375)

    def test_identity_memory_is_optimal(self):
        inst = alias_instance(0.8)
        cells = pair_cells(inst.pomdp, inst.pairs, inst.tests)
        pi = m_based_policy(identity_memory(inst.histories), cells)
        assert weighted_regret(pi, cells) == 0.0

    def test_unresolved_memory_id(self):
        inst = alias_instance(0.8)
        cells = pair_cells(inst.pomdp, inst.pairs, inst.tests)
        pi = m_based_policy(identity_memory(inst.histories), cells)
        with pytest.raises(ConfigurationError):
            pi.q(BetCell(Test((1,), ((0,),)), inst.histories[0], fair_goal_value(0.5)))
        with pytest.raises(ConfigurationError):
            m_based_policy(identity_memory(inst.histories), cells, "nonsense")

    @pytest.mark.parametrize("seed", range(10))
    def test_cell_optimal_beats_any_table(self, seed):
        rng = np.random.default_rng(seed)
        env = random_pomdp(2, 2, 2, rng)
        hs = enumerate_histories(env, 1)
        pairs = same_last_pairs(hs)
        tests = uniform(test_universe(2, 2, 1))
        memory = random_memory([h for h, _ in hs], 2, rng)
        cells = pair_cells(env, pairs, tests)
        best = weighted_regret(m_based_policy(memory, cells), cells)
        for resolver in ("majority", "fixed:0.5", 0.0, 1.0):
            assert best <= weighted_regret(m_based_policy(memory, cells, resolver), cells) + 1e-15
        for _ in range(10):
            draws = {}
            pi = m_based_policy(memory, cells, lambda members: draws.setdefault(id(members), rng.random()))
            assert best <= weighted_regret(pi, cells) + 1e-15
