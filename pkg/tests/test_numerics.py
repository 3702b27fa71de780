import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selectlab.errors import DomainError
from selectlab.numerics import (
    bet_regret,
    binom_cdf,
    binom_cdf_table,
    binom_median,
    binom_pmf_table,
    c_of_margin,
    margin_constants,
    wrong_mass_bound,
)

from conftest import binom_cdf_fraction

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestMarginConstants:
    def test_quarter(self):
        mc = margin_constants(0.25)
        assert mc.c_gamma == pytest.approx(2 / 3, abs=1e-15)
        assert mc.t_gamma == pytest.approx(math.sqrt(3), abs=1e-12)

    def test_half_has_infinite_t(self):
        mc = margin_constants(0.5)
        assert mc.c_gamma == 1.0
        assert mc.t_is_infinite and math.isinf(mc.t_gamma)

    def test_sixth(self):
        mc = margin_constants(1 / 6)
        assert mc.c_gamma == pytest.approx(0.5, abs=1e-15)
        assert mc.t_gamma == pytest.approx(math.sqrt(2), abs=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 0.5000001, 0.6, float("nan")])
    def test_out_of_domain(self, gamma):
        with pytest.raises(DomainError):
            margin_constants(gamma)

    @given(st.floats(1e-6, 0.5 - 1e-6), st.floats(1e-6, 0.5 - 1e-6))
    def test_c_strictly_increasing_and_t_at_least_one(self, g1, g2):
        a, b = margin_constants(min(g1, g2)), margin_constants(max(g1, g2))
        if g1 != g2:
            assert a.c_gamma < b.c_gamma
        assert a.t_gamma >= 1.0 and not a.t_is_infinite


class TestBetRegret:
    def test_mixed_bet(self):
        out = bet_regret(0.75, 0.25, 0.8)
        assert out.value_pi == pytest.approx(0.65)
        assert out.value_star == 0.75
        assert out.regret == pytest.approx(0.1333333333333333, abs=1e-12)
        assert out.wrong_mass == pytest.approx(0.2)
        assert out.margin == pytest.approx(0.25)

    def test_optimal_pure_bet(self):
        out = bet_regret(0.8, 0.2, 1.0)
        assert out.regret == 0.0 and out.wrong_mass == 0.0

    def test_wrong_pure_bet(self):
        out = bet_regret(0.8, 0.2, 0.0)
        assert out.regret == pytest.approx(0.75, abs=1e-12)
        assert out.regret == pytest.approx(4 * 0.3 / 1.6, abs=1e-12)
        assert out.wrong_mass == 1.0

    def test_tie_labels_R_as_wrong(self):
        out = bet_regret(0.4, 0.4, 0.3)
        assert out.regret == 0.0
        assert out.wrong_mass == pytest.approx(0.7)

    def test_unsatisfiable_goal(self):
        with pytest.raises(DomainError, match="unsatisfiable"):
            bet_regret(0.0, 0.0, 0.5)

    @pytest.mark.parametrize("args", [(1.1, 0.2, 0.5), (0.2, -0.1, 0.5), (0.3, 0.2, 1.5)])
    def test_bad_probabilities(self, args):
        with pytest.raises(DomainError):
            bet_regret(*args)

    @given(unit, unit, unit)
    def test_wrong_mass_identity(self, u_L, u_R, q):
        if max(u_L, u_R) == 0.0:
            return
        out = bet_regret(u_L, u_R, q)
        assert 0.0 <= out.regret <= 1.0
        assert out.value_pi <= out.value_star + 1e-15
        assert out.regret == pytest.approx(out.wrong_mass * abs(u_L - u_R) / max(u_L, u_R), abs=1e-12)

    @given(unit, unit, st.floats(0.01, 0.5))
    def test_large_margin_regret_dominates_wrong_mass(self, p, q, gamma):
        out = bet_regret(p, 1.0 - p, q)
        if out.margin >= gamma:
            assert out.regret >= out.wrong_mass * margin_constants(gamma).c_gamma - 1e-12

    def test_seeded_identity_suite(self):
        rng = np.random.default_rng(2024)
        for u_L, u_R, q in rng.uniform(size=(10_000, 3)):
            out = bet_regret(u_L, u_R, q)
            V, Vs = q * u_L + (1 - q) * u_R, max(u_L, u_R)
            assert abs((1 - V / Vs) - out.wrong_mass * abs(u_L - u_R) / Vs) <= 1e-12


def test_c_of_margin_increasing():
    m = np.linspace(0, 0.5, 501)
    c = c_of_margin(m)
    assert np.all(np.diff(c) > 0) and c[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("delta,gamma,expected", [(0.0, 0.3, 0.0), (0.1, 0.5, 0.1), (0.12, 0.25, 0.18)])
def test_wrong_mass_bound(delta, gamma, expected):
    assert wrong_mass_bound(delta, gamma) == pytest.approx(expected, abs=1e-12)


class TestBinomial:
    def test_examples(self):
        assert binom_cdf(4, 0.5, 2) == pytest.approx(0.6875, abs=1e-15)
        assert binom_cdf(10, 0.3, 3) == pytest.approx(0.6496107184, abs=1e-10)
        assert binom_cdf(5, 0.0, 0) == 1.0

    def test_k_above_n(self):
        with pytest.raises(DomainError):
            binom_cdf(3, 0.5, 4)

    @pytest.mark.parametrize("n", range(1, 13))
    @pytest.mark.parametrize("p", [Fraction(0), Fraction(1, 7), Fraction(3, 10), Fraction(1, 2), Fraction(9, 10), Fraction(1)])
    def test_matches_enumeration(self, n, p):
        table = binom_cdf_table(n, float(p))
        for k in range(n + 1):
            assert table[k] == pytest.approx(float(binom_cdf_fraction(n, p, k)), abs=1e-14)
        assert table[n] == 1.0
        assert np.all(np.diff(table) >= 0)

    @given(st.integers(1, 400), unit)
    def test_pmf_normalised_and_cdf_monotone(self, n, p):
        assert binom_pmf_table(n, p).sum() == pytest.approx(1.0, abs=1e-12)
        cdf = binom_cdf_table(n, p)
        assert np.all(np.diff(cdf) >= -1e-15) and cdf[-1] == 1.0 and cdf.max() <= 1.0

    def test_large_n_stays_finite(self):
        cdf = binom_cdf_table(10_000, 0.37)
        assert np.isfinite(cdf).all()
        assert cdf[3700] == pytest.approx(0.5, abs=0.01)

    def test_median_examples(self):
        assert binom_median(4, 0.5) == 2
        assert binom_median(5, 0.0) == 0
        assert binom_median(10, 0.3) == 3

    def test_median_within_one_of_mean(self):
        for n in range(1, 201):
            for p in np.round(np.arange(0, 1.0001, 0.01), 2):
                assert abs(binom_median(n, float(p)) - n * p) <= 1.0 + 1e-12
