import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stockdp import (ConstraintRegime, DemandDistribution, DomainError, ExtractionError, HoldingCost, Shortfall,
                     StructureUnsupportedError, alpha_star, build_structured_policy, classify_regime, extract_sS,
                     k_convexity_check, n_alpha_formula, n_alpha_oracle, order_envelope, sandwich_check,
                     solve_finite_horizon, solve_infinite_horizon, solve_no_setup)
from stockdp.errors import OracleDisagreementError
from stockdp.solver import GFunction, Grid, ValueFunction
from stockdp.structure import StructuredPolicy, threshold_properties

from conftest import make_spec

GRID10 = Grid(-10.0, 10.0, 1.0)


def gf(values, grid=GRID10):
    return GFunction(grid, np.asarray(values, dtype=float))


def pieces_h(left, right=1.0):
    return HoldingCost.linear(right, left)


def numeric_alpha_star(h, c_bar, x=-1e6):
    return 1 + float(h(x)) / (c_bar * x)


class TestAlphaStar:
    def test_symmetric(self):
        h = pieces_h(1.0)
        assert alpha_star(h, 2.0) == 0.5
        assert numeric_alpha_star(h, 2.0) == pytest.approx(0.5, abs=1e-9)

    def test_steep_backorders(self):
        h = pieces_h(3.0)
        assert alpha_star(h, 2.0) == -0.5
        assert numeric_alpha_star(h, 2.0) == pytest.approx(-0.5, abs=1e-9)

    def test_slope_equals_unit_cost(self):
        assert alpha_star(pieces_h(2.0), 2.0) == 0.0

    def test_tabulated(self):
        h = HoldingCost.tabulated([-2, -1, 0, 1], [6, 3, 0, 1])
        assert alpha_star(h, 4.0) == pytest.approx(0.25)


class TestNAlphaFormula:
    def test_negative_alpha_star_is_zero(self):
        assert n_alpha_formula(-0.5, 0.9) == 0

    def test_two_stages(self):
        assert n_alpha_formula(0.5, 0.9) == 2

    def test_never_order(self):
        assert n_alpha_formula(0.5, 0.4) == math.inf

    def test_alpha_star_zero(self):
        assert n_alpha_formula(0.0, 0.3) == 1

    def test_discount_out_of_range(self):
        with pytest.raises(DomainError):
            n_alpha_formula(0.2, 1.0)

    def test_ulp_above_alpha_star_terminates(self):
        assert n_alpha_formula(0.7, 0.7000000000000001) < math.inf

    @given(a=st.floats(0, 0.95), al=st.floats(0.01, 0.99))
    def test_matches_partial_sum_definition(self, a, al):
        n = n_alpha_formula(a, al)
        if al <= a:
            assert n == math.inf
            return
        target = a / (1 - a)
        sums = np.concatenate([[0.0], np.cumsum(al ** np.arange(1, n + 1))])
        assert target < sums[n] * (1 + 1e-12) + 1e-300
        if n > 0:
            assert not target < sums[n - 1] * (1 - 1e-12)

    @given(a=st.floats(-0.9, 0.95), a1=st.floats(0.0, 0.99), a2=st.floats(0.0, 0.99))
    def test_nonincreasing_in_alpha(self, a, a1, a2):
        lo, hi = sorted((a1, a2))
        assert n_alpha_formula(a, hi) <= n_alpha_formula(a, lo)


class TestNAlphaOracle:
    def test_two_stages(self):
        spec = make_spec(pieces_h(1.0), DemandDistribution.from_pmf([0, 1, 2], [0.3, 0.4, 0.3]), c_bar=2.0, alpha=0.9)
        detail = n_alpha_oracle(spec, t_max=50, detail=True)
        assert detail.n_alpha == 2
        assert np.allclose(detail.analytic_slopes[:3], [1.0, 0.1, 2 - 2.71])
        assert np.allclose(detail.numeric_slopes, detail.analytic_slopes, atol=1e-6)

    def test_never(self):
        spec = make_spec(pieces_h(1.0), c_bar=2.0, alpha=0.4)
        detail = n_alpha_oracle(spec, t_max=200, detail=True)
        assert detail.n_alpha == math.inf
        assert detail.analytic_slopes[-1] == pytest.approx(2 - 1 / 0.6)

    def test_agrees_with_formula(self):
        rng = np.random.default_rng(7)
        h = pieces_h(1.0)
        demand = DemandDistribution.from_pmf([0, 1, 3], [0.2, 0.5, 0.3])
        for _ in range(100):
            a, al = rng.uniform(0, 0.95), rng.uniform(0.01, 0.99)
            spec = make_spec(h, demand, c_bar=1 / (1 - a), alpha=al)
            n_formula = n_alpha_formula(alpha_star(h, spec.c_bar), al)
            assert n_alpha_oracle(spec, t_max=3000) == n_formula

    def test_bad_t_max(self):
        with pytest.raises(DomainError):
            n_alpha_oracle(make_spec(), t_max=0)


class TestExtractSS:
    def test_quadratic(self):
        assert extract_sS(gf(GRID10.points ** 2), 4.0) == (-2.0, 0.0)

    def test_quadratic_smaller_setup(self):
        assert extract_sS(gf(GRID10.points ** 2), 3.9) == (-1.0, 0.0)

    def test_constant_flagged(self):
        with pytest.raises(ExtractionError, match="constant"):
            extract_sS(gf(np.ones(GRID10.n)), 1.0)

    def test_edge_minimum(self):
        with pytest.raises(ExtractionError, match="edge"):
            extract_sS(gf(-GRID10.points), 1.0)

    def test_storage_top_allowed(self):
        assert extract_sS(gf(-GRID10.points), 1.0, upper_is_bound=True) == (9.0, 10.0)

    def test_threshold_properties(self):
        f = gf((GRID10.points - 2) ** 2 + np.where(GRID10.points > 5, 3.0, 0.0))
        s, S = extract_sS(f, 4.0)
        assert k_convexity_check(f, 4.0).passed
        assert threshold_properties(f, 4.0, s, S) == {"i": True, "ii": True, "iii": True}


class TestKConvexity:
    def test_convex_passes(self):
        assert k_convexity_check(gf(GRID10.points ** 2), 0.0).passed

    def test_envelope_of_quadratic(self):
        g = order_envelope(gf(GRID10.points ** 2), 1.0)
        assert k_convexity_check(g, 1.0).passed

    def test_downward_jump(self):
        grid = Grid(-5.0, 5.0, 1.0)
        K = 2.0
        res = k_convexity_check(gf(np.where(grid.points >= 0, -2 * K, 0.0), grid), K)
        assert not res.passed
        # worst triple (-5, -1, 0): theta = 1/5, f(-1) = 0 vs 0.8 * (-2K + K) = -0.8K
        assert res.worst_violation == pytest.approx(0.8 * K)
        assert res.witness == (-5.0, -1.0, 0.0)
        # the symmetric triple (-1, 0, 1) is not a violation: f(0) = -2K <= -0.5K

    def test_needs_three_points(self):
        with pytest.raises(DomainError):
            k_convexity_check(gf([1.0, 2.0], Grid(0.0, 1.0, 1.0)), 1.0)

    @settings(max_examples=60, deadline=None)
    @given(vals=st.lists(st.floats(-20, 20), min_size=3, max_size=25), K=st.floats(0, 10))
    def test_fast_matches_naive(self, vals, K):
        grid = Grid(0.0, float(len(vals) - 1), 1.0)
        f = gf(vals, grid)
        a = k_convexity_check(f, K, method="naive")
        b = k_convexity_check(f, K, method="fast")
        assert a.passed == b.passed
        assert a.worst_violation == pytest.approx(b.worst_violation, abs=1e-12)


class TestOrderEnvelope:
    def test_quadratic_unbounded(self):
        g = order_envelope(gf(GRID10.points ** 2), 1.0)
        x = GRID10.points
        assert np.array_equal(g.values, np.where(x <= -1, 1.0, x ** 2))

    def test_nondecreasing_unchanged(self):
        f = gf(np.maximum(GRID10.points, 0) ** 2)
        assert np.array_equal(order_envelope(f, 0.5).values, f.values)

    def test_capped_top(self):
        f = gf(-GRID10.points)
        g = order_envelope(f, 1.0, x_bar=10.0)
        assert g.values[-1] == f.values[-1]

    def test_cap_must_be_grid_top(self):
        with pytest.raises(DomainError):
            order_envelope(gf(GRID10.points ** 2), 1.0, x_bar=5.0)


class TestStructuredPolicy:
    def test_s_below_S(self):
        with pytest.raises(DomainError):
            StructuredPolicy.sS(3.0, 1.0)

    def test_action(self):
        p = StructuredPolicy.sS(1.0, 4.0)
        assert list(p.action([-2.5, 0.5, 1.0, 7.0])) == [6.5, 3.5, 0.0, 0.0]

    def test_tail_orders_nothing(self):
        p = StructuredPolicy("sStN", thresholds=((0.0, 3.0),), n=2, N=3)
        assert p.action(-5.0, 0) == 8.0 and p.action(-5.0, 1) == 0.0 and p.action(-5.0, 2) == 0.0


class TestBuildStructuredPolicy:
    DEMAND = DemandDistribution.from_pmf([0, 1, 2], [0.3, 0.4, 0.3])
    GRID = Grid(-60.0, 60.0, 1.0)

    def test_never_order_region(self):
        spec = make_spec(pieces_h(1.0), self.DEMAND, c_bar=2.0, alpha=0.4)
        for N in (1, 4):
            sol = solve_finite_horizon(spec, self.GRID, N)
            assert build_structured_policy(spec, self.GRID, N, sol).kind == "never-order"

    def test_negative_alpha_star(self):
        spec = make_spec(pieces_h(3.0), self.DEMAND, c_bar=2.0, alpha=0.9)
        sol = solve_finite_horizon(spec, self.GRID, 4)
        p = build_structured_policy(spec, self.GRID, 4, sol)
        assert p.kind == "sStN" and p.n == 0 and len(p.thresholds) == 4

    def test_short_horizon_never_orders(self):
        spec = make_spec(pieces_h(1.0), self.DEMAND, c_bar=2.0, alpha=0.9)
        sol = solve_finite_horizon(spec, self.GRID, 2)
        assert build_structured_policy(spec, self.GRID, 2, sol).kind == "never-order"

    def test_infinite(self, textbook, textbook_grid):
        sol = solve_infinite_horizon(textbook, textbook_grid)
        p = build_structured_policy(textbook, textbook_grid, "infinite", sol)
        assert p.kind == "sS" and (p.s, p.S) == (1.0, 4.0)
        assert np.array_equal(p.to_table(textbook_grid).order[1:-1], sol.policy.order[1:-1])

    @pytest.mark.parametrize("regime,shortfall", [
        (ConstraintRegime.BO(2.0), Shortfall.BACKORDERS),
        (ConstraintRegime.U(), Shortfall.LOST_SALES),
    ])
    def test_out_of_scope(self, regime, shortfall):
        spec = make_spec(regime=regime, shortfall=shortfall)
        with pytest.raises(StructureUnsupportedError):
            build_structured_policy(spec, Grid(0.0, 10.0, 1.0), "infinite", None)


class TestClassifyRegime:
    def test_negative(self):
        assert classify_regime(-1.0, 0.3, "finite") == "R_0"

    @pytest.mark.parametrize("horizon", ["finite", "infinite"])
    def test_never(self, horizon):
        assert classify_regime(0.6, 0.5, horizon) == "R_inf"

    def test_finite_n(self):
        assert classify_regime(0.5, 0.9, "finite") == "R_2"
        assert classify_regime(0.5, 0.9, "infinite") == "R_0"

    def test_domain(self):
        with pytest.raises(DomainError):
            classify_regime(0.1, 1.2)


class TestSandwich:
    def test_solver_pair_passes(self, textbook, textbook_grid):
        v = solve_infinite_horizon(textbook, textbook_grid).value
        v0 = solve_no_setup(textbook, textbook_grid).value
        assert sandwich_check(v, v0, textbook, "infinite", 2e-6).passed

    def test_shifted_fails_upper(self, textbook, textbook_grid):
        v0 = solve_no_setup(textbook, textbook_grid).value
        v = ValueFunction(textbook_grid, v0.values + 2 * textbook.K / (1 - textbook.alpha))
        res = sandwich_check(v, v0, textbook, "infinite", 1e-6)
        assert not res.passed and res.upper_margin < 0 <= res.lower_margin

    def test_small_setup_tight(self, textbook, textbook_grid):
        import dataclasses
        spec = dataclasses.replace(textbook, K=1e-9)
        v = solve_infinite_horizon(spec, textbook_grid).value
        v0 = solve_no_setup(spec, textbook_grid).value
        res = sandwich_check(v, v0, spec, "infinite", 2e-6)
        assert res.passed and abs(res.lower_margin) <= 2e-6
