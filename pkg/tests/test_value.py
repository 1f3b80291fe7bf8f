import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathhjb.errors import InvalidInputError, ResourceError
from pathhjb.families import random_bounded_spec, tree_spec
from pathhjb.model import classical_bounds
from pathhjb.path_space import TimeGrid
from pathhjb.simulate import ControlPolicy
from pathhjb.value import (FeatureSpec, build_tree, cost_mc, dpp_residual, enumerate_strategies, lsmc_value,
                           mc_supermartingale, shock_set, strategy_value, tree_backward_induction,
                           tree_node_count, tree_supermartingale, value_lipschitz_ratio)

from conftest import make_spec


def running_max(x):
    return x[:, :, 0].max(axis=1)


class TestCost:
    def test_constant_payoff(self):
        spec = make_spec(sigma=lambda x, v: 1.0, G=lambda x: np.full(x.shape[0], 0.7))
        j, se = cost_mc(spec, ControlPolicy.random(2), 0.0, [[0.0]], 200)
        assert j == 0.7 and se == 0

    def test_unit_running_cost(self):
        spec = make_spec(sigma=lambda x, v: 1.0, f=lambda x, v: 1.0)
        j, _ = cost_mc(spec, ControlPolicy.constant(0), 0.0, [[0.0]], 50)
        assert j == pytest.approx(1.0, abs=1e-12)

    def test_ode_rollout(self):
        spec = make_spec(beta=lambda x, v: v, G=lambda x: x[:, -1, 0])
        j, _ = cost_mc(spec, ControlPolicy.constant(1), 0.0, [[0.0]], 10)
        assert j == pytest.approx(1.0, abs=1e-12)


class TestTree:
    def test_constant_terminal(self):
        spec = make_spec(sigma=lambda x, v: 1.0, G=lambda x: np.full(x.shape[0], 0.4))
        surf = tree_backward_induction(spec, build_tree(spec, 4))
        assert np.all(surf.all_values() == 0.4)

    def test_deterministic_maximisation(self):
        spec = make_spec(beta=lambda x, v: v, G=lambda x: -x[:, -1, 0], controls=(0.0, 1.0))
        surf = tree_backward_induction(spec, build_tree(spec, 2))
        assert surf.tables[0][0] == pytest.approx(-1.0)
        assert all(np.all(a == 1) for a in surf.argmin)

    def test_matches_oracle_three_controls(self):
        spec = make_spec(sigma=lambda x, v: 1.0, f=lambda x, v: v[:, 0] ** 2, G=running_max,
                         controls=(-1.0, 0.0, 1.0))
        tree = build_tree(spec, 4)
        v = tree_backward_induction(spec, tree).tables[0][0]
        oracle = enumerate_strategies(spec, tree, budget=3 ** 15)
        assert oracle.n_strategies == 3 ** 15
        assert abs(v - oracle.value) <= 1e-12

    def test_single_step_oracle(self):
        spec = tree_spec()
        tree = build_tree(spec, 1, x0=[0.2])
        res = enumerate_strategies(spec, tree)
        costs = [strategy_value(tree, [np.array([k])])[0] for k in range(2)]
        assert res.value == pytest.approx(min(costs), abs=1e-15)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_oracle_equivalence_random(self, seed):
        spec = random_bounded_spec(np.random.default_rng(seed))
        tree = build_tree(spec, 3, x0=[0.1])
        v = tree_backward_induction(spec, tree).tables[0][0]
        assert abs(v - enumerate_strategies(spec, tree).value) <= 1e-12

    def test_value_below_every_strategy(self):
        spec = random_bounded_spec(np.random.default_rng(1))
        tree = build_tree(spec, 3)
        surf = tree_backward_induction(spec, tree)
        rng = np.random.default_rng(0)
        for _ in range(50):
            strat = [rng.integers(0, 2, size=len(tree.X[l])) for l in range(3)]
            assert surf.tables[0][0] <= strategy_value(tree, strat)[0] + 1e-15

    def test_node_cap(self):
        spec = tree_spec()
        assert tree_node_count(2, 2, 3) == 1 + 4 + 16 + 64
        with pytest.raises(ResourceError):
            build_tree(spec, 12, node_cap=1000)

    def test_enumeration_budget(self):
        spec = tree_spec()
        with pytest.raises(ResourceError):
            enumerate_strategies(spec, build_tree(spec, 5), budget=2 ** 10)

    def test_quadrature_shocks(self):
        shocks, w = shock_set(1, 0.25, "gauss-hermite", 3)
        assert w.sum() == pytest.approx(1.0)
        assert (w * shocks[:, 0] ** 2).sum() == pytest.approx(0.25)

    def test_dpp_and_supermartingale_exact(self):
        spec = tree_spec()
        surf = tree_backward_induction(spec, build_tree(spec, 5, x0=[0.3]))
        assert dpp_residual(spec, surf, 0.0, 0.6)["residual"] == 0.0
        assert tree_supermartingale(surf, 10)["max_violation"] <= 0.0

    def test_bounds_and_sandwich(self):
        spec = random_bounded_spec(np.random.default_rng(5))
        surf = tree_backward_induction(spec, build_tree(spec, 6))
        assert np.max(np.abs(surf.all_values())) <= spec.value_bound
        L = max(spec.L, 1.0)
        for i, v in enumerate(surf.tables):
            up, lo = classical_bounds(L, spec.T, surf.grid.time(i))
            assert np.all((lo <= v) & (v <= up))

    def test_json(self):
        spec = tree_spec()
        body = json.loads(tree_backward_induction(spec, build_tree(spec, 2)).to_json())
        assert body["mode"] == "tree" and body["spec_digest"] == spec.digest()


class TestLSMC:
    def test_constant_target(self):
        spec = make_spec(sigma=lambda x, v: 0.5, G=lambda x: np.full(x.shape[0], 0.3))
        surf = lsmc_value(spec, TimeGrid(0.0, 1.0, 4), 2000, seed=0)
        assert surf.v0 == pytest.approx(0.3, abs=1e-10)
        x = np.zeros((5, 3, 1))
        np.testing.assert_allclose(surf.evaluate(2, x), 0.3, atol=1e-8)

    def test_uncontrolled_matches_cost(self):
        # x = 0.4 + 0.5 W, cost = int x dt + x(T): exact value 0.8, affine in the state
        spec = make_spec(sigma=lambda x, v: 0.5, f=lambda x, v: x[:, 0], G=lambda x: x[:, -1, 0], controls=(0.0,))
        grid = TimeGrid(0.0, 1.0, 8)
        surf = lsmc_value(spec, grid, 20_000, FeatureSpec(), 1, seed=1, x0=[0.4])
        j, se = cost_mc(spec, ControlPolicy.constant(0), 0.0, [[0.4]], 20_000, seed=99, grid=grid)
        assert abs(j - 0.8) <= 3 * se
        # the regression shares the pathwise sampling error, which v0_se alone understates
        assert abs(surf.v0 - 0.8) <= 3 * se

    def test_terminal_layer_is_G(self):
        spec = tree_spec()
        surf = lsmc_value(spec, TimeGrid(0.0, 1.0, 4), 1000, seed=0)
        x = np.random.default_rng(0).normal(size=(7, 5, 1))
        np.testing.assert_array_equal(surf.evaluate(4, x), spec.G(x, None))

    def test_clipped(self):
        spec = tree_spec()
        surf = lsmc_value(spec, TimeGrid(0.0, 1.0, 4), 500, seed=0)
        x = np.random.default_rng(0).normal(0, 50, size=(100, 3, 1))
        assert np.all(np.abs(surf.evaluate(2, x)) <= spec.value_bound)

    def test_close_to_tree(self):
        spec = tree_spec()
        tree_v = tree_backward_induction(spec, build_tree(spec, 6)).tables[0][0]
        grid = TimeGrid(0.0, 1.0, 6)
        surf = lsmc_value(spec, grid, 20_000, FeatureSpec(snapshot_times=tuple(grid.nodes[:-1])), 2, seed=0,
                          noise_kind="rademacher")
        assert abs(surf.v0 - tree_v) <= 0.05 * abs(tree_v)

    def test_ridge_fallback_when_underdetermined(self):
        spec = make_spec(sigma=lambda x, v: 1.0, G=lambda x: x[:, -1, 0])
        grid = TimeGrid(0.0, 1.0, 4)
        surf = lsmc_value(spec, grid, 4, FeatureSpec(snapshot_times=tuple(grid.nodes[:-1])), seed=0)
        assert surf.history[-1]["ridge_steps"]

    def test_singleton_dpp_tower(self):
        spec = make_spec(sigma=lambda x, v: 0.5, f=lambda x, v: np.cos(x[:, 0]), G=lambda x: x[:, -1, 0] ** 2 / 4,
                         controls=(0.0,))
        grid = TimeGrid(0.0, 1.0, 4)
        surf = lsmc_value(spec, grid, 20_000, seed=2, x0=[0.0])
        res = dpp_residual(spec, surf, 0.0, 0.25, np.zeros((1, 1)), 20_000, seed=5)
        assert res["residual"] <= 3 * math.hypot(res["std_error"], surf.v0_se)

    def test_mc_supermartingale_and_lipschitz(self):
        spec = tree_spec()
        grid = TimeGrid(0.0, 1.0, 8)
        surf = lsmc_value(spec, grid, 20_000, seed=0)
        rows = mc_supermartingale(spec, surf, surf.policy(), [0.0], [(0.0, 0.25), (0.25, 0.75), (0.5, 1.0)],
                                  5000, seed=3)
        assert all(r["pass"] for r in rows)
        assert np.isfinite(value_lipschitz_ratio(surf, 4))

    def test_rejects_bad_grid(self):
        with pytest.raises(InvalidInputError):
            lsmc_value(tree_spec(), TimeGrid(0.0, 0.5, 4), 10)
        with pytest.raises(InvalidInputError):
            lsmc_value(tree_spec(), TimeGrid(0.0, 1.0, 4), 10, FeatureSpec(snapshot_times=(0.3,)))
