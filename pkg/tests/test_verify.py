import json
import math

import numpy as np
import pytest

from pathhjb.errors import InvalidConfigError, InvalidInputError, UnsupportedFieldError
from pathhjb.families import demo_spec, random_bounded_spec
from pathhjb.fields import RandomField, bound_field, constant_field, running_integral, state_quadratic
from pathhjb.path_space import DiscretePath, TimeGrid
from pathhjb.simulate import ControlPolicy
from pathhjb.verify import (REGISTRY, UnstableHolderWarning, approach_family, brownian_sampler, check_witness,
                            classical_residual, ito_refinement, ito_residual, kolmogorov_check, lipschitz_sampler,
                            reports_json, run_suite)

from conftest import make_spec

DT = 1 / 64
PREFIX = DiscretePath.from_values(np.array([[0.0], [0.1], [-0.05], [0.2]]), DT)


class TestIto:
    def test_constant_exact(self):
        res = ito_residual(constant_field(2.0), make_spec(sigma=lambda x, v: 1.0), ControlPolicy.random(2), 0.0,
                           [[0.3]], TimeGrid(0.0, 1.0, 32), 50)
        assert res.rms == 0.0 and not res.stochastic_terms

    def test_bound_field_has_no_ito_sum(self):
        res = ito_residual(bound_field(1.0, 1.0), make_spec(sigma=lambda x, v: 1.0), ControlPolicy.constant(0),
                           0.0, [[0.0]], TimeGrid(0.0, 1.0, 64), 20)
        assert not res.stochastic_terms
        # left-endpoint quadrature of e^{1-t} on 64 steps
        assert 0 < res.rms <= math.e * (1 / 64)

    def test_quadratic_strong_order(self):
        spec = make_spec(sigma=lambda x, v: 1.0, controls=(0.0,))
        ref = ito_refinement(state_quadratic(1.0, 0.0), spec, ControlPolicy.constant(0), 0.0, [[0.0]], 256, 1000)
        assert ref["stochastic_terms"]
        assert 1.2 <= ref["ratio"] <= 1.8

    def test_running_integral_exact_under_left_quadrature(self):
        spec = make_spec(sigma=lambda x, v: 1.0)
        res = ito_residual(running_integral(), spec, ControlPolicy.random(2), 0.0, [[0.4]], TimeGrid(0.0, 1.0, 32),
                           40)
        assert res.rms <= 1e-12

    def test_window_and_restart(self):
        spec = make_spec(sigma=lambda x, v: 1.0)
        res = ito_residual(constant_field(1.0), spec, ControlPolicy.constant(0), 0.25, np.zeros((9, 1)),
                           TimeGrid(0.0, 1.0, 32), 10, tau=0.5)
        assert res.residuals.shape == (10,)

    def test_missing_derivatives(self):
        bare = RandomField("bare", 1, lambda t, x, ctx: x[:, -1, 0])
        with pytest.raises(UnsupportedFieldError):
            ito_residual(bare, make_spec(), ControlPolicy.constant(0), 0.0, [[0.0]], n_paths=2)

    def test_m_mismatch(self):
        with pytest.raises(InvalidInputError):
            ito_residual(constant_field(1.0, m=2), make_spec(), ControlPolicy.constant(0), 0.0, [[0.0]], n_paths=2)


class TestClassicalResidual:
    @pytest.mark.parametrize("seed", range(8))
    def test_bounds_have_correct_sign(self, seed):
        spec = random_bounded_spec(np.random.default_rng(seed))
        L = max(spec.L, 1.0)
        up = classical_residual(bound_field(L, spec.T, True), spec, 0.3, PREFIX)
        lo = classical_residual(bound_field(L, spec.T, False), spec, 0.3, PREFIX)
        assert up["super"] >= -1e-10 and up["super_pass"]
        assert lo["sub"] <= 1e-10 and lo["sub_pass"]

    def test_upper_bound_value(self):
        # residual = L^2 e^{L(T-s)} - min_v f; with f = 0 that is e^{1-s} at the approach times
        spec = make_spec()
        res = classical_residual(bound_field(1.0, 1.0), spec, 0.5, PREFIX, steps=4)
        assert res["super"] == pytest.approx(math.exp(1 - 0.5 - 4 * DT))
        assert res["sub"] == pytest.approx(math.exp(1 - 0.5 - DT))

    def test_non_solution(self):
        spec = make_spec(f=lambda x, v: 1.0)
        res = classical_residual(constant_field(0.0), spec, 0.2, PREFIX, tol=0.5)
        assert res["super"] == res["sub"] == -1.0
        assert not res["super_pass"]
        assert res["sub_pass"]

    def test_array_input_needs_dt(self):
        with pytest.raises(InvalidInputError):
            classical_residual(constant_field(0.0), make_spec(), 0.2, PREFIX.values)
        res = classical_residual(constant_field(0.0), make_spec(), 0.2, PREFIX.values, dt=DT)
        assert res["n_approach"] >= 8

    def test_approach_family_starts_horizontal(self):
        fam = approach_family(PREFIX.values, DT, steps=3)
        assert [j for j, _ in fam][0] == 1
        first = fam[0][1]
        assert np.array_equal(first[:4], PREFIX.values) and first[-1, 0] == PREFIX.values[-1, 0]
        assert all(c.shape[0] == 4 + j for j, c in fam)


class TestKolmogorov:
    def test_lipschitz_paths_stable_any_alpha(self):
        for alpha in (0.25, 0.9):
            rep = kolmogorov_check(lipschitz_sampler(), alpha, n_paths=200, ladder=(2.0, 4.0, 8.0, 16.0),
                                   brownian=False)
            assert rep["pass"] and 0.5 <= rep["ratio"] <= 2.0

    def test_brownian_quarter(self):
        rep = kolmogorov_check(brownian_sampler(), 0.25, n_paths=2000, seed=1)
        assert rep["regime"] == "holder"
        assert 0.5 <= rep["ratio"] <= 2.0
        assert rep["monotone"]

    def test_brownian_rough_warns_and_diverges(self):
        with pytest.warns(UnstableHolderWarning):
            rep = kolmogorov_check(brownian_sampler(), 0.75, n_paths=500)
        assert rep["regime"] == "divergent" and rep["ratio"] >= 4 and rep["pass"]

    @pytest.mark.parametrize("alpha,q", [(0.0, 2.0), (1.0, 2.0), (0.25, 1.0)])
    def test_bad_args(self, alpha, q):
        with pytest.raises(InvalidInputError):
            kolmogorov_check(brownian_sampler(), alpha, q, n_paths=10)

    def test_resolutions_must_nest(self):
        with pytest.raises(InvalidInputError):
            kolmogorov_check(brownian_sampler(), 0.25, n_paths=10, resolutions=(48, 100))


class TestSuite:
    def test_single_check(self):
        reps = run_suite({"seed": 0, "checks": ["flow"], "budgets": {"flow_cases": 5}})
        assert [r.check for r in reps] == ["flow"] and reps[0].passed

    def test_unknown_id(self):
        with pytest.raises(InvalidConfigError):
            run_suite({"seed": 0, "checks": ["no-such-check"]})

    def test_seed_required(self):
        with pytest.raises(InvalidConfigError):
            run_suite({"checks": ["flow"]})

    def test_fault_isolated(self):
        cfg = {"seed": 0, "model": {"family": "fault"}, "checks": ["lipschitz-audit", "flow", "semisolutions"],
               "budgets": {"flow_cases": 5, "semisolution_points": 10}}
        reps = {r.check: r.passed for r in run_suite(cfg)}
        assert reps == {"lipschitz-audit": False, "flow": True, "semisolutions": True}

    def test_deterministic_report(self):
        cfg = {"seed": 3, "checks": ["flow", "moment-bounds", "lipschitz-audit"],
               "budgets": {"flow_cases": 4, "moment_paths": 500}}
        a = reports_json(run_suite(cfg), demo_spec().digest(), 3)
        b = reports_json(run_suite(cfg), demo_spec().digest(), 3)
        assert a == b
        body = json.loads(a)
        assert {"check", "statistic", "tolerance", "pass", "seed"} <= set(body["reports"][0])

    def test_registry_ids_unique_and_documented(self):
        assert len(REGISTRY) == len(set(REGISTRY)) == 12
        assert all(fn.__name__.startswith("check_") for fn in REGISTRY.values())

    def test_witness_small(self):
        rep = check_witness(demo_spec(), {"witness_points": 3, "witness_paths": 200}, 0)
        assert rep.passed and rep.statistic <= 1e-8
        assert all(not p["agree"] for p in rep.details["points"])

    def test_summary_line(self):
        rep = run_suite({"seed": 0, "checks": ["lipschitz-audit"]})[0]
        assert rep.summary().startswith("PASS lipschitz-audit")
        assert rep.as_dict()["pass"] is True
