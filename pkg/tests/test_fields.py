import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathhjb.errors import InvalidInputError, UnsupportedFieldError
from pathhjb.fields import (CATALOG, RandomField, affine_field, bound_field, brownian_field, catalog, constant_field,
                            covariation, crosscheck_suite, estimate_decomposition, estimate_dw_grad,
                            estimate_grad_dw, fd_gradient, fd_hessian, random_points, running_integral,
                            sin_integral, snapshot_field, state_quadratic)
from pathhjb.model import RandomnessContext
from pathhjb.path_space import DiscretePath

DT = 2.0 ** -8


def flat_path(vals, dt=DT):
    """Prefix whose last step is flat, so the left limit equals the endpoint."""
    vals = np.asarray(vals, dtype=float)
    return DiscretePath.from_values(np.vstack([vals, vals[-1:]]), dt)


def noise(n_nodes, m=1, seed=0, dt=DT):
    rng = np.random.default_rng(seed)
    w = np.concatenate([np.zeros((1, m)), np.cumsum(rng.normal(0, math.sqrt(dt), (n_nodes - 1, m)), 0)])
    return RandomnessContext(w[None], 0, dt)


def sine_field():
    return RandomField("sine", 1, lambda t, x, c: np.sin(x[:, -1, 0]),
                       grad=lambda t, x, c: np.cos(x[:, -1, :1]))


class TestVerticalDifferences:
    def test_square(self):
        x = DiscretePath.from_values(np.array([[0.0], [3.0]]), 0.5)
        assert fd_gradient(state_quadratic(), 0.5, x, 1e-4)[0] == pytest.approx(6.0, abs=1e-8)

    def test_running_integral_exact_zero(self):
        x = DiscretePath.from_values(np.array([[0.1], [0.4], [0.9]]), 0.25)
        assert fd_gradient(running_integral(), 0.5, x, 1e-4, noise(3, dt=0.25))[0] == 0.0

    def test_sin_integral_zero(self):
        x = DiscretePath.from_values(np.array([[0.1], [0.4], [0.9]]), 0.25)
        assert fd_gradient(sin_integral(), 0.5, x, 1e-4, noise(3, dt=0.25))[0] == pytest.approx(0.0, abs=1e-12)

    def test_hessians(self):
        x = DiscretePath.from_values(np.array([[0.0, 0.0], [0.7, -1.2]]), 0.5)
        np.testing.assert_allclose(fd_hessian(state_quadratic(), 0.5, x), 2 * np.eye(2), atol=1e-6)
        np.testing.assert_allclose(fd_hessian(affine_field([1.0, -2.0]), 0.5, x), 0, atol=1e-6)

    def test_snapshot_hessian_block(self):
        fld = snapshot_field(q=0.8)
        x = DiscretePath.from_values(np.linspace(0, 1, 9).reshape(-1, 1) ** 2, 0.125)
        ctx = noise(9, dt=0.125)
        assert fd_hessian(fld, 1.0, x, ctx=ctx)[0, 0] == pytest.approx(0.8, abs=1e-6)

    def test_second_order_convergence(self):
        fld = sine_field()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-3, 3, 100)
        # stay clear of points where the third derivative vanishes
        pts = pts[np.abs(np.cos(pts)) > 0.1]
        errs = {}
        for h in (1e-2, 5e-3):
            errs[h] = np.array([abs(fd_gradient(fld, 0.5, DiscretePath.from_values([[0.0], [p]], 0.5), h)[0]
                                    - math.cos(p)) for p in pts])
        assert np.all(errs[1e-2] / errs[5e-3] >= 3.0)

    def test_hessian_symmetry(self):
        fld = RandomField("mix", 1, lambda t, x, c: np.sin(x[:, -1, 0] * x[:, -1, 1]) + x[:, -1, 0] ** 3)
        x = DiscretePath.from_values(np.array([[0.0, 0.0], [0.8, -0.4]]), 0.5)
        sym = fd_hessian(fld, 0.5, x, 1e-3)
        raw = fd_hessian(fld, 0.5, x, 1e-3, raw=True)
        assert np.array_equal(sym, sym.T)
        assert abs(raw[0, 1] - raw[1, 0]) < 1e-3

    def test_bad_bump(self):
        with pytest.raises(InvalidInputError):
            fd_gradient(state_quadratic(), 0.5, DiscretePath.from_values([[0.0], [1.0]], 0.5), -1.0)


class TestCovariation:
    def test_constant(self):
        assert covariation(np.ones(10), np.random.default_rng(0).normal(size=10)) == 0

    def test_quadratic_variation(self):
        rng = np.random.default_rng(1)
        errs = []
        for n in (64, 4096):
            w = np.concatenate([np.zeros((200, 1)), np.cumsum(rng.normal(0, math.sqrt(1 / n), (200, n)), 1)], 1)
            errs.append(np.sqrt(np.mean((covariation(w, w) - 1.0) ** 2)))
        assert errs[1] < 0.05 and errs[0] / errs[1] == pytest.approx(8.0, rel=0.3)

    def test_independent(self):
        rng = np.random.default_rng(2)
        a, b = np.cumsum(rng.normal(0, math.sqrt(1 / 1024), (2, 500, 1024)), axis=2)
        vals = covariation(a, b)
        assert abs(vals.mean()) <= 3 * vals.std() / math.sqrt(500)

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            covariation(np.zeros(3), np.zeros(4))


class TestDecomposition:
    def test_running_integral(self):
        x = flat_path([[0.2], [0.5]])
        dec = estimate_decomposition(running_integral(), x, n_paths=32, ctx=noise(3))
        assert dec.d_w.estimate == pytest.approx([0.0], abs=1e-10)
        assert dec.d_t.estimate == pytest.approx(math.sin(0.5), abs=1e-8)

    def test_brownian(self):
        x = flat_path([[0.2], [0.5]])
        dec = estimate_decomposition(brownian_field(0, 2), x, n_paths=32, ctx=noise(3, 2))
        np.testing.assert_allclose(dec.d_w.estimate, [1.0, 0.0], atol=1e-10)
        assert dec.d_t.estimate == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("end", [-1.0, 0.3, 2.0])
    def test_sin_integral(self, end):
        x = flat_path([[0.2], [end]])
        dec = estimate_decomposition(sin_integral(), x, n_paths=32, ctx=noise(3))
        assert dec.d_w.estimate[0] == pytest.approx(math.sin(end), abs=1e-8)

    def test_covariation_method_is_unbiased(self):
        x = flat_path([[0.2], [0.7]])
        dec = estimate_decomposition(sin_integral(), x, window=8, n_paths=4000, ctx=noise(3),
                                     method="covariation")
        assert abs(dec.d_w.estimate[0] - math.sin(0.7)) <= 3 * dec.d_w.std_error[0]

    def test_empty_window(self):
        with pytest.raises(InvalidInputError):
            estimate_decomposition(sin_integral(), flat_path([[0.0]]), window=0, ctx=noise(2))

    def test_reconstruction_error_shrinks(self):
        """u(r) + int d_t ds + int d_w dW tracks u along the extension with O(sqrt(dt)) error."""
        rms = []
        fld = snapshot_field(times=(0.0,), weights=(0.5,), kappa=0.7)
        for dt in (2.0 ** -6, 2.0 ** -8):
            n, k = 400, int(0.25 / dt)
            rng = np.random.default_rng(5)
            x0 = np.full((n, 2, 1), 0.3)
            dW = rng.normal(0, math.sqrt(dt), (n, k, 1))
            w = np.concatenate([np.zeros((n, 2, 1)), np.cumsum(dW, 1)], 1)[:, 1:]
            ext = np.concatenate([x0, np.repeat(x0[:, -1:], k, 1)], 1)
            recon = fld.values(dt, x0, RandomnessContext(w[:, :2], 0, dt)).copy()
            for j in range(k):
                xp = ext[:, : j + 2]
                c = RandomnessContext(w[:, : j + 2], 0, dt)
                recon += fld.derivative("d_t", (j + 1) * dt, xp, c) * dt
                recon += np.einsum("nm,nm->n", fld.derivative("d_w", (j + 1) * dt, xp, c), dW[:, j])
            end = fld.values((k + 1) * dt, ext, RandomnessContext(w, 0, dt))
            rms.append(np.sqrt(np.mean((recon - end) ** 2)))
        assert rms[1] <= rms[0] + 1e-12


class TestMixedDerivatives:
    def test_path_independent_zero(self):
        rng = np.random.default_rng(0)
        paths = np.cumsum(rng.normal(0, 0.05, (50, 9, 1)), 1)
        est = estimate_dw_grad(bound_field(1.0, 1.0), paths, noise(9, seed=1).repeat(50), 0, 0)
        assert est.estimate == 0.0

    def test_sin_integral_witness(self):
        x = flat_path([[0.1], [0.2], [0.9]])
        ctx = noise(4)
        assert estimate_grad_dw(sin_integral(), x, ctx=ctx, bump=1e-5)[0, 0] == pytest.approx(math.cos(0.9), abs=1e-8)
        rng = np.random.default_rng(3)
        paths = np.cumsum(rng.normal(0, 0.05, (200, 9, 1)), 1)
        w = np.cumsum(rng.normal(0, math.sqrt(DT), (200, 9, 1)), 1)
        est = estimate_dw_grad(sin_integral(), paths, RandomnessContext(w, 0, DT), 0, 0)
        assert abs(est.estimate) <= 3 * est.std_error + 1e-15

    def test_snapshot_closed_form(self):
        fld = snapshot_field(kappa=0.6)
        rng = np.random.default_rng(4)
        n, N = 4000, 16
        paths = np.cumsum(rng.normal(0, 0.05, (n, N + 1, 1)), 1)
        w = np.concatenate([np.zeros((n, 1, 1)), np.cumsum(rng.normal(0, math.sqrt(DT), (n, N, 1)), 1)], 1)
        g = np.linspace(0.5, 1.5, N)
        est = estimate_dw_grad(fld, paths, RandomnessContext(w, 0, DT), 0, 0, g=g)
        assert abs(est.estimate - 0.6 * g.sum() * DT) <= 3 * est.std_error

    def test_needs_gradient(self):
        bare = RandomField("bare", 1, None)
        with pytest.raises(UnsupportedFieldError):
            estimate_dw_grad(bare, np.zeros((2, 3, 1)), noise(3).repeat(2), 0, 0)


class TestCrosscheck:
    def test_state_field(self):
        rep = crosscheck_suite(state_quadratic(1.0, 0.5), 10)
        assert rep.passed and rep.entries["grad"]["max_error"] <= 1e-6

    def test_bound_field_flat(self):
        fld = bound_field(1.0, 1.0)
        for t, x, ctx in random_points(5, 1, 1, 0):
            assert fd_gradient(fld, t, x, ctx=ctx)[0] == 0.0
        assert crosscheck_suite(fld, 5).passed

    def test_corrupted_gradient(self):
        good = state_quadratic(1.0, 0.0)
        bad = good.with_override(grad=lambda t, x, c: 1.1 * 2 * x[:, -1])
        rep = crosscheck_suite(bad, 20)
        assert not rep.passed
        assert 0.05 < rep.entries["grad"]["max_error"] <= 0.1

    @pytest.mark.parametrize("name", ["sin_integral", "running_integral", "snapshot", "constant", "brownian"])
    def test_catalog_entries_pass(self, name):
        assert crosscheck_suite(catalog(name), 8, seed=2).passed

    def test_needs_suite(self):
        with pytest.raises(UnsupportedFieldError):
            crosscheck_suite(RandomField("bare", 1, lambda t, x, c: x[:, -1, 0]))


def test_catalog_names():
    assert {"sin_integral", "state_quadratic", "running_integral", "upper_bound", "snapshot"} <= set(CATALOG)
    with pytest.raises(InvalidInputError):
        catalog("nope")


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_constant_field_derivatives_vanish(c, x_end):
    fld = constant_field(c)
    x = np.array([[[0.0], [x_end]]])
    ctx = RandomnessContext(np.zeros((1, 2, 1)), 0, 0.5)
    assert fld.values(0.5, x, ctx)[0] == c
    for name in ("grad", "hess", "d_t", "d_w", "d_w_grad"):
        assert not np.any(fld.derivative(name, 0.5, x, ctx))
