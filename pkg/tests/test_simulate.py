import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathhjb.errors import DivergenceError, InvalidInputError
from pathhjb.families import demo_spec, random_bounded_spec
from pathhjb.model import RandomnessContext
from pathhjb.path_space import TimeGrid, first_holder_exit, read_path
from pathhjb.simulate import ControlPolicy, euler_step, moment_report, sample_noise, simulate

from conftest import make_spec

GRID = TimeGrid(0.0, 1.0, 16)


class TestNoise:
    def test_reproducible_and_worker_independent(self):
        a = sample_noise(GRID, 2, 1, 50, seed=7, workers=1)
        b = sample_noise(GRID, 2, 1, 50, seed=7, workers=3)
        assert np.array_equal(a.increments, b.increments)
        assert not np.array_equal(a.increments, sample_noise(GRID, 2, 1, 50, seed=8).increments)

    def test_paths_are_keyed_individually(self):
        full = sample_noise(GRID, 1, 0, 10, seed=3)
        tail = sample_noise(GRID, 1, 0, 4, seed=3, first_path=6)
        assert np.array_equal(full.increments[6:], tail.increments)

    def test_mean_clt(self):
        g = TimeGrid(0.0, 1.0, 10)
        inc = sample_noise(g, 1, 0, 10_000, seed=0).increments
        assert abs(inc.mean()) <= 4 * math.sqrt(g.dt / inc.size)
        assert inc.var() == pytest.approx(g.dt, rel=0.03)

    def test_quadratic_variation(self):
        g = TimeGrid(0.0, 1.0, 1024)
        qv = (sample_noise(g, 2, 0, 20, seed=1).increments ** 2).sum(axis=1)
        assert np.all(np.abs(qv - 1) < 6 * math.sqrt(2 * g.dt))

    def test_coarsen_block_sums(self):
        fine = sample_noise(TimeGrid(0.0, 1.0, 8), 1, 0, 3, seed=2)
        coarse = fine.coarsen(4)
        assert coarse.grid.n_steps == 2
        np.testing.assert_allclose(coarse.increments[:, 0], fine.increments[:, :4].sum(axis=1))
        with pytest.raises(InvalidInputError):
            fine.coarsen(3)

    def test_rademacher(self):
        inc = sample_noise(GRID, 1, 0, 5, seed=0, kind="rademacher").increments
        assert np.allclose(np.abs(inc), math.sqrt(GRID.dt))

    def test_bad_args(self):
        with pytest.raises(InvalidInputError):
            sample_noise(GRID, 1, 0, 0)
        with pytest.raises(InvalidInputError):
            sample_noise(GRID, 1, 0, 1, kind="levy")


class TestEulerStep:
    x = np.array([[[0.3], [0.5]]])
    ctx = RandomnessContext(np.zeros((1, 2, 1)), 0, 0.1)

    def test_frozen(self):
        nxt, _, _ = euler_step(make_spec(), ControlPolicy.constant(0), 0.1, self.x, np.array([0.7]), self.ctx, 0.1)
        assert nxt[0, 0] == 0.5

    def test_drift(self):
        nxt, _, _ = euler_step(make_spec(beta=lambda x, v: 1.0), ControlPolicy.constant(0), 0.1, self.x,
                               np.array([0.7]), self.ctx, 0.1)
        assert nxt[0, 0] - 0.5 == pytest.approx(0.1, abs=1e-15)

    def test_noise(self):
        nxt, _, _ = euler_step(make_spec(sigma=lambda x, v: 1.0), ControlPolicy.constant(0), 0.1, self.x,
                               np.array([0.7]), self.ctx, 0.1)
        assert nxt[0, 0] == 0.5 + 0.7

    def test_divergence(self):
        spec = make_spec(beta=lambda x, v: 1e9)
        with pytest.raises(DivergenceError) as err:
            euler_step(spec, ControlPolicy.constant(0), 0.1, self.x, np.array([0.0]), self.ctx, 0.1, i=1)
        assert err.value.step == 1 and err.value.paths == [0]

    def test_policy_range_checked(self):
        with pytest.raises(InvalidInputError):
            euler_step(make_spec(), ControlPolicy.constant(5), 0.1, self.x, np.array([0.0]), self.ctx, 0.1)


class TestSimulate:
    def test_ode_limit(self):
        spec = make_spec(beta=lambda x, v: v)
        sim = simulate(spec, ControlPolicy.constant(1), 0.0, [[0.0]], sample_noise(GRID, 1, 0, 5, 0))
        np.testing.assert_allclose(sim.values[:, -1, 0], 1.0)

    def test_prefix_preserved(self):
        spec = demo_spec()
        noise = sample_noise(GRID, 2, 1, 4, 0)
        xi = np.random.default_rng(0).normal(size=(5, 2))
        sim = simulate(spec, ControlPolicy.random(2, 1), GRID.time(4), xi, noise)
        assert np.array_equal(sim.values[:, :5], np.broadcast_to(xi, (4, 5, 2)))
        assert np.all(sim.controls[:, :4] == -1) and np.all(sim.controls[:, 4:] >= 0)
        assert np.all(np.isfinite(sim.values))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31), st.integers(0, 7), st.integers(1, 8))
    def test_flow_bitwise(self, seed, a, gap):
        rng = np.random.default_rng(seed)
        spec = random_bounded_spec(rng)
        noise = sample_noise(GRID, 1, 0, 6, seed)
        pol = ControlPolicy.random(spec.n_controls, seed)
        xi = np.full((a + 1, 1), rng.normal())
        b = min(a + gap, GRID.n_steps)
        full = simulate(spec, pol, GRID.time(a), xi, noise)
        part = simulate(spec, pol, GRID.time(a), xi, noise, t_end=GRID.time(b))
        rest = simulate(spec, pol, GRID.time(b), part.values[:, : b + 1], noise)
        assert np.array_equal(full.values, rest.values)
        assert np.array_equal(full.controls[:, b:], rest.controls[:, b:])

    def test_worker_count_irrelevant(self, monkeypatch):
        spec = demo_spec()
        noise = sample_noise(TimeGrid(0.0, 1.0, 8), 2, 1, 5000, 0)
        a = simulate(spec, ControlPolicy.random(2, 0), 0.0, [[0.1, 0.2]], noise, workers=1)
        b = simulate(spec, ControlPolicy.random(2, 0), 0.0, [[0.1, 0.2]], noise, workers=4)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.running_cost, b.running_cost)

    def test_sup_moment_against_oracle(self):
        """E sup|W|^2 on [0, 1] agrees with a 10x larger independent run."""
        spec = make_spec(sigma=lambda x, v: 1.0)
        g = TimeGrid(0.0, 1.0, 64)

        def sup2(n, seed):
            sim = simulate(spec, ControlPolicy.constant(0), 0.0, [[0.0]], sample_noise(g, 1, 0, n, seed))
            return np.max(np.abs(sim.values[:, :, 0]), axis=1) ** 2

        s = sup2(10_000, 1)
        oracle = sup2(100_000, 2)
        se = math.hypot(s.std() / math.sqrt(s.size), oracle.std() / math.sqrt(oracle.size))
        assert abs(s.mean() - oracle.mean()) <= 3 * se

    def test_annotations(self):
        spec = make_spec(sigma=lambda x, v: 1.0)
        noise = sample_noise(GRID, 1, 0, 20, 3)
        sim = simulate(spec, ControlPolicy.constant(0), 0.0, [[0.0]], noise, holder=[(0.25, 0.5), (0.25, 2.0)],
                       balls=[0.3])
        lo, hi = sim.annotations["holder_exit[alpha=0.25,k=0.5]"], sim.annotations["holder_exit[alpha=0.25,k=2.0]"]
        assert np.all(lo <= hi)
        for p in range(3):
            assert lo[p] == first_holder_exit(sim.path(p), 0.0, 0.25, 0.5)
        assert "ball_exit[delta=0.3]" in sim.annotations

    def test_exit_fraction_vanishes(self):
        spec = make_spec(sigma=lambda x, v: 1.0)
        noise = sample_noise(TimeGrid(0.0, 1.0, 64), 1, 0, 500, 4)
        ks = (0.5, 1.0, 2.0, 4.0, 8.0)
        sim = simulate(spec, ControlPolicy.constant(0), 0.0, [[0.0]], noise, holder=[(0.25, k) for k in ks])
        frac = [np.mean(sim.annotations[f"holder_exit[alpha=0.25,k={k}]"] < 1.0) for k in ks]
        assert all(b <= a for a, b in zip(frac, frac[1:])) and frac[-1] == 0

    def test_export(self, tmp_path):
        spec = demo_spec()
        sim = simulate(spec, ControlPolicy.constant(0), 0.0, [[0.0, 0.0]], sample_noise(GRID, 2, 1, 3, 0))
        csv_path, json_path = sim.export(tmp_path, "run", spec.digest(), 0)
        text = open(csv_path).read()
        assert text.startswith(f"# spec_digest={spec.digest()}, seed=0")
        meta = json.load(open(json_path))
        assert meta["spec_digest"] == spec.digest() and len(meta["controls"]) == 3

    def test_export_single_path_readable(self, tmp_path):
        from pathhjb.path_space import write_path
        spec = demo_spec()
        sim = simulate(spec, ControlPolicy.constant(0), 0.0, [[0.0, 0.0]], sample_noise(GRID, 2, 1, 1, 0))
        p = tmp_path / "one.csv"
        with open(p, "w") as fh:
            write_path(sim.path(0), fh)
        assert read_path(open(p)) == sim.path(0)

    def test_rejects_wrong_noise(self):
        with pytest.raises(InvalidInputError):
            simulate(demo_spec(), ControlPolicy.constant(0), 0.0, [[0.0, 0.0]], sample_noise(GRID, 1, 0, 2, 0))


class TestMoments:
    def test_frozen(self):
        spec = make_spec()
        rep = moment_report(spec, ControlPolicy.constant(0), 0.0, [[2.0]], (2, 4), n_paths=10, grid=GRID)
        assert rep.sup_moment[2] == 4.0 and rep.sup_moment[4] == 16.0
        assert rep.sup_ratio[2] <= 1

    def test_identical_starts(self):
        rep = moment_report(demo_spec(), ControlPolicy.random(2, 0), 0.0, [[0.5, 0.5]], (2, 4), n_paths=100,
                            grid=GRID, xi_hat=[[0.5, 0.5]])
        assert rep.stability_ratio == {2: 0.0, 4: 0.0}

    def test_increment_ratio_stable(self):
        spec = demo_spec()
        fine = sample_noise(TimeGrid(0.0, 1.0, 64), 2, 1, 20_000, 0)
        pol = ControlPolicy.random(2, 0)
        r1 = moment_report(spec, pol, 0.0, [[0.5, 0.5]], (2,), noise=fine.coarsen(2))
        r2 = moment_report(spec, pol, 0.0, [[0.5, 0.5]], (2,), noise=fine)
        assert r1.finite() and r2.finite()
        assert 0.5 <= r1.increment_ratio[2] / r2.increment_ratio[2] <= 2.0

    def test_bad_order(self):
        with pytest.raises(InvalidInputError):
            moment_report(demo_spec(), ControlPolicy.constant(0), 0.0, [[0.0, 0.0]], (0,), n_paths=2)
