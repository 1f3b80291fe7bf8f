"""Brownian drivers and the Euler-Maruyama scheme for the controlled path-dependent SDE."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .model import ModelSpec, RandomnessContext, evaluate_coefficients
from .path_space import DiscretePath, TimeGrid, holder_exit_indices, write_paths

DIVERGENCE_GUARD = 1e6
_CHUNK = 4096  # paths per work item; fixed so results never depend on the worker count


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("PATHHJB_WORKERS", "1") or 1)
    if workers < 1:
        raise InvalidInputError("workers must be >= 1")
    return workers


def _chunks(n: int):
    return [(a, min(a + _CHUNK, n)) for a in range(0, n, _CHUNK)]


def _map_chunks(fn, n: int, workers: int):
    parts = _chunks(n)
    if workers == 1 or len(parts) == 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), parts))


# ---------------------------------------------------------------- noise

def path_generator(seed: int, path: int) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by ``(path, seed)``."""
    return np.random.Generator(np.random.Philox(key=[int(path), int(seed)]))


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Brownian increments ``(n_paths, n_steps, m)`` on a grid; each ~ N(0, dt I)."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int
    m0: int = 0
    kind: str = "gaussian"

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def m(self) -> int:
        return self.increments.shape[2]

    def brownian(self) -> np.ndarray:
        """Cumulative path ``W`` with ``W(t_0) = 0``, shape ``(n_paths, n_steps+1, m)``."""
        w = np.zeros((self.n_paths, self.grid.n_steps + 1, self.m))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w

    def context(self) -> RandomnessContext:
        return RandomnessContext(self.brownian(), self.m0, self.grid.dt, self.seed)

    def coarsen(self, factor: int) -> "NoiseBundle":
        """Bundle on the grid with ``factor``-times larger steps; increments are block sums."""
        n = self.grid.n_steps
        if factor < 1 or n % factor:
            raise InvalidInputError(f"cannot coarsen {n} steps by {factor}")
        inc = self.increments.reshape(self.n_paths, n // factor, factor, self.m).sum(axis=2)
        return replace(self, grid=TimeGrid(self.grid.t_start, self.grid.t_end, n // factor),
                       increments=inc)

    def take(self, rows) -> "NoiseBundle":
        return replace(self, increments=self.increments[rows])


def sample_noise(grid: TimeGrid, m: int, m0: int = 0, n_paths: int = 1, seed: int = 0,
                 workers: int | None = None, kind: str = "gaussian", first_path: int = 0) -> NoiseBundle:
    """Increments where entry ``(p, i, j)`` depends only on ``(seed, p, i, j)``.

    ``kind="rademacher"`` draws ``+-sqrt(dt)`` per component, matching the
    binary scenario tree.
    """
    if n_paths < 1:
        raise InvalidInputError("n_paths must be >= 1")
    if kind not in ("gaussian", "rademacher"):
        raise InvalidInputError(f"unknown noise kind {kind!r}")
    n, sd = grid.n_steps, math.sqrt(grid.dt)
    out = np.empty((n_paths, n, m))

    def fill(a, b):
        for p in range(a, b):
            g = path_generator(seed, first_path + p)
            if kind == "gaussian":
                out[p] = g.standard_normal((n, m)) * sd
            else:
                out[p] = np.where(g.integers(0, 2, size=(n, m)) == 1, sd, -sd)

    _map_chunks(fill, n_paths, resolve_workers(workers))
    return NoiseBundle(grid, out, int(seed), m0, kind)


# ---------------------------------------------------------------- policies

def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on uint64 arrays."""
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
    return x


class ControlPolicy:
    """Maps ``(step, time, prefix batch, context)`` to control-grid indices.

    Policies only see the prefix up to the current node, which keeps the
    controls adapted.
    """

    def __init__(self, kind: str, rule: Callable, description: str = ""):
        self.kind = kind
        self._rule = rule
        self.description = description or kind

    def __call__(self, i: int, t: float, x: np.ndarray, ctx: RandomnessContext,
                 path_ids: np.ndarray | None = None) -> np.ndarray:
        n = x.shape[0]
        idx = np.asarray(self._rule(i, t, x, ctx, path_ids), dtype=np.int64)
        return np.broadcast_to(idx, (n,)).copy()

    def __repr__(self):
        return f"ControlPolicy({self.description})"

    @classmethod
    def constant(cls, index: int = 0):
        return cls("constant", lambda i, t, x, c, p: index, f"constant[{index}]")

    @classmethod
    def open_loop(cls, indices: Sequence[int]):
        seq = np.asarray(indices, dtype=np.int64)

        def rule(i, t, x, c, p):
            if i >= len(seq):
                raise InvalidInputError(f"open-loop policy has no control for step {i}")
            return seq[i]

        return cls("open_loop", rule, f"open_loop{seq.tolist()}")

    @classmethod
    def feedback(cls, fn: Callable, description: str = "feedback"):
        """``fn(i, t, x, ctx) -> indices``."""
        return cls("feedback", lambda i, t, x, c, p: fn(i, t, x, c), description)

    @classmethod
    def random(cls, n_controls: int, seed: int = 0):
        """Uniform random control per (path, step), a pure function of (seed, path, step)."""

        def rule(i, t, x, c, p):
            ids = np.arange(x.shape[0]) if p is None else p
            with np.errstate(over="ignore"):
                salt = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
                key = _mix64(_mix64(ids.astype(np.uint64) + salt) + np.uint64(i))
            return (key % np.uint64(n_controls)).astype(np.int64)

        return cls("random", rule, f"random[{seed}]")


def check_indices(spec: ModelSpec, idx: np.ndarray) -> None:
    if np.any((idx < 0) | (idx >= spec.n_controls)):
        raise InvalidInputError("policy returned an index outside the control grid")


# ---------------------------------------------------------------- Euler scheme

def euler_step(spec: ModelSpec, policy: ControlPolicy | None, t_i: float, prefix: np.ndarray,
               dW: np.ndarray, ctx: RandomnessContext, dt: float, controls: np.ndarray | None = None,
               i: int | None = None, path_ids=None, guard: float = DIVERGENCE_GUARD):
    """One left-endpoint Euler-Maruyama step for a batch of prefixes.

    Returns ``(next_point (n, d), control_indices (n,), running_cost (n,))``.
    """
    x = prefix if prefix.ndim == 3 else prefix[None]
    dW = dW.reshape(x.shape[0], spec.m)
    step = x.shape[1] - 1 if i is None else i
    if controls is None:
        controls = policy(step, t_i, x, ctx, path_ids)
    check_indices(spec, controls)
    v = spec.control_grid[controls]
    b, s, f = evaluate_coefficients(spec, t_i, x, v, ctx)
    nxt = x[:, -1] + b * dt + np.einsum("nij,nj->ni", s, dW)
    bad = ~np.isfinite(nxt).all(axis=1) | (np.abs(nxt).max(axis=1) > guard)
    if bad.any():
        ids = np.flatnonzero(bad) if path_ids is None else np.asarray(path_ids)[bad]
        raise DivergenceError(f"state left the guard at step {step} on paths {ids[:10].tolist()}",
                              step=step, paths=ids.tolist())
    return nxt, controls, f


@dataclass(eq=False)
class SimResult:
    """Rollouts on the full grid; nodes before ``r_index`` are the initial prefix."""

    grid: TimeGrid
    values: np.ndarray
    controls: np.ndarray
    running_cost: np.ndarray
    noise: NoiseBundle
    r_index: int
    end_index: int
    annotations: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def path(self, p: int) -> DiscretePath:
        return DiscretePath(self.grid.prefix(self.end_index), self.values[p, : self.end_index + 1])

    def context(self) -> RandomnessContext:
        return self.noise.context().upto(self.end_index)

    def export(self, directory, stem: str = "paths", spec_digest: str = "", seed=None) -> tuple[str, str]:
        """Write ``<stem>.csv`` (long format) and ``<stem>.annotations.json``."""
        os.makedirs(directory, exist_ok=True)
        seed = self.noise.seed if seed is None else seed
        csv_path = os.path.join(directory, f"{stem}.csv")
        json_path = os.path.join(directory, f"{stem}.annotations.json")
        with open(csv_path, "w") as fh:
            write_paths(self.grid.prefix(self.end_index), self.values[:, : self.end_index + 1], fh,
                        comment=f"spec_digest={spec_digest}, seed={seed}")
        meta = {"spec_digest": spec_digest, "seed": seed, "n_paths": self.n_paths,
                "r": self.grid.time(self.r_index), "t_end": self.grid.time(self.end_index),
                "controls": self.controls.tolist(), "running_cost": self.running_cost.tolist(),
                "annotations": _jsonable(self.annotations)}
        with open(json_path, "w") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")
        return csv_path, json_path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _prefix_batch(xi, n: int, i_r: int, d: int) -> np.ndarray:
    if isinstance(xi, DiscretePath):
        arr = xi.values[None]
    else:
        arr = np.asarray(xi, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1, d) if arr.size != d else arr.reshape(1, 1, d)
        if arr.ndim == 2:
            arr = arr[None]
    if arr.shape[1] != i_r + 1 or arr.shape[2] != d:
        raise InvalidInputError(f"initial prefix has shape {arr.shape[1:]}, expected ({i_r + 1}, {d})")
    if arr.shape[0] not in (1, n):
        raise InvalidInputError("initial prefix batch does not match the number of paths")
    return np.broadcast_to(arr, (n, i_r + 1, d))


def ball_exit_indices(values: np.ndarray, start: int, delta: float, dt: float) -> np.ndarray:
    """First node ``s > start`` with ``d0(X_s, xi) > delta``; ``n_steps`` if none.

    Since the path agrees with ``xi`` up to ``start``, the distance reduces to
    ``sqrt(s - r) + max_{r <= u <= s} |X(u) - X(r)|``.
    """
    tail = np.linalg.norm(values[:, start:] - values[:, start : start + 1], axis=-1)
    dist = np.sqrt(np.arange(tail.shape[1]) * dt) + np.maximum.accumulate(tail, axis=1)
    hit = dist[:, 1:] > delta
    n = values.shape[1] - 1
    return np.where(hit.any(axis=1), start + 1 + np.argmax(hit, axis=1), n)


def simulate(spec: ModelSpec, policy: ControlPolicy, r: float, xi, noise: NoiseBundle,
             t_end: float | None = None, holder: Sequence[tuple[float, float]] = (),
             balls: Sequence[float] = (), workers: int | None = None,
             guard: float = DIVERGENCE_GUARD) -> SimResult:
    """Euler rollouts from ``(r, xi)`` driven by ``noise`` up to ``t_end`` (default ``T``).

    ``noise`` covers the whole grid from ``t_0``; steps before ``r`` are only
    used for the coefficient-visible Brownian history. ``xi`` is one prefix
    (DiscretePath or array) or a batch with one prefix per path, which is how
    a flow restart is expressed. ``holder`` lists ``(alpha, k)`` pairs and
    ``balls`` lists radii for exit-time annotations.
    """
    grid = noise.grid
    if noise.m != spec.m:
        raise InvalidInputError(f"noise has m={noise.m}, spec needs m={spec.m}")
    if not math.isclose(grid.t_end, spec.T, rel_tol=1e-12):
        raise InvalidInputError("noise grid must end at the spec horizon T")
    i_r = grid.index(r)
    i_end = grid.n_steps if t_end is None else grid.index(t_end)
    if i_end < i_r:
        raise InvalidInputError("t_end must not precede r")
    n, d, dt = noise.n_paths, spec.d, grid.dt
    values = np.zeros((n, grid.n_steps + 1, d))
    values[:, : i_r + 1] = _prefix_batch(xi, n, i_r, d)
    controls = np.full((n, grid.n_steps), -1, dtype=np.int64)
    cost = np.zeros(n)
    w = noise.brownian()

    def run(a, b):
        ids = np.arange(a, b)
        for i in range(i_r, i_end):
            c = RandomnessContext(w[a:b, : i + 1], spec.m0, dt, noise.seed)
            nxt, u, f = euler_step(spec, policy, grid.time(i), values[a:b, : i + 1],
                                   noise.increments[a:b, i], c, dt, i=i, path_ids=ids, guard=guard)
            values[a:b, i + 1] = nxt
            controls[a:b, i] = u
            cost[a:b] += f * dt

    _map_chunks(run, n, resolve_workers(workers))
    if i_end < grid.n_steps:
        values[:, i_end + 1 :] = values[:, i_end : i_end + 1]

    ann: dict = {}
    for alpha, k in holder:
        idx = holder_exit_indices(values[:, : i_end + 1], dt, i_r, alpha, k, None)
        ann[f"holder_exit[alpha={alpha},k={k}]"] = grid.nodes[idx]
    for delta in balls:
        idx = ball_exit_indices(values[:, : i_end + 1], i_r, delta, dt)
        ann[f"ball_exit[delta={delta}]"] = grid.nodes[idx]
    return SimResult(grid, values, controls, cost, noise, i_r, i_end, ann)


# ---------------------------------------------------------------- moments

@dataclass
class MomentReport:
    """Empirical moments as ratios against the a-priori bounding shapes."""

    p_values: list
    sup_moment: dict
    sup_ratio: dict
    increment_ratio: dict
    increment_ratios: dict
    stability_ratio: dict
    n_paths: int
    seed: int
    dt: float

    def finite(self) -> bool:
        vals = [*self.sup_ratio.values(), *self.increment_ratio.values(), *self.stability_ratio.values()]
        return all(math.isfinite(v) for v in vals)

    def as_dict(self) -> dict:
        return _jsonable(self.__dict__)


def _lattice(i_r: int, n: int, points: int) -> np.ndarray:
    return np.unique(np.linspace(i_r, n, min(points, n - i_r + 1)).round().astype(int))


def moment_report(spec: ModelSpec, policy: ControlPolicy, r: float, xi, p_values=(2, 4),
                  n_paths: int = 1000, seed: int = 0, grid: TimeGrid | None = None,
                  xi_hat=None, noise: NoiseBundle | None = None, lattice_points: int = 10,
                  workers: int | None = None) -> MomentReport:
    """Moment estimates for sup norms, increments and start-point stability.

    * ``sup_ratio[p] = E max|X|^p / (1 + |xi|_0^p)``
    * ``increment_ratio[p]`` is the max over a lattice of time pairs
      ``s < t`` of ``E d0(X_s, X_t)^p / (|t-s|^p + |t-s|^{p/2})``
    * ``stability_ratio[p] = E max|X - X_hat|^{p+1} / |xi - xi_hat|_0^{p+1}``
      with common noise, and exactly 0 when the two starts coincide.
    """
    if any(p <= 0 for p in p_values):
        raise InvalidInputError("moment orders must be positive")
    if noise is None:
        grid = grid or TimeGrid(0.0, spec.T, 64)
        noise = sample_noise(grid, spec.m, spec.m0, n_paths, seed, workers)
    grid = noise.grid
    i_r = grid.index(r)
    xi_arr = _prefix_batch(xi, 1, i_r, spec.d)[0]
    xi_hat_arr = xi_arr + np.concatenate([np.zeros((i_r, spec.d)), 0.1 * np.ones((1, spec.d))]) \
        if xi_hat is None else _prefix_batch(xi_hat, 1, i_r, spec.d)[0]
    sim = simulate(spec, policy, r, xi_arr, noise, workers=workers)
    X = sim.values
    xi_norm = float(np.max(np.linalg.norm(xi_arr, axis=-1)))
    sup = np.max(np.linalg.norm(X, axis=-1), axis=1)

    if np.array_equal(xi_arr, xi_hat_arr):
        gap, diff = 0.0, np.zeros(X.shape[0])
    else:
        X_hat = simulate(spec, policy, r, xi_hat_arr, noise, workers=workers).values
        gap = float(np.max(np.linalg.norm(xi_arr - xi_hat_arr, axis=-1)))
        diff = np.max(np.linalg.norm(X - X_hat, axis=-1), axis=1)

    lat = _lattice(i_r, grid.n_steps, lattice_points)
    out = {k: {} for k in ("sup_moment", "sup_ratio", "increment_ratio", "increment_ratios", "stability")}
    for p in p_values:
        m_sup = float(np.mean(sup ** p))
        out["sup_moment"][p] = m_sup
        out["sup_ratio"][p] = m_sup / (1.0 + xi_norm ** p)
        ratios = {}
        for a_pos, a in enumerate(lat[:-1]):
            tail = np.linalg.norm(X[:, a:] - X[:, a : a + 1], axis=-1)
            run_max = np.maximum.accumulate(tail, axis=1)
            for b in lat[a_pos + 1 :]:
                h = (b - a) * grid.dt
                d0 = math.sqrt(h) + run_max[:, b - a]
                ratios[(int(a), int(b))] = float(np.mean(d0 ** p)) / (h ** p + h ** (p / 2))
        out["increment_ratios"][p] = {f"{grid.time(a):.6g},{grid.time(b):.6g}": v for (a, b), v in ratios.items()}
        out["increment_ratio"][p] = max(ratios.values()) if ratios else 0.0
        out["stability"][p] = 0.0 if gap == 0.0 else float(np.mean(diff ** (p + 1))) / gap ** (p + 1)
    return MomentReport(list(p_values), out["sup_moment"], out["sup_ratio"], out["increment_ratio"],
                        out["increment_ratios"], out["stability"], noise.n_paths, noise.seed, grid.dt)
