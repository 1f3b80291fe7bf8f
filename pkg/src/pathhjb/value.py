"""Cost functional, value function and dynamic programming.

Two representations of the value function share the :class:`ValueSurface`
interface:

* ``tree``: exact Bellman recursion on a non-recombining scenario tree whose
  branches are both noise outcomes and control choices;
* ``lsmc``: least-squares Monte Carlo, regressing one-step continuation values
  on polynomial features of finitely many path snapshots.

Controls are piecewise constant on the grid and chosen from the spec's finite
control grid; ties break towards the lowest index everywhere.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, ResourceError
from .model import ModelSpec, RandomnessContext, evaluate_coefficients, evaluate_terminal
from .path_space import TimeGrid
from .simulate import ControlPolicy, NoiseBundle, sample_noise, simulate

DEFAULT_NODE_CAP = 2 ** 20
DEFAULT_ENUM_BUDGET = 2 ** 22


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    return float(x.mean()), (float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


# ---------------------------------------------------------------- Monte Carlo cost

def cost_samples(spec: ModelSpec, policy: ControlPolicy, t: float, xi, noise: NoiseBundle,
                 workers: int | None = None) -> np.ndarray:
    """Per-path realized cost: left-endpoint running cost from ``t`` plus ``G``."""
    sim = simulate(spec, policy, t, xi, noise, workers=workers)
    g = evaluate_terminal(spec, sim.values, sim.context())
    return sim.running_cost + g


def cost_mc(spec: ModelSpec, policy: ControlPolicy, t: float, xi, n_paths: int = 1000, seed: int = 0,
            grid: TimeGrid | None = None, noise: NoiseBundle | None = None,
            workers: int | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of the cost functional with its standard error."""
    if noise is None:
        grid = grid or TimeGrid(0.0, spec.T, 64)
        noise = sample_noise(grid, spec.m, spec.m0, n_paths, seed, workers)
    return _mean_se(cost_samples(spec, policy, t, xi, noise, workers))


# ---------------------------------------------------------------- scenario tree

def shock_set(m: int, dt: float, kind: str = "rademacher", order: int = 3):
    """Branch increments ``(b, m)`` and probabilities ``(b,)`` for one step."""
    if kind == "rademacher":
        pts = np.array(list(itertools.product((-1.0, 1.0), repeat=m)))
        w = np.full(len(pts), 1.0 / len(pts))
    elif kind == "gauss-hermite":
        z, wz = np.polynomial.hermite_e.hermegauss(order)
        wz = wz / wz.sum()
        pts = np.array(list(itertools.product(z, repeat=m)))
        w = np.array([np.prod(c) for c in itertools.product(wz, repeat=m)])
    else:
        raise InvalidInputError(f"unknown shock kind {kind!r}")
    return pts * math.sqrt(dt), w


def tree_node_count(n_controls: int, branching: int, depth: int) -> int:
    kb = n_controls * branching
    return sum(kb ** i for i in range(depth + 1))


def _expect(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum over the last axis in a fixed order.

    Every expectation in this module goes through here, so comparisons
    between recursions are exact in floating point: each operation is
    monotone under rounding.
    """
    out = values[..., 0] * weights[0]
    for k in range(1, len(weights)):
        out = out + values[..., k] * weights[k]
    return out


@dataclass(eq=False)
class ScenarioTree:
    """Controlled non-recombining tree.

    Level ``i`` holds ``(K b)^i`` nodes; the child of node ``n`` under control
    ``v`` and shock ``k`` has index ``(n K + v) b + k``.
    """

    spec: ModelSpec
    grid: TimeGrid
    shocks: np.ndarray
    weights: np.ndarray
    X: list
    W: list
    F: list

    @property
    def depth(self) -> int:
        return self.grid.n_steps

    @property
    def branching(self) -> int:
        return len(self.weights)

    @property
    def n_nodes(self) -> int:
        return sum(len(x) for x in self.X)

    def children(self, level: int, controls: np.ndarray) -> np.ndarray:
        """Child indices ``(n_level, b)`` under one control index per node."""
        K, b = self.spec.n_controls, self.branching
        base = (np.arange(len(self.X[level])) * K + controls) * b
        return base[:, None] + np.arange(b)

    def context(self, level: int) -> RandomnessContext:
        return RandomnessContext(self.W[level], self.spec.m0, self.grid.dt)


def build_tree(spec: ModelSpec, depth: int, x0=None, kind: str = "rademacher", order: int = 3,
               node_cap: int = DEFAULT_NODE_CAP) -> ScenarioTree:
    """Expand every control and shock sequence from ``x0`` over ``depth`` steps on ``[0, T]``."""
    if depth < 1:
        raise InvalidInputError("depth must be >= 1")
    grid = TimeGrid(0.0, spec.T, depth)
    shocks, weights = shock_set(spec.m, grid.dt, kind, order)
    K, b = spec.n_controls, len(weights)
    total = tree_node_count(K, b, depth)
    if total > node_cap:
        raise ResourceError(f"tree needs {total} nodes, cap is {node_cap}")
    x0 = np.zeros(spec.d) if x0 is None else np.asarray(x0, dtype=float).reshape(spec.d)
    X = [x0.reshape(1, 1, spec.d)]
    W = [np.zeros((1, 1, spec.m))]
    F = []
    dt = grid.dt
    for i in range(depth):
        x, w = X[i], W[i]
        n = x.shape[0]
        ctx = RandomnessContext(w, spec.m0, dt)
        nxt = np.empty((n, K, b, spec.d))
        f = np.empty((n, K))
        for v in range(K):
            vb = np.broadcast_to(spec.control_grid[v], (n, spec.control_grid.shape[1]))
            beta, sig, fv = evaluate_coefficients(spec, grid.time(i), x, vb, ctx)
            f[:, v] = fv
            nxt[:, v] = (x[:, -1] + beta * dt)[:, None, :] + np.einsum("nij,bj->nbi", sig, shocks)
        F.append(f)
        rep = np.repeat(x, K * b, axis=0)
        X.append(np.concatenate([rep, nxt.reshape(n * K * b, 1, spec.d)], axis=1))
        wn = (w[:, -1][:, None, None, :] + shocks[None, None]).repeat(K, axis=1)
        W.append(np.concatenate([np.repeat(w, K * b, axis=0), wn.reshape(n * K * b, 1, spec.m)], axis=1))
    return ScenarioTree(spec, grid, shocks, weights, X, W, F)


# ---------------------------------------------------------------- value surfaces

@dataclass(eq=False)
class FeatureSpec:
    """Snapshot times and polynomial degree of the regression basis."""

    snapshot_times: tuple = ()
    degree: int = 2
    include_noise: bool = True
    running_max: bool = False

    def raw(self, grid: TimeGrid, i: int, x: np.ndarray, ctx: RandomnessContext | None, m0: int) -> np.ndarray:
        cols = []
        for s in self.snapshot_times:
            k = grid.index(s)
            if k < i:
                cols.append(x[:, k])
        cols.append(x[:, i])
        if self.running_max:
            cols.append(x[:, : i + 1].max(axis=1))
        if self.include_noise and m0 > 0 and ctx is not None:
            cols.append(ctx.w[:, i, :m0])
        return np.concatenate(cols, axis=1)

    def as_dict(self) -> dict:
        return {"snapshot_times": list(self.snapshot_times), "degree": self.degree,
                "include_noise": self.include_noise, "running_max": self.running_max}


def _poly(z: np.ndarray, degree: int) -> np.ndarray:
    n, k = z.shape
    cols = [np.ones((n, 1))]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(k), deg):
            cols.append(np.prod(z[:, combo], axis=1, keepdims=True))
    return np.concatenate(cols, axis=1)


@dataclass(eq=False)
class Regression:
    """Standardization plus coefficients of one step's per-control fits."""

    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    coef: np.ndarray  # (K, n_basis)
    cond: float
    ridge: bool

    def design(self, raw: np.ndarray, degree: int) -> np.ndarray:
        z = (raw[:, self.keep] - self.mean) / self.scale
        return _poly(z, degree)

    def as_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "keep": self.keep.tolist(),
                "coef": self.coef.tolist(), "cond": self.cond, "ridge": self.ridge}


def _fit(raw: np.ndarray, targets: np.ndarray, degree: int, cond_limit: float = 1e10) -> Regression:
    mean, scale = raw.mean(axis=0), raw.std(axis=0)
    keep = np.flatnonzero(scale > 1e-12 * (1.0 + np.abs(mean)))
    reg = Regression(mean[keep], scale[keep], keep, np.empty(0), 1.0, False)
    A = reg.design(raw, degree)
    sv = np.linalg.svd(A, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    rank_ok = A.shape[0] >= A.shape[1] and cond <= cond_limit
    if rank_ok:
        coef = np.linalg.lstsq(A, targets, rcond=None)[0]
    else:
        lam = 1e-8 * float(sv[0] ** 2)
        coef = np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ targets)
    reg.coef, reg.cond, reg.ridge = coef.T.copy(), cond, not rank_ok
    return reg


@dataclass(eq=False)
class ValueSurface:
    """Value function on a grid, exact (tree) or regressed (lsmc)."""

    spec: ModelSpec
    grid: TimeGrid
    mode: str
    seed: int | None = None
    tables: list | None = None          # tree: V per level
    argmin: list | None = None          # tree: optimal control index per node
    tree: ScenarioTree | None = None
    features: FeatureSpec | None = None
    regressions: list | None = None     # lsmc: Regression per step 0..N-1
    v0: float | None = None
    v0_se: float | None = None
    history: list = field(default_factory=list)

    @property
    def bound(self) -> float:
        return self.spec.value_bound

    def continuation(self, i: int, x: np.ndarray, ctx: RandomnessContext | None) -> np.ndarray:
        """Fitted ``f dt + E[V(t_{i+1})]`` per control, ``(n, K)`` (lsmc mode)."""
        reg = self.regressions[i]
        raw = self.features.raw(self.grid, i, x, ctx, self.spec.m0)
        return reg.design(raw, self.features.degree) @ reg.coef.T

    def evaluate(self, i: int, x: np.ndarray, ctx: RandomnessContext | None = None) -> np.ndarray:
        """``V(t_i, x)`` for prefixes ``x`` of shape ``(n, i+1, d)``; lsmc mode."""
        if self.mode != "lsmc":
            raise InvalidInputError("tree surfaces are evaluated by node index via .tables")
        if ctx is None:
            ctx = RandomnessContext(np.zeros(x.shape[:2] + (self.spec.m,)), self.spec.m0, self.grid.dt)
        if i == self.grid.n_steps:
            return evaluate_terminal(self.spec, x, ctx)
        if i == 0 and self.v0 is not None:
            return np.full(x.shape[0], self.v0)
        return np.clip(self.continuation(i, x, ctx).min(axis=1), -self.bound, self.bound)

    def policy(self) -> ControlPolicy:
        """Greedy feedback policy; the lowest index wins ties."""
        if self.mode != "lsmc":
            raise InvalidInputError("tree policies are read from .argmin")

        def rule(i, t, x, ctx):
            return np.argmin(self.continuation(i, x, ctx), axis=1)

        return ControlPolicy.feedback(rule, "lsmc-greedy")

    def all_values(self) -> np.ndarray:
        """Every tabulated value (tree mode)."""
        if self.mode != "tree":
            raise InvalidInputError("lsmc surfaces have no table; evaluate them on paths")
        return np.concatenate([np.ravel(v) for v in self.tables])

    def as_dict(self) -> dict:
        out = {"mode": self.mode, "spec_digest": self.spec.digest(), "seed": self.seed,
               "grid": {"t_start": self.grid.t_start, "t_end": self.grid.t_end, "n_steps": self.grid.n_steps},
               "bound": self.bound}
        if self.mode == "tree":
            out["V"] = [v.tolist() for v in self.tables]
            out["argmin"] = [a.tolist() for a in self.argmin]
            out["value"] = float(self.tables[0][0])
        else:
            out["features"] = self.features.as_dict()
            out["regressions"] = [r.as_dict() for r in self.regressions]
            out["value"] = self.v0
            out["std_error"] = self.v0_se
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def tree_backward_induction(spec: ModelSpec, tree: ScenarioTree) -> ValueSurface:
    """Exact Bellman recursion ``V = min_v [f dt + E V(child)]`` with ``V = G`` at the leaves."""
    N, K, b, dt = tree.depth, spec.n_controls, tree.branching, tree.grid.dt
    V = [None] * (N + 1)
    A = [None] * N
    V[N] = evaluate_terminal(spec, tree.X[N], tree.context(N))
    for i in range(N - 1, -1, -1):
        cont = _expect(V[i + 1].reshape(-1, K, b), tree.weights)
        Q = tree.F[i] * dt + cont
        A[i] = np.argmin(Q, axis=1)
        V[i] = Q[np.arange(Q.shape[0]), A[i]]
    return ValueSurface(spec, tree.grid, "tree", tables=V, argmin=A, tree=tree)


def strategy_value(tree: ScenarioTree, controls: Sequence[np.ndarray], start: int = 0, stop: int | None = None,
                   terminal: np.ndarray | None = None) -> np.ndarray:
    """Expected cost from every node at level ``start`` when level-``l`` nodes use ``controls[l]``.

    Costs accrue up to level ``stop`` (default the leaves), where ``terminal``
    (default ``G``) is collected.
    """
    spec = tree.spec
    stop = tree.depth if stop is None else stop
    Z = evaluate_terminal(spec, tree.X[stop], tree.context(stop)) if terminal is None else terminal
    for lvl in range(stop - 1, start - 1, -1):
        ch = tree.children(lvl, controls[lvl])
        f = tree.F[lvl][np.arange(len(ch)), controls[lvl]]
        Z = f * tree.grid.dt + _expect(Z[ch], tree.weights)
    return Z


@dataclass
class EnumerationResult:
    value: float
    strategy: np.ndarray  # control index per noise-history node, breadth-first
    n_strategies: int


def enumerate_strategies(spec: ModelSpec, tree: ScenarioTree, budget: int = DEFAULT_ENUM_BUDGET,
                         chunk: int = 4096) -> EnumerationResult:
    """Brute-force minimum of the expected cost over all adapted strategies on the tree.

    A strategy assigns one control to every noise-history node below the
    leaves; the expected cost is accumulated leaf by leaf, independently of the
    Bellman recursion.
    """
    N, K, b, dt = tree.depth, spec.n_controls, tree.branching, tree.grid.dt
    n_internal = sum(b ** i for i in range(N))
    if n_internal * math.log2(max(K, 2)) > 62 or K ** n_internal > budget:
        raise ResourceError(f"{K}^{n_internal} strategies exceed the budget {budget}")
    total = K ** n_internal
    leaves = np.array(list(itertools.product(range(b), repeat=N)), dtype=np.int64).reshape(-1, N)
    prob = np.prod(tree.weights[leaves], axis=1)
    offsets = np.cumsum([0] + [b ** i for i in range(N)])
    best_val, best_id = math.inf, -1
    powers = K ** np.arange(n_internal, dtype=np.int64)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total), dtype=np.int64)
        strat = (ids[:, None] // powers) % K  # (s, n_internal)
        S, P = len(ids), len(leaves)
        node = np.zeros((S, P), dtype=np.int64)      # controlled-tree index at current level
        noise_node = np.zeros(P, dtype=np.int64)     # index among b^level noise histories
        cost = np.zeros((S, P))
        for lvl in range(N):
            v = strat[:, offsets[lvl] + noise_node]
            cost += tree.F[lvl][node, v] * dt
            node = (node * K + v) * b + leaves[:, lvl]
            noise_node = noise_node * b + leaves[:, lvl]
        g = evaluate_terminal(spec, tree.X[N][node.ravel()], RandomnessContext(
            tree.W[N][node.ravel()], spec.m0, dt)).reshape(S, P)
        exp_cost = (cost + g) @ prob
        j = int(np.argmin(exp_cost))
        if exp_cost[j] < best_val:
            best_val, best_id = float(exp_cost[j]), int(ids[j])
    strategy = (best_id // K ** np.arange(n_internal)) % K
    return EnumerationResult(best_val, strategy, total)


# ---------------------------------------------------------------- LSMC

def lsmc_value(spec: ModelSpec, grid: TimeGrid, n_paths: int, features: FeatureSpec | None = None,
               n_policy_iters: int = 2, seed: int = 0, x0=None, noise_kind: str = "gaussian",
               workers: int | None = None, cond_limit: float = 1e10) -> ValueSurface:
    """Regression Monte Carlo for the value function on ``grid`` from ``x0`` at time 0.

    Iteration 0 explores with uniformly random controls; each later iteration
    simulates under the greedy policy of the previous surface with fresh
    noise. Each backward step regresses, for every control, the one-step
    target ``f dt + V(t_{i+1})`` (computed with the path's own increment for
    every control) on the features at ``t_i``; the surface is the pointwise
    minimum, clipped to ``[-L(T+1), L(T+1)]``.

    ``v0_se`` is the sampling error of the final average over first-step
    targets only; regression error from later steps is not included.
    """
    if not math.isclose(grid.t_end, spec.T) or grid.t_start != 0.0:
        raise InvalidInputError("grid must span [0, T]")
    features = features or FeatureSpec()
    for s in features.snapshot_times:
        grid.index(s)
    x0 = np.zeros(spec.d) if x0 is None else np.asarray(x0, dtype=float).reshape(spec.d)
    N, K, dt, bound = grid.n_steps, spec.n_controls, grid.dt, spec.value_bound
    surface = ValueSurface(spec, grid, "lsmc", seed=seed, features=features, regressions=[None] * N)
    history = []
    for it in range(max(1, n_policy_iters)):
        noise = sample_noise(grid, spec.m, spec.m0, n_paths, seed + 7919 * it, workers, noise_kind)
        policy = ControlPolicy.random(K, seed + it) if it == 0 else surface.policy()
        sim = simulate(spec, policy, 0.0, x0[None], noise, workers=workers)
        X, w = sim.values, noise.brownian()
        regs = [None] * N
        new = ValueSurface(spec, grid, "lsmc", seed=seed, features=features, regressions=regs)
        for i in range(N - 1, -1, -1):
            x = X[:, : i + 1]
            ctx = RandomnessContext(w[:, : i + 1], spec.m0, dt, seed)
            ctx_next = RandomnessContext(w[:, : i + 2], spec.m0, dt, seed)
            targets = np.empty((n_paths, K))
            for v in range(K):
                vb = np.broadcast_to(spec.control_grid[v], (n_paths, spec.control_grid.shape[1]))
                beta, sig, f = evaluate_coefficients(spec, grid.time(i), x, vb, ctx)
                nxt = x[:, -1] + beta * dt + np.einsum("nij,nj->ni", sig, noise.increments[:, i])
                xn = np.concatenate([x, nxt[:, None]], axis=1)
                targets[:, v] = f * dt + new.evaluate(i + 1, xn, ctx_next)
            regs[i] = _fit(features.raw(grid, i, x, ctx, spec.m0), targets, features.degree, cond_limit)
            if i == 0:
                means = targets.mean(axis=0)
                j = int(np.argmin(means))
                new.v0 = float(np.clip(means[j], -bound, bound))
                new.v0_se = _mean_se(targets[:, j])[1]
        history.append({"iteration": it, "v0": new.v0, "v0_se": new.v0_se,
                        "cond_max": max(r.cond for r in regs), "ridge_steps": [k for k, r in enumerate(regs) if r.ridge]})
        surface = new
    surface.history = history
    return surface


# ---------------------------------------------------------------- properties

def dpp_residual(spec: ModelSpec, surface: ValueSurface, t: float, t_hat: float, prefixes=None,
                 n_paths: int = 1000, seed: int = 0, workers: int | None = None) -> dict:
    """Gap between ``V(t)`` and the one-shot minimization of ``E[int_t^t_hat f + V(t_hat)]``.

    Tree mode: every node at level ``t`` is tested by re-running the Bellman
    recursion on its subtree truncated at ``t_hat`` (``prefixes`` ignored).
    LSMC mode: ``prefixes`` is an ``(n, i+1, d)`` batch; controls are frozen on
    ``[t, t_hat]`` and the expectation is a Monte Carlo average with common
    noise across controls.
    """
    grid = surface.grid
    i, j = grid.index(t), grid.index(t_hat)
    if not i < j:
        raise InvalidInputError("need t < t_hat")
    if surface.mode == "tree":
        tree = surface.tree
        K, b = spec.n_controls, tree.branching
        Z = surface.tables[j]
        for lvl in range(j - 1, i - 1, -1):
            Q = tree.F[lvl] * tree.grid.dt + _expect(Z.reshape(-1, K, b), tree.weights)
            Z = Q.min(axis=1)
        res = float(np.max(np.abs(Z - surface.tables[i])))
        return {"residual": res, "std_error": 0.0, "n_points": int(Z.size), "mode": "tree"}

    prefixes = np.asarray(prefixes, dtype=float)
    if prefixes.ndim == 2:
        prefixes = prefixes[None]
    res, ses = [], []
    noise = sample_noise(grid, spec.m, spec.m0, n_paths, seed, workers)
    ctx_all = noise.context()
    for p in prefixes:
        lhs = float(surface.evaluate(i, np.repeat(p[None], n_paths, 0), ctx_all.upto(i))[0]) if i > 0 \
            else float(surface.evaluate(0, p[None])[0])
        best, best_se = math.inf, 0.0
        for v in range(spec.n_controls):
            sim = simulate(spec, ControlPolicy.constant(v), t, p, noise, t_end=t_hat, workers=workers)
            vals = sim.running_cost + surface.evaluate(j, sim.values[:, : j + 1], ctx_all.upto(j))
            m, se = _mean_se(vals)
            if m < best:
                best, best_se = m, se
        res.append(abs(lhs - best))
        ses.append(best_se)
    k = int(np.argmax(res))
    return {"residual": float(res[k]), "std_error": float(ses[k]), "n_points": len(res), "mode": "lsmc"}


def tree_supermartingale(surface: ValueSurface, n_strategies: int = 20, seed: int = 0,
                         pairs: Sequence[tuple[int, int]] | None = None) -> dict:
    """Largest ``V(t) - E_t[int_t^s f + V(s)]`` over all nodes, level pairs and sampled strategies.

    The value function is a supermartingale along any strategy exactly when
    this is ``<= 0``. Strategies are random control assignments plus the
    optimal one.
    """
    tree = surface.tree
    N, K = tree.depth, tree.spec.n_controls
    rng = np.random.default_rng(seed)
    pairs = pairs or [(i, j) for i in range(N) for j in range(i + 1, N + 1)]
    strategies = [list(surface.argmin)] + [
        [rng.integers(0, K, size=len(tree.X[l])) for l in range(N)] for _ in range(n_strategies)]
    worst = -math.inf
    for strat in strategies:
        for i, j in pairs:
            Z = strategy_value(tree, strat, start=i, stop=j, terminal=surface.tables[j])
            worst = max(worst, float(np.max(surface.tables[i] - Z)))
    return {"max_violation": worst, "n_strategies": len(strategies), "n_pairs": len(pairs)}


def mc_supermartingale(spec: ModelSpec, surface: ValueSurface, policy: ControlPolicy, x0,
                       pairs: Sequence[tuple[float, float]], n_paths: int = 10_000, seed: int = 0,
                       workers: int | None = None) -> list[dict]:
    """Paired per-path test of ``V(t, X_t) <= E[int_t^s f + V(s, X_s)]`` along ``X`` from ``x0``.

    A pair passes when the mean of ``V(t) - [int f + V(s)]`` is at most 3
    standard errors.
    """
    grid = surface.grid
    noise = sample_noise(grid, spec.m, spec.m0, n_paths, seed, workers)
    x0 = np.asarray(x0, dtype=float).reshape(1, 1, spec.d)
    sim = simulate(spec, policy, 0.0, x0, noise, workers=workers)
    ctx = noise.context()
    dt = grid.dt
    out = []
    run = np.zeros((n_paths, grid.n_steps))
    for k in range(grid.n_steps):
        c = ctx.upto(k)
        v = spec.control_grid[sim.controls[:, k]]
        run[:, k] = evaluate_coefficients(spec, grid.time(k), sim.values[:, : k + 1], v, c)[2] * dt
    for t, s in pairs:
        i, j = grid.index(t), grid.index(s)
        vt = surface.evaluate(i, sim.values[:, : i + 1], ctx.upto(i))
        vs = surface.evaluate(j, sim.values[:, : j + 1], ctx.upto(j))
        diff = vt - (run[:, i:j].sum(axis=1) + vs)
        m, se = _mean_se(diff)
        out.append({"t": t, "s": s, "mean": m, "std_error": se, "pass": m <= 3 * se})
    return out


def value_lipschitz_ratio(surface: ValueSurface, i: int, n_pairs: int = 500, seed: int = 0,
                          scale: float = 0.5) -> float:
    """Max of ``|V(t_i, x) - V(t_i, y)| / |x - y|_0`` over random prefix pairs (lsmc mode)."""
    spec, grid = surface.spec, surface.grid
    rng = np.random.default_rng(seed)
    sd = math.sqrt(grid.dt)
    base = np.cumsum(np.concatenate([rng.normal(0, scale, (n_pairs, 1, spec.d)),
                                     rng.normal(0, sd, (n_pairs, i, spec.d))], axis=1), axis=1)
    eps = 10.0 ** rng.uniform(-3, -1, size=(n_pairs, 1, 1))
    other = base + eps * rng.standard_normal(base.shape)
    w = np.concatenate([np.zeros((n_pairs, 1, spec.m)),
                        np.cumsum(rng.normal(0, sd, (n_pairs, i, spec.m)), axis=1)], axis=1)
    ctx = RandomnessContext(w, spec.m0, grid.dt)
    dv = np.abs(surface.evaluate(i, base, ctx) - surface.evaluate(i, other, ctx))
    dist = np.max(np.linalg.norm(base - other, axis=-1), axis=1)
    return float(np.max(dv / dist))
