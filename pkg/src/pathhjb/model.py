"""Problem data of the controlled path-dependent SDE and pointwise HJB objects.

Coefficients are evaluated on *batches* of path prefixes so that simulation
and tree expansion stay vectorized:

* ``beta(t, x, v, ctx) -> (n, d)``
* ``sigma(t, x, v, ctx) -> (n, d, m)``
* ``f(t, x, v, ctx) -> (n,)``
* ``G(x, ctx) -> (n,)``

where ``x`` is an ``(n, i+1, d)`` array holding the prefixes up to the current
node, ``v`` is an ``(n, mbar)`` array of control values and ``ctx`` is a
:class:`RandomnessContext` carrying the sampled Brownian path. Coefficients
that are meant to be measurable with respect to the first noise block only
should read ``ctx.w_tilde``.

The control set is a finite grid; every infimum over controls is a minimum
over that grid with ties broken by lowest index.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple

import numpy as np

from .errors import EvaluationError, InvalidInputError, InvalidSpecError, UnsupportedFieldError
from .path_space import DiscretePath, TimeGrid


@dataclass(frozen=True, eq=False)
class RandomnessContext:
    """Sampled noise visible to coefficients and random fields.

    ``w`` has shape ``(n, i+1, m)``: the Brownian path at the grid nodes up
    to the current one. Coefficients read only the first ``m0`` columns
    (``w_tilde``); random fields may read all of them.
    """

    w: np.ndarray
    m0: int = 0
    dt: float = 1.0
    seed: int | None = None

    @classmethod
    def zeros(cls, n: int, length: int, m: int, m0: int = 0, dt: float = 1.0):
        return cls(np.zeros((n, length, m)), m0, dt)

    @property
    def w_tilde(self) -> np.ndarray:
        return self.w[..., : self.m0]

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def upto(self, i: int) -> "RandomnessContext":
        """Context truncated to the prefix ending at node ``i``."""
        return replace(self, w=self.w[:, : i + 1])

    def take(self, rows) -> "RandomnessContext":
        return replace(self, w=self.w[rows])

    def repeat(self, k: int) -> "RandomnessContext":
        """Each row repeated ``k`` times consecutively."""
        return replace(self, w=np.repeat(self.w, k, axis=0))


Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients, control grid and declared constants of a control problem."""

    d: int
    m: int
    beta: Coefficient
    sigma: Coefficient
    f: Coefficient
    G: Callable[..., np.ndarray]
    control_grid: Any
    L: float
    m0: int = 0
    T: float = 1.0
    lam: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.array(self.control_grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        if grid.ndim != 2 or grid.shape[0] == 0:
            raise InvalidSpecError("control_grid must be a non-empty list of control points")
        if not np.all(np.isfinite(grid)):
            raise InvalidSpecError("control_grid entries must be finite")
        grid.setflags(write=False)
        object.__setattr__(self, "control_grid", grid)
        if self.d < 1 or self.m < 1:
            raise InvalidSpecError("dimensions d and m must be positive")
        if not 0 <= self.m0 <= self.m:
            raise InvalidSpecError(f"m0={self.m0} must lie in [0, m={self.m}]")
        if not self.L > 0:
            raise InvalidSpecError("L must be positive")
        if not self.T > 0:
            raise InvalidSpecError("T must be positive")
        if self.lam is not None and self.lam < 0:
            raise InvalidSpecError("lambda must be non-negative")

    @property
    def n_controls(self) -> int:
        return self.control_grid.shape[0]

    @property
    def m1(self) -> int:
        return self.m - self.m0

    @property
    def value_bound(self) -> float:
        """A-priori bound ``L (T + 1)`` on value and cost functions."""
        return self.L * (self.T + 1.0)

    def digest(self) -> str:
        """Short stable identifier built from the spec's name, dimensions and parameters."""
        payload = {
            "name": self.name, "d": self.d, "m": self.m, "m0": self.m0, "T": self.T,
            "L": self.L, "lam": self.lam, "controls": self.control_grid.tolist(),
            "params": self.params,
        }
        blob = json.dumps(payload, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- batching

def batch_prefix(x_t) -> np.ndarray:
    """Coerce a DiscretePath, ``(i+1, d)`` array or batch into ``(n, i+1, d)``."""
    if isinstance(x_t, DiscretePath):
        return x_t.values[None]
    arr = np.asarray(x_t, dtype=float)
    if arr.ndim == 1:
        return arr[None, :, None]
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3:
        return arr
    raise InvalidInputError(f"cannot interpret array of shape {arr.shape} as path prefixes")


def default_context(spec_or_m, x: np.ndarray, ctx=None, dt=None) -> RandomnessContext:
    """Context matching the batch ``x``; zero noise when none is supplied."""
    if ctx is not None:
        if ctx.w.ndim == 2:
            ctx = replace(ctx, w=ctx.w[None])
        if ctx.w.shape[0] == 1 and x.shape[0] > 1:
            ctx = replace(ctx, w=np.broadcast_to(ctx.w, (x.shape[0],) + ctx.w.shape[1:]))
        return ctx
    if isinstance(spec_or_m, ModelSpec):
        m, m0 = spec_or_m.m, spec_or_m.m0
    else:
        m, m0 = int(spec_or_m), 0
    return RandomnessContext.zeros(x.shape[0], x.shape[1], m, m0, 1.0 if dt is None else dt)


def _path_dt(x_t, fallback=1.0):
    return x_t.grid.dt if isinstance(x_t, DiscretePath) else fallback


def evaluate_coefficients(spec: ModelSpec, t: float, x: np.ndarray, v: np.ndarray,
                          ctx: RandomnessContext, with_f: bool = True):
    """``(beta, sigma, f)`` on a batch, validated for shape and finiteness."""
    n = x.shape[0]
    b = np.asarray(spec.beta(t, x, v, ctx), dtype=float).reshape(n, spec.d)
    s = np.asarray(spec.sigma(t, x, v, ctx), dtype=float).reshape(n, spec.d, spec.m)
    f = np.asarray(spec.f(t, x, v, ctx), dtype=float).reshape(n) if with_f else None
    bad = ~np.isfinite(b).all(axis=1) | ~np.isfinite(s).reshape(n, -1).all(axis=1)
    if with_f:
        bad |= ~np.isfinite(f)
    if bad.any():
        j = int(np.argmax(bad))
        raise EvaluationError(
            f"non-finite coefficient at t={t}, control={v[j].tolist()}", t=t, control=v[j].tolist()
        )
    return b, s, f


def evaluate_terminal(spec: ModelSpec, x: np.ndarray, ctx: RandomnessContext) -> np.ndarray:
    g = np.asarray(spec.G(x, ctx), dtype=float).reshape(x.shape[0])
    if not np.all(np.isfinite(g)):
        raise EvaluationError("non-finite terminal cost", t=spec.T)
    return g


# ---------------------------------------------------------------- Hamiltonian

class HamiltonianValue(NamedTuple):
    value: float
    control: np.ndarray
    index: int


def _hamiltonian_terms(b, s, f, p, A, B):
    sst = np.einsum("nik,njk->nij", s, s)
    tr_a = 0.5 * np.einsum("nij,nji->n", sst, A)
    tr_b = np.einsum("nik,nki->n", s, B)
    return tr_a + tr_b + np.einsum("ni,ni->n", b, p) + f


def hamiltonian_batch(spec: ModelSpec, t: float, x: np.ndarray, p, A, B,
                      ctx: RandomnessContext | None = None):
    """Minimum over the control grid for each row of a batch.

    ``p`` is ``(n, d)``, ``A`` is ``(n, d, d)``, ``B`` is ``(n, m, d)``.
    Returns ``(values, argmin_indices)``.
    """
    x = batch_prefix(x)
    n = x.shape[0]
    ctx = default_context(spec, x, ctx)
    p = np.broadcast_to(np.asarray(p, dtype=float), (n, spec.d))
    A = np.broadcast_to(np.asarray(A, dtype=float), (n, spec.d, spec.d))
    B = np.broadcast_to(np.asarray(B, dtype=float), (n, spec.m, spec.d))
    table = np.empty((n, spec.n_controls))
    for j, v in enumerate(spec.control_grid):
        vb = np.broadcast_to(v, (n, v.size))
        b, s, f = evaluate_coefficients(spec, t, x, vb, ctx)
        table[:, j] = _hamiltonian_terms(b, s, f, p, A, B)
    idx = np.argmin(table, axis=1)
    return table[np.arange(n), idx], idx


def hamiltonian(spec: ModelSpec, t: float, x_t, p, A=None, B=None,
                ctx: RandomnessContext | None = None) -> HamiltonianValue:
    """``min_v tr(1/2 sigma sigma' A + sigma B) + beta' p + f`` at one path prefix."""
    A = np.zeros((spec.d, spec.d)) if A is None else np.asarray(A, dtype=float)
    B = np.zeros((spec.m, spec.d)) if B is None else np.asarray(B, dtype=float)
    if A.shape != (spec.d, spec.d) or B.shape != (spec.m, spec.d):
        raise InvalidInputError("A must be (d, d) and B must be (m, d)")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
        raise InvalidInputError("A must be symmetric")
    x = batch_prefix(x_t)
    ctx = default_context(spec, x, ctx, _path_dt(x_t))
    val, idx = hamiltonian_batch(spec, t, x, np.asarray(p, float)[None], A[None], B[None], ctx)
    i = int(idx[0])
    return HamiltonianValue(float(val[0]), spec.control_grid[i].copy(), i)


def generator_batch(spec: ModelSpec, field, t: float, x: np.ndarray, v: np.ndarray,
                    ctx: RandomnessContext) -> np.ndarray:
    """Generator applied to a random field, one value per batch row."""
    d_t = field.derivative("d_t", t, x, ctx)
    grad = field.derivative("grad", t, x, ctx)
    hess = field.derivative("hess", t, x, ctx)
    dwg = field.derivative("d_w_grad", t, x, ctx)
    b, s, _ = evaluate_coefficients(spec, t, x, v, ctx, with_f=False)
    return d_t + _hamiltonian_terms(b, s, np.zeros(x.shape[0]), grad, hess, dwg)


def generator(spec: ModelSpec, field, t: float, x_t, v, ctx: RandomnessContext | None = None) -> float:
    """``d_t phi + beta' grad phi + tr(1/2 sigma sigma' hess phi + sigma d_w grad phi)``."""
    x = batch_prefix(x_t)
    ctx = default_context(spec, x, ctx, _path_dt(x_t))
    v = np.asarray(v, dtype=float).reshape(1, -1)
    return float(generator_batch(spec, field, t, x, v, ctx)[0])


def require_derivatives(field, names):
    missing = [n for n in names if getattr(field, n, None) is None]
    if missing:
        raise UnsupportedFieldError(f"field {field.name!r} lacks {', '.join(missing)}")


# ---------------------------------------------------------------- classical bounds

def classical_bounds(L: float, T: float, t: float) -> tuple[float, float]:
    """Explicit classical super- and subsolution values at time ``t``.

    Returns ``(L e^{L(T-t)}, -L e^{L(T-t)})``. Both satisfy their one-sided
    HJB inequality whenever ``L >= 1`` bounds the running cost; a smaller
    declared bound can always be enlarged to 1.
    """
    if not 0 <= t <= T * (1 + 1e-12):
        raise InvalidInputError(f"t={t} outside [0, T={T}]")
    up = L * math.exp(L * (T - t))
    return up, -up


# ---------------------------------------------------------------- audits

def check_superparabolic(spec: ModelSpec, samples, ctx: RandomnessContext | None = None):
    """Smallest eigenvalue of ``sigma_bar sigma_bar'`` over sampled ``(t, x_t, v)``.

    ``sigma_bar`` is the block of columns driven by the last ``m - m0`` noise
    components. Returns ``(ok, worst_eigenvalue)``.
    """
    if spec.lam is None:
        raise InvalidSpecError("superparabolicity needs a declared lambda")
    if spec.m1 == 0:
        raise InvalidSpecError("superparabolicity needs m - m0 >= 1")
    worst = math.inf
    for t, x_t, v in samples:
        x = batch_prefix(x_t)
        c = default_context(spec, x, ctx.upto(x.shape[1] - 1) if ctx is not None else None,
                            _path_dt(x_t))
        vb = np.asarray(v, dtype=float).reshape(1, -1)
        _, s, _ = evaluate_coefficients(spec, t, x, vb, c, with_f=False)
        sb = s[0][:, spec.m0:]
        worst = min(worst, float(np.linalg.eigvalsh(sb @ sb.T)[0]))
    return worst >= spec.lam - 1e-12, worst


@dataclass
class LipschitzReport:
    """Empirical sup and Lipschitz ratios per coefficient component."""

    ratios: dict
    bounds: dict
    L: float
    n_samples: int
    seed: int
    note: str = ("sampling can falsify the declared bound but never certify it; "
                 "a pass means no violation was observed")

    @property
    def max_ratio(self) -> float:
        return max(self.ratios.values()) if self.ratios else 0.0

    @property
    def max_bound(self) -> float:
        return max(self.bounds.values()) if self.bounds else 0.0

    @property
    def passed(self) -> bool:
        tol = 1e-9 * self.L
        return self.max_ratio <= self.L + tol and self.max_bound <= self.L + tol

    @property
    def violations(self) -> list[str]:
        tol = 1e-9 * self.L
        bad = [f"lipschitz:{k}" for k, r in self.ratios.items() if r > self.L + tol]
        bad += [f"bound:{k}" for k, b in self.bounds.items() if b > self.L + tol]
        return bad


def check_lipschitz(spec: ModelSpec, n_samples: int = 500, seed: int = 0,
                    grid: TimeGrid | None = None, path_scale: float = 1.0) -> LipschitzReport:
    """Spot-check the declared bound and Lipschitz constant on random path pairs.

    Pairs differ either at the endpoint only, by a small global shift, or by an
    independent random perturbation, which together exercise both the current
    value and the history dependence of each coefficient.
    """
    grid = grid or TimeGrid(0.0, spec.T, 16)
    rng = np.random.default_rng(seed)
    n, N, d, m = n_samples, grid.n_steps, spec.d, spec.m
    base = np.cumsum(rng.standard_normal((n, N + 1, d)) * math.sqrt(grid.dt) * path_scale, axis=1)
    base -= base[:, :1]
    base += rng.uniform(-0.5, 0.5, size=(n, 1, d)) * path_scale
    idx = rng.integers(0, N + 1, size=n)
    mode = rng.integers(0, 3, size=n)
    eps = 10.0 ** rng.uniform(-4, -0.5, size=n)
    pert = np.zeros_like(base)
    ends = np.flatnonzero(mode == 0)
    pert[ends, idx[ends]] = rng.standard_normal((ends.size, d))
    pert[mode == 1] = rng.standard_normal((int((mode == 1).sum()), 1, d))
    pert[mode == 2] = rng.standard_normal((int((mode == 2).sum()), N + 1, d))
    other = base + eps[:, None, None] * pert
    w = np.cumsum(rng.standard_normal((n, N + 1, m)) * math.sqrt(grid.dt), axis=1)
    w -= w[:, :1]
    ctx = RandomnessContext(w, spec.m0, grid.dt, seed)

    ratios: dict[str, float] = {}
    bounds: dict[str, float] = {}

    def record(name, gx, gy, dist):
        r = np.abs(gx - gy) / np.where(dist > 0, dist, 1.0)
        ratios[name] = max(ratios.get(name, 0.0), float(np.max(r)))
        bounds[name] = max(bounds.get(name, 0.0), float(np.max(np.abs(gx))), float(np.max(np.abs(gy))))

    # coefficients at a random prefix length, grouped so each call is a batch
    for i in np.unique(idx):
        rows = np.flatnonzero(idx == i)
        xa, xb = base[rows, : i + 1], other[rows, : i + 1]
        dist = np.max(np.linalg.norm(xa - xb, axis=-1), axis=-1)
        c = ctx.take(rows).upto(i)
        t = grid.time(i)
        for v in spec.control_grid:
            vb = np.broadcast_to(v, (rows.size, v.size))
            ba, sa, fa = evaluate_coefficients(spec, t, xa, vb, c)
            bb, sb, fb = evaluate_coefficients(spec, t, xb, vb, c)
            record("f", fa, fb, dist)
            for k in range(d):
                record(f"beta[{k}]", ba[:, k], bb[:, k], dist)
                for j in range(m):
                    record(f"sigma[{k},{j}]", sa[:, k, j], sb[:, k, j], dist)
    dist = np.max(np.linalg.norm(base - other, axis=-1), axis=-1)
    record("G", evaluate_terminal(spec, base, ctx), evaluate_terminal(spec, other, ctx), dist)
    return LipschitzReport(ratios, bounds, spec.L, n_samples, seed)
