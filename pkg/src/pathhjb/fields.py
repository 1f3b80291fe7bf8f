"""Random fields ``u(omega, t, x_t)`` and their derivative suites.

A field is evaluated on batches: ``x`` is ``(n, i+1, d)`` holding path
prefixes on ``[0, t]`` that start at time 0 on a grid of step ``ctx.dt``,
and ``ctx.w`` holds the Brownian path on the same nodes. Derivatives follow
the same convention and return

* ``grad``: ``(n, d)`` (vertical gradient)
* ``hess``: ``(n, d, d)``
* ``d_t``: ``(n,)`` and ``d_w``: ``(n, m)`` (drift and Brownian integrand
  along horizontal extensions)
* ``d_w_grad``: ``(n, m, d)`` (bracket of the vertical gradient against the noise)
* ``grad_d_w``: ``(n, m, d)`` (vertical gradient of ``d_w``), when known.

Stochastic-integral fields are left-endpoint Ito sums on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import EvaluationError, InvalidInputError, UnsupportedFieldError
from .model import RandomnessContext, batch_prefix, default_context
from .path_space import DiscretePath, TimeGrid
from .simulate import sample_noise

DERIVATIVES = ("grad", "hess", "d_t", "d_w", "d_w_grad", "grad_d_w")


@dataclass(frozen=True, eq=False)
class RandomField:
    name: str
    m: int
    eval: Callable
    grad: Callable | None = None
    hess: Callable | None = None
    d_t: Callable | None = None
    d_w: Callable | None = None
    d_w_grad: Callable | None = None
    grad_d_w: Callable | None = None
    alpha: float = 0.5
    partition: tuple = ()
    params: dict = field(default_factory=dict)

    @property
    def suite(self) -> tuple[str, ...]:
        return tuple(k for k in DERIVATIVES if getattr(self, k) is not None)

    def values(self, t: float, x: np.ndarray, ctx: RandomnessContext) -> np.ndarray:
        out = np.asarray(self.eval(t, x, ctx), dtype=float).reshape(x.shape[0])
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"field {self.name!r} is not finite at t={t}", t=t)
        return out

    def derivative(self, name: str, t: float, x: np.ndarray, ctx: RandomnessContext) -> np.ndarray:
        fn = getattr(self, name, None) if name in DERIVATIVES else None
        if fn is None:
            raise UnsupportedFieldError(f"field {self.name!r} has no closed-form {name}")
        n, d = x.shape[0], x.shape[2]
        shape = {"grad": (n, d), "hess": (n, d, d), "d_t": (n,), "d_w": (n, self.m),
                 "d_w_grad": (n, self.m, d), "grad_d_w": (n, self.m, d)}[name]
        return np.broadcast_to(np.asarray(fn(t, x, ctx), dtype=float), shape)

    def __call__(self, t: float, x_t, ctx: RandomnessContext | None = None) -> float:
        x = batch_prefix(x_t)
        return float(self.values(t, x, _ctx_for(self, x, x_t, ctx))[0])

    def with_override(self, **suite) -> "RandomField":
        """Copy with some derivatives replaced, e.g. to inject a fault."""
        return replace(self, **suite)


def _ctx_for(field_or_m, x, x_t, ctx):
    dt = x_t.grid.dt if isinstance(x_t, DiscretePath) else None
    m = field_or_m.m if isinstance(field_or_m, RandomField) else field_or_m
    c = default_context(m, x, ctx, dt)
    if c.w.shape[1] != x.shape[1]:
        raise InvalidInputError(f"noise history has {c.w.shape[1]} nodes, path has {x.shape[1]}")
    return c


# ---------------------------------------------------------------- catalog

def _zero(shape_fn):
    return lambda t, x, c: np.zeros(shape_fn(x))


def constant_field(c: float = 1.0, m: int = 1) -> RandomField:
    z = _zero(lambda x: (x.shape[0],))
    return RandomField(
        "constant", m, lambda t, x, ctx: np.full(x.shape[0], float(c)),
        grad=_zero(lambda x: (x.shape[0], x.shape[2])), hess=_zero(lambda x: (x.shape[0], x.shape[2], x.shape[2])),
        d_t=z, d_w=_zero(lambda x: (x.shape[0], m)), d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        grad_d_w=_zero(lambda x: (x.shape[0], m, x.shape[2])), params={"c": c},
    )


def brownian_field(j: int = 0, m: int = 1) -> RandomField:
    """``u = W^j(t)``."""

    def d_w(t, x, ctx):
        out = np.zeros((x.shape[0], m))
        out[:, j] = 1.0
        return out

    return RandomField(
        "brownian", m, lambda t, x, ctx: ctx.w[:, -1, j],
        grad=_zero(lambda x: (x.shape[0], x.shape[2])), hess=_zero(lambda x: (x.shape[0], x.shape[2], x.shape[2])),
        d_t=_zero(lambda x: (x.shape[0],)), d_w=d_w, d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        grad_d_w=_zero(lambda x: (x.shape[0], m, x.shape[2])), params={"j": j},
    )


def affine_field(c, b: float = 0.0, m: int = 1) -> RandomField:
    """``u = c' x(t) + b``."""
    c = np.asarray(c, dtype=float).ravel()
    d = c.size
    return RandomField(
        "affine", m, lambda t, x, ctx: x[:, -1] @ c + b,
        grad=lambda t, x, ctx: np.broadcast_to(c, (x.shape[0], d)),
        hess=_zero(lambda x: (x.shape[0], d, d)), d_t=_zero(lambda x: (x.shape[0],)),
        d_w=_zero(lambda x: (x.shape[0], m)), d_w_grad=_zero(lambda x: (x.shape[0], m, d)),
        params={"c": c.tolist(), "b": b},
    )


def state_quadratic(a0: float = 1.0, a1: float = 0.0, m: int = 1) -> RandomField:
    """``u = (a0 + a1 t) |x(t)|^2``."""

    def a(t):
        return a0 + a1 * t

    def hess(t, x, ctx):
        d = x.shape[2]
        return np.broadcast_to(2 * a(t) * np.eye(d), (x.shape[0], d, d))

    return RandomField(
        "state_quadratic", m, lambda t, x, ctx: a(t) * np.sum(x[:, -1] ** 2, axis=1),
        grad=lambda t, x, ctx: 2 * a(t) * x[:, -1],
        hess=hess,
        d_t=lambda t, x, ctx: a1 * np.sum(x[:, -1] ** 2, axis=1),
        d_w=_zero(lambda x: (x.shape[0], m)),
        d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        alpha=1.0, params={"a0": a0, "a1": a1},
    )


def sin_integral(j: int = 0, coord: int = 0, m: int = 1) -> RandomField:
    """``u = int_0^t sin(x(s)) dW^j(s)`` as a left-endpoint sum.

    Its Brownian integrand is ``sin(x(t-))`` with the left limit read at the
    penultimate node, so a vertical bump of the endpoint does not move it:
    the vertical gradient vanishes and so does the bracket of the gradient,
    while differentiating the integrand itself gives ``cos(x(t-))``.
    """

    def left(x):
        return x[:, -2, coord] if x.shape[1] > 1 else x[:, -1, coord]

    def ev(t, x, ctx):
        dw = np.diff(ctx.w[:, :, j], axis=1)
        return np.sum(np.sin(x[:, :-1, coord]) * dw, axis=1)

    def d_w(t, x, ctx):
        out = np.zeros((x.shape[0], m))
        out[:, j] = np.sin(left(x))
        return out

    def grad_d_w(t, x, ctx):
        out = np.zeros((x.shape[0], m, x.shape[2]))
        out[:, j, coord] = np.cos(left(x))
        return out

    return RandomField(
        "sin_integral", m, ev,
        grad=_zero(lambda x: (x.shape[0], x.shape[2])), hess=_zero(lambda x: (x.shape[0], x.shape[2], x.shape[2])),
        d_t=_zero(lambda x: (x.shape[0],)), d_w=d_w, d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        grad_d_w=grad_d_w, params={"j": j, "coord": coord},
    )


def running_integral(amp: float = 1.0, coord: int = 0, m: int = 1) -> RandomField:
    """``u = int_0^t amp sin(x(s)) ds`` with left-endpoint quadrature (needs ``ctx.dt``)."""

    def ev(t, x, ctx):
        return amp * np.sum(np.sin(x[:, :-1, coord]), axis=1) * ctx.dt

    return RandomField(
        "running_integral", m, ev,
        grad=_zero(lambda x: (x.shape[0], x.shape[2])), hess=_zero(lambda x: (x.shape[0], x.shape[2], x.shape[2])),
        d_t=lambda t, x, ctx: amp * np.sin(x[:, -1, coord]),
        d_w=_zero(lambda x: (x.shape[0], m)), d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        params={"amp": amp, "coord": coord},
    )


def bound_field(L: float, T: float, upper: bool = True, m: int = 1) -> RandomField:
    """The classical bounds ``+-L e^{L (T - t)}`` as path-independent fields."""
    sgn = 1.0 if upper else -1.0

    def ev(t, x, ctx):
        return np.full(x.shape[0], sgn * L * math.exp(L * (T - t)))

    def d_t(t, x, ctx):
        return np.full(x.shape[0], -sgn * L * L * math.exp(L * (T - t)))

    return RandomField(
        "upper_bound" if upper else "lower_bound", m, ev,
        grad=_zero(lambda x: (x.shape[0], x.shape[2])), hess=_zero(lambda x: (x.shape[0], x.shape[2], x.shape[2])),
        d_t=d_t, d_w=_zero(lambda x: (x.shape[0], m)), d_w_grad=_zero(lambda x: (x.shape[0], m, x.shape[2])),
        grad_d_w=_zero(lambda x: (x.shape[0], m, x.shape[2])), alpha=1.0,
        params={"L": L, "T": T, "upper": upper},
    )


def snapshot_field(times=(0.25, 0.5), weights=(0.3, -0.2), q: float = 0.5, kappa: float = 0.4,
                   m: int = 1) -> RandomField:
    """Field built from finitely many path snapshots plus noise.

    ``u = q/2 |x(t)|^2 + sum_k c_k sum_i x_i(t_k ^ t) + kappa W^0(t) sum_i x_i(t)``.
    Snapshots at or after ``t`` read the endpoint, which is what makes them
    contribute to the vertical gradient.
    """
    times = np.asarray(times, dtype=float)
    weights = np.asarray(weights, dtype=float)

    def snap_idx(x, ctx):
        i = x.shape[1] - 1
        return np.minimum(np.rint(times / ctx.dt).astype(int), i)

    def ev(t, x, ctx):
        idx = snap_idx(x, ctx)
        snaps = x[:, idx].sum(axis=2) @ weights
        return 0.5 * q * np.sum(x[:, -1] ** 2, axis=1) + snaps + kappa * ctx.w[:, -1, 0] * x[:, -1].sum(axis=1)

    def grad(t, x, ctx):
        idx = snap_idx(x, ctx)
        live = weights[idx == x.shape[1] - 1].sum()
        return q * x[:, -1] + live + kappa * ctx.w[:, -1, :1]

    def hess(t, x, ctx):
        d = x.shape[2]
        return np.broadcast_to(q * np.eye(d), (x.shape[0], d, d))

    def d_w(t, x, ctx):
        out = np.zeros((x.shape[0], m))
        out[:, 0] = kappa * x[:, -1].sum(axis=1)
        return out

    def mixed(t, x, ctx):
        out = np.zeros((x.shape[0], m, x.shape[2]))
        out[:, 0, :] = kappa
        return out

    return RandomField(
        "snapshot", m, ev, grad=grad, hess=hess, d_t=_zero(lambda x: (x.shape[0],)), d_w=d_w,
        d_w_grad=mixed, grad_d_w=mixed, partition=tuple(times.tolist()),
        params={"times": times.tolist(), "weights": weights.tolist(), "q": q, "kappa": kappa},
    )


CATALOG = {
    "sin_integral": sin_integral,
    "state_quadratic": state_quadratic,
    "running_integral": running_integral,
    "upper_bound": lambda m=1, L=1.0, T=1.0: bound_field(L, T, True, m),
    "lower_bound": lambda m=1, L=1.0, T=1.0: bound_field(L, T, False, m),
    "snapshot": snapshot_field,
    "constant": constant_field,
    "brownian": brownian_field,
    "affine": affine_field,
}


def catalog(name: str, **params) -> RandomField:
    if name not in CATALOG:
        raise InvalidInputError(f"unknown field {name!r}; known: {sorted(CATALOG)}")
    return CATALOG[name](**params)


# ---------------------------------------------------------------- vertical differences

def default_bump(x: np.ndarray) -> np.ndarray:
    """``1e-4 (1 + |x|_0)`` per batch row."""
    return 1e-4 * (1.0 + np.max(np.linalg.norm(x, axis=-1), axis=1))


def _bumped(x, k, h):
    out = x.copy()
    out[:, -1, k] += h
    return out


def _grad_batch(fn, x, h):
    """Central differences of ``fn(x) -> (n, ...)`` over endpoint bumps; shape (n, ..., d)."""
    cols = []
    for k in range(x.shape[2]):
        up, dn = fn(_bumped(x, k, h)), fn(_bumped(x, k, -h))
        cols.append((up - dn) / (2 * h.reshape((-1,) + (1,) * (up.ndim - 1))))
    return np.stack(cols, axis=-1)


def fd_gradient_batch(field: RandomField, t: float, x: np.ndarray, ctx: RandomnessContext,
                      bump=None) -> np.ndarray:
    h = default_bump(x) if bump is None else np.broadcast_to(np.asarray(bump, dtype=float), (x.shape[0],))
    if np.any(h <= 0):
        raise InvalidInputError("bump must be positive")
    return _grad_batch(lambda y: field.values(t, y, ctx), x, h)


def fd_gradient(field: RandomField, t: float, x_t, bump: float | None = None,
                ctx: RandomnessContext | None = None) -> np.ndarray:
    """Vertical gradient by central differences over endpoint bumps ``+-bump e_i``."""
    x = batch_prefix(x_t)
    return fd_gradient_batch(field, t, x, _ctx_for(field, x, x_t, ctx), bump)[0]


def fd_hessian_batch(field: RandomField, t: float, x: np.ndarray, ctx: RandomnessContext,
                     bump=None, raw: bool = False) -> np.ndarray:
    h = default_bump(x) if bump is None else np.broadcast_to(np.asarray(bump, dtype=float), (x.shape[0],))
    if np.any(h <= 0):
        raise InvalidInputError("bump must be positive")
    n, d = x.shape[0], x.shape[2]
    out = np.empty((n, d, d))
    u0 = field.values(t, x, ctx)
    for a in range(d):
        for b in range(d):
            if a == b:
                up = field.values(t, _bumped(x, a, 2 * h), ctx)
                dn = field.values(t, _bumped(x, a, -2 * h), ctx)
                out[:, a, a] = (up - 2 * u0 + dn) / (4 * h * h)
            else:
                pp = field.values(t, _bumped(_bumped(x, a, h), b, h), ctx)
                pm = field.values(t, _bumped(_bumped(x, a, h), b, -h), ctx)
                mp = field.values(t, _bumped(_bumped(x, a, -h), b, h), ctx)
                mm = field.values(t, _bumped(_bumped(x, a, -h), b, -h), ctx)
                out[:, a, b] = ((pp - pm) - (mp - mm)) / (4 * h * h)
    return out if raw else 0.5 * (out + np.swapaxes(out, 1, 2))


def fd_hessian(field: RandomField, t: float, x_t, bump: float | None = None,
               ctx: RandomnessContext | None = None, raw: bool = False) -> np.ndarray:
    """Second central differences over endpoint bumps, symmetrized unless ``raw``."""
    x = batch_prefix(x_t)
    return fd_hessian_batch(field, t, x, _ctx_for(field, x, x_t, ctx), bump, raw)[0]


# ---------------------------------------------------------------- brackets and decomposition

def covariation(A, B) -> np.ndarray | float:
    """``sum_i dA_i dB_i`` along the last axis."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise InvalidInputError(f"series shapes differ: {A.shape} vs {B.shape}")
    if A.shape[-1] < 1:
        raise InvalidInputError("series must be non-empty")
    out = np.sum(np.diff(A, axis=-1) * np.diff(B, axis=-1), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Estimate:
    """Monte Carlo estimate with its standard error."""

    estimate: np.ndarray | float
    std_error: np.ndarray | float
    n_paths: int
    seed: int

    def as_dict(self) -> dict:
        return {"estimate": np.asarray(self.estimate).tolist(), "std_error": np.asarray(self.std_error).tolist(),
                "n_paths": self.n_paths, "seed": self.seed}


@dataclass
class Decomposition:
    d_t: Estimate
    d_w: Estimate


def _mean_se(samples: np.ndarray):
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _extension_series(field, t, x, ctx_hist, window, n_paths, seed):
    """Field values along ``x_{t, s-t}`` for ``s`` over ``window`` steps with fresh noise.

    ``x`` is a single prefix ``(i+1, d)`` or a batch of them (one per
    resampled path); returns ``(u (n, window+1), dW (n, window, m))``.
    """
    dt = ctx_hist.dt
    i = x.shape[-2] - 1
    g = TimeGrid.from_dt(dt, window)
    noise = sample_noise(g, field.m, ctx_hist.m0, n_paths, seed)
    w_hist = np.broadcast_to(ctx_hist.w, (n_paths,) + ctx_hist.w.shape[1:])
    w_new = w_hist[:, -1:, :] + noise.brownian()[:, 1:]
    w_all = np.concatenate([w_hist, w_new], axis=1)
    xb = np.broadcast_to(x, (n_paths,) + x.shape[-2:])
    ext = np.concatenate([xb, np.repeat(xb[:, -1:], window, axis=1)], axis=1)
    us = np.empty((n_paths, window + 1))
    for k in range(window + 1):
        c = RandomnessContext(w_all[:, : i + k + 1], ctx_hist.m0, dt, ctx_hist.seed)
        us[:, k] = field.values(t + k * dt, ext[:, : i + k + 1], c)
    return us, noise.increments


def _regression_coeffs(us, dW, dt):
    """Per-path fit ``u(s) - u(t) = a (s-t) + c (s-t)^2 / 2 + b' (W(s) - W(t))``; returns (a, b)."""
    n, window, m = dW.shape
    s = dt * np.arange(1, window + 1)
    design = np.concatenate([np.broadcast_to(s[:, None], (n, window, 1)),
                             np.broadcast_to(0.5 * s[:, None] ** 2, (n, window, 1)),
                             np.cumsum(dW, axis=1)], axis=2)
    target = us[:, 1:] - us[:, :1]
    coef = np.einsum("nkw,nw->nk", np.linalg.pinv(design), target)
    return coef[:, 0], coef[:, 2:]


def estimate_decomposition(field: RandomField, x_r, window: int = 4, n_paths: int = 64, seed: int = 0,
                           ctx: RandomnessContext | None = None, t: float | None = None,
                           method: str = "regression") -> Decomposition:
    """Estimate the drift and Brownian integrand of ``u`` along the horizontal extension of ``x_r``.

    ``method="regression"`` fits, path by path, a quadratic-in-time drift plus
    a linear response to the fresh Brownian increments over the window
    (needs at least ``m + 2`` steps; the window is widened when shorter) and
    averages the fitted coefficients over paths. ``method="covariation"``
    uses ``<u, W^j> / window length`` and the mean slope of ``u`` instead.
    """
    if window < 1:
        raise InvalidInputError("window must span at least one step")
    x = batch_prefix(x_r)[0]
    dt = x_r.grid.dt if isinstance(x_r, DiscretePath) else (ctx.dt if ctx is not None else None)
    if dt is None:
        raise InvalidInputError("need a DiscretePath or a context carrying dt")
    if t is None:
        t = (x.shape[0] - 1) * dt
    c = _ctx_for(field, x[None], x_r, ctx)
    if method == "regression":
        window = max(window, field.m + 2)
        us, dW = _extension_series(field, t, x, c, window, n_paths, seed)
        a, b = _regression_coeffs(us, dW, dt)
    elif method == "covariation":
        us, dW = _extension_series(field, t, x, c, window, n_paths, seed)
        span = window * dt
        w = np.concatenate([np.zeros((n_paths, 1, field.m)), np.cumsum(dW, axis=1)], axis=1)
        b = np.stack([covariation(us, w[:, :, j]) for j in range(field.m)], axis=1) / span
        a = (us[:, -1] - us[:, 0]) / span
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    am, ase = _mean_se(a)
    bm, bse = _mean_se(b)
    return Decomposition(Estimate(float(am), float(ase), n_paths, seed), Estimate(bm, bse, n_paths, seed))


def estimate_grad_dw(field: RandomField, x_r, window: int = 4, n_paths: int = 16, seed: int = 0,
                     ctx: RandomnessContext | None = None, bump: float | None = None) -> np.ndarray:
    """Vertical central difference of the estimated Brownian integrand, shape ``(m, d)``.

    Both sides of the difference reuse the same noise, so the estimate is as
    smooth in the bump as the field itself.
    """
    x = batch_prefix(x_r)[0]
    dt = x_r.grid.dt if isinstance(x_r, DiscretePath) else ctx.dt
    t = (x.shape[0] - 1) * dt
    h = float(default_bump(x[None])[0]) if bump is None else bump
    out = np.empty((field.m, x.shape[1]))
    for k in range(x.shape[1]):
        up, dn = x.copy(), x.copy()
        up[-1, k] += h
        dn[-1, k] -= h
        eu = estimate_decomposition(field, DiscretePath.from_values(up, dt), window, n_paths, seed, ctx, t)
        ed = estimate_decomposition(field, DiscretePath.from_values(dn, dt), window, n_paths, seed, ctx, t)
        out[:, k] = (eu.d_w.estimate - ed.d_w.estimate) / (2 * h)
    return out


def _grad_any(field, t, x, ctx, bump=None):
    if field.grad is not None:
        return field.derivative("grad", t, x, ctx)
    return fd_gradient_batch(field, t, x, ctx, bump)


def estimate_dw_grad(field: RandomField, paths: np.ndarray, ctx: RandomnessContext, l: int, i: int,
                     window: tuple[int, int] | None = None, g=None, seed: int = 0) -> Estimate:
    """Bracket of ``grad_i u`` along one-step extensions against ``M = int g dW^l``.

    ``paths`` is ``(n, N+1, d)`` with noise ``ctx.w`` of matching length.
    For each step ``k`` in ``window`` the increment
    ``grad_i u(t_{k+1}, X_{t_k} extended) - grad_i u(t_k, X_{t_k})`` is
    multiplied by ``g_k dW^l_k``; the per-path sums are averaged. The target is
    ``sum_k (d_w grad u)^{l i} g_k dt``. ``seed`` is recorded only.
    """
    paths = np.asarray(paths, dtype=float)
    n, N1, _ = paths.shape
    k0, k1 = (0, N1 - 1) if window is None else window
    if not 0 <= k0 < k1 <= N1 - 1:
        raise InvalidInputError(f"window {window} outside the path grid")
    dt = ctx.dt
    gk = np.ones(k1 - k0) if g is None else (
        np.array([g(k0 * dt + j * dt) for j in range(k1 - k0)], dtype=float) if callable(g)
        else np.asarray(g, dtype=float).reshape(k1 - k0))
    if field.grad is None and field.eval is None:
        raise UnsupportedFieldError(f"field {field.name!r} has no gradient")
    total = np.zeros(n)
    for j, k in enumerate(range(k0, k1)):
        x_k = paths[:, : k + 1]
        c_k = ctx.upto(k)
        ext = np.concatenate([x_k, x_k[:, -1:]], axis=1)
        c_next = ctx.upto(k + 1)
        g0 = _grad_any(field, k * dt, x_k, c_k)[:, i]
        g1 = _grad_any(field, (k + 1) * dt, ext, c_next)[:, i]
        dM = gk[j] * (ctx.w[:, k + 1, l] - ctx.w[:, k, l])
        total += (g1 - g0) * dM
    mean, se = _mean_se(total)
    return Estimate(float(mean), float(se), n, seed)


# ---------------------------------------------------------------- cross-check

@dataclass
class CrosscheckReport:
    field: str
    entries: dict
    seed: int
    n_points: int

    @property
    def passed(self) -> bool:
        return all(e["pass"] for e in self.entries.values())

    def as_dict(self) -> dict:
        return {"field": self.field, "seed": self.seed, "n_points": self.n_points, "pass": self.passed,
                "entries": self.entries}


DEFAULT_TOLERANCES = {"grad": 1e-6, "hess": 1e-5, "d_t": 1e-6, "d_w": 1e-6, "d_w_grad": 3.0}


def random_points(n_points: int, d: int, m: int, seed: int, dt: float = 2.0 ** -12,
                  max_steps: int = 4096, min_steps: int = 2, flat_tail: bool = True):
    """Random prefixes and noise histories as a list of ``(t, x (i+1, d), ctx)``.

    With ``flat_tail`` the last step of each prefix is a horizontal extension,
    so the left limit at ``t`` equals the endpoint.
    """
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n_points):
        i = int(rng.integers(min_steps, max_steps + 1))
        x = np.cumsum(np.concatenate([rng.normal(0, 1, (1, d)), rng.normal(0, math.sqrt(dt), (i, d))]), axis=0)
        if flat_tail:
            x[-1] = x[-2]
        w = np.concatenate([np.zeros((1, m)), np.cumsum(rng.normal(0, math.sqrt(dt), (i, m)), axis=0)])
        pts.append((i * dt, x, RandomnessContext(w[None], 0, dt)))
    return pts


def crosscheck_suite(field: RandomField, n_points: int = 20, tolerances: dict | None = None, seed: int = 0,
                     bump: float | None = 1e-4, n_paths: int = 16, dt: float = 2.0 ** -12,
                     d: int | None = None) -> CrosscheckReport:
    """Compare each closed-form derivative with its numerical estimator at random points.

    Errors are relative, ``|closed - numeric| / (1 + |closed|)``, except the
    bracket estimate, whose tolerance is in standard errors. Test prefixes end
    in a flat step so that left limits and endpoints coincide, which is where
    estimators built on horizontal extensions are comparable to closed forms
    that read the left limit.
    """
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    if not field.suite:
        raise UnsupportedFieldError(f"field {field.name!r} has no closed-form derivatives")
    if d is None:
        c = field.params.get("c")
        d = len(c) if isinstance(c, (list, tuple)) else 1
    pts = random_points(n_points, d, field.m, seed, dt)
    errs: dict[str, float] = {}

    def rec(name, closed, numeric):
        closed, numeric = np.asarray(closed, float), np.asarray(numeric, float)
        e = float(np.max(np.abs(closed - numeric) / (1.0 + np.abs(closed))))
        errs[name] = max(errs.get(name, 0.0), e)

    for t, x, ctx in pts:
        xb = x[None]
        if field.grad is not None:
            rec("grad", field.derivative("grad", t, xb, ctx), fd_gradient_batch(field, t, xb, ctx, bump))
        if field.hess is not None:
            rec("hess", field.derivative("hess", t, xb, ctx), fd_hessian_batch(field, t, xb, ctx, bump))
        if field.d_t is not None or field.d_w is not None:
            dec = estimate_decomposition(field, x, n_paths=n_paths, seed=seed, ctx=ctx, t=t)
            if field.d_t is not None:
                rec("d_t", field.derivative("d_t", t, xb, ctx)[0], dec.d_t.estimate)
            if field.d_w is not None:
                rec("d_w", field.derivative("d_w", t, xb, ctx)[0], dec.d_w.estimate)
    entries = {k: {"max_error": v, "tolerance": tol[k], "pass": v <= tol[k]} for k, v in errs.items()}

    if field.d_w_grad is not None:
        rng = np.random.default_rng(seed + 1)
        n, N = 200, 16
        x0 = rng.normal(0, 1, (n, 1, d))
        paths = x0 + np.concatenate([np.zeros((n, 1, d)), np.cumsum(rng.normal(0, math.sqrt(dt), (n, N, d)), 1)], 1)
        w = np.concatenate([np.zeros((n, 1, field.m)), np.cumsum(rng.normal(0, math.sqrt(dt), (n, N, field.m)), 1)], 1)
        ctx = RandomnessContext(w, 0, dt, seed)
        worst = 0.0
        for l in range(field.m):
            for i in range(d):
                est = estimate_dw_grad(field, paths, ctx, l, i, seed=seed)
                target = sum(float(np.mean(field.derivative("d_w_grad", k * dt, paths[:, : k + 1], ctx.upto(k))[:, l, i]))
                             for k in range(N)) * dt
                z = abs(est.estimate - target) / est.std_error if est.std_error > 0 else (
                    0.0 if abs(est.estimate - target) < 1e-12 else math.inf)
                worst = max(worst, z)
        entries["d_w_grad"] = {"max_error": worst, "tolerance": tol["d_w_grad"], "pass": worst <= tol["d_w_grad"]}
    return CrosscheckReport(field.name, entries, seed, n_points)
