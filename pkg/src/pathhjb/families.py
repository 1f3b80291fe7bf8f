"""Built-in coefficient families and the name -> spec registry used by configs.

Every family keeps ``|g| <= L`` and a sup-norm Lipschitz constant ``<= L``
for all coefficients, except ``fault`` which deliberately breaks continuity
of the diffusion to exercise the Lipschitz audit.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidConfigError
from .model import ModelSpec


def _now(x):
    return x[:, -1, :]


def _wt(ctx):
    """Current value of the coefficient-visible noise block, shape (n, m0)."""
    return ctx.w_tilde[:, -1, :]


def _left_integral(values, dt):
    """Left-endpoint quadrature of a per-node series over the prefix, shape (n,)."""
    return values[:, :-1].sum(axis=1) * dt


def demo_spec(T: float = 1.0, L: float = 1.0) -> ModelSpec:
    """Two-dimensional bounded demo with a running-max terminal payoff.

    d = m = 2 with one coefficient-visible noise component, controls {-1, 1}.
    """

    def beta(t, x, v, ctx):
        s = _now(x)
        return np.stack([0.5 * v[:, 0] * np.cos(s[:, 0]),
                         0.4 * np.sin(s[:, 1] + _wt(ctx)[:, 0])], axis=1)

    def sigma(t, x, v, ctx):
        s = _now(x)
        n = x.shape[0]
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = 0.3 + 0.1 * np.sin(s[:, 1])
        out[:, 0, 1] = 0.2
        out[:, 1, 0] = 0.1 * np.cos(_wt(ctx)[:, 0])
        out[:, 1, 1] = 0.35 + 0.1 * np.tanh(x[:, :, 0].max(axis=1)) + 0.05 * v[:, 0]
        return out

    def f(t, x, v, ctx):
        s = _now(x)
        return 0.15 * v[:, 0] + 0.3 * np.sin(s[:, 0] - s[:, 1])

    def G(x, ctx):
        return (0.5 * np.tanh(x[:, :, 0].max(axis=1) - x[:, -1, 1])
                + 0.3 * np.cos(_wt(ctx)[:, 0]))

    return ModelSpec(d=2, m=2, m0=1, beta=beta, sigma=sigma, f=f, G=G,
                     control_grid=[-1.0, 1.0], L=L, T=T, name="demo",
                     params={"T": T, "L": L})


def fault_spec(T: float = 1.0, L: float = 1.0, jump: float = 0.5) -> ModelSpec:
    """The demo with a diffusion jump across ``x1 = 0``, violating the Lipschitz bound."""
    base = demo_spec(T, L)

    def sigma(t, x, v, ctx):
        out = base.sigma(t, x, v, ctx)
        out[:, 0, 0] += jump * (x[:, -1, 0] > 0)
        return out

    return ModelSpec(d=2, m=2, m0=1, beta=base.beta, sigma=sigma, f=base.f, G=base.G,
                     control_grid=[-1.0, 1.0], L=L, T=T, name="fault",
                     params={"T": T, "L": L, "jump": jump})


def integral_spec(T: float = 1.0, L: float = 1.0) -> ModelSpec:
    """Running-integral cost with a noise-dependent terminal multiplier.

    ``f = 0.2 v + int_0^t 0.5 sin(x) ds`` and
    ``G = cos(W1(T)) int_0^T 0.5 cos(x) ds``; constant diffusion (0.2, 0.6)
    so the block driven by the second noise component is uniformly elliptic
    with lambda = 0.36.
    """
    if 0.5 * T + 0.2 > L or 0.5 * T > L:
        raise InvalidConfigError(f"integral family needs L >= 0.5 T + 0.2, got L={L}, T={T}")

    def beta(t, x, v, ctx):
        return 0.5 * v[:, :1] * np.ones((x.shape[0], 1))

    def sigma(t, x, v, ctx):
        out = np.empty((x.shape[0], 1, 2))
        out[:, 0, 0] = 0.2
        out[:, 0, 1] = 0.6
        return out

    def f(t, x, v, ctx):
        return 0.2 * v[:, 0] + _left_integral(0.5 * np.sin(x[:, :, 0]), ctx.dt)

    def G(x, ctx):
        return np.cos(_wt(ctx)[:, 0]) * _left_integral(0.5 * np.cos(x[:, :, 0]), ctx.dt)

    return ModelSpec(d=1, m=2, m0=1, beta=beta, sigma=sigma, f=f, G=G,
                     control_grid=[-1.0, 1.0], L=L, T=T, lam=0.36, name="integral",
                     params={"T": T, "L": L})


def tree_spec(T: float = 1.0, L: float = 1.0, vol: float = 0.5) -> ModelSpec:
    """One-dimensional controlled drift with a path-dependent payoff.

    Small enough that the exact tree value is available at depth 8.
    """

    def beta(t, x, v, ctx):
        return 0.5 * v[:, :1] * np.ones((x.shape[0], 1))

    def sigma(t, x, v, ctx):
        return np.full((x.shape[0], 1, 1), vol)

    def f(t, x, v, ctx):
        return 0.1 * v[:, 0] + 0.2 * np.sin(x[:, -1, 0])

    def G(x, ctx):
        return 0.5 + 0.3 * np.tanh(x[:, -1, 0] - 0.5 * x[:, :, 0].max(axis=1))

    return ModelSpec(d=1, m=1, beta=beta, sigma=sigma, f=f, G=G,
                     control_grid=[-1.0, 1.0], L=L, T=T, name="tree",
                     params={"T": T, "L": L, "vol": vol})


def random_bounded_spec(rng: np.random.Generator, L: float | None = None, T: float = 1.0,
                        n_controls: int = 2, vol_floor: float = 0.0) -> ModelSpec:
    """A random d = m = 1 path-dependent spec whose bound and Lipschitz constant are <= L.

    Each coefficient is a weighted sum of bounded 1-Lipschitz building blocks
    (sin, cos, tanh of the current value or the running max) with weights
    summing to at most ``L``.
    """
    L = float(rng.uniform(1.0, 2.0)) if L is None else float(L)
    if not 0 <= vol_floor <= 0.5 * L:
        raise InvalidConfigError("vol_floor must lie in [0, L/2]")
    controls = np.sort(rng.uniform(-1, 1, size=n_controls))

    def weights(k):
        w = rng.uniform(-1, 1, size=k)
        return w * (L * rng.uniform(0.3, 1.0) / np.abs(w).sum())

    wb, wf, wg = weights(3), weights(3), weights(3)
    ws = np.abs(weights(2)) * 0.5
    phase = rng.uniform(-math.pi, math.pi, size=4)

    def beta(t, x, v, ctx):
        s = x[:, -1, 0]
        out = wb[0] * v[:, 0] / max(1.0, np.abs(controls).max()) + wb[1] * np.sin(s + phase[0]) \
            + wb[2] * np.tanh(x[:, :, 0].max(axis=1))
        return out[:, None]

    def sigma(t, x, v, ctx):
        s = x[:, -1, 0]
        out = vol_floor + ws[0] * np.cos(s + phase[1]) + ws[1] * np.abs(np.sin(s))
        return out[:, None, None]

    def f(t, x, v, ctx):
        s = x[:, -1, 0]
        return wf[0] * v[:, 0] / max(1.0, np.abs(controls).max()) \
            + wf[1] * np.sin(s + phase[2]) + wf[2] * np.cos(x[:, :, 0].max(axis=1))

    def G(x, ctx):
        return wg[0] * np.tanh(x[:, -1, 0]) + wg[1] * np.sin(x[:, :, 0].max(axis=1) + phase[3]) \
            + wg[2] * np.cos(x[:, :, 0].min(axis=1))

    params = {"L": L, "T": T, "controls": controls.tolist(), "wb": wb.tolist(), "wf": wf.tolist(),
              "wg": wg.tolist(), "ws": ws.tolist(), "phase": phase.tolist(), "vol_floor": vol_floor}
    return ModelSpec(d=1, m=1, beta=beta, sigma=sigma, f=f, G=G, control_grid=controls,
                     L=L, T=T, name="random", params=params)


FAMILIES = {
    "demo": demo_spec,
    "fault": fault_spec,
    "integral": integral_spec,
    "tree": tree_spec,
}


def build_spec(family: str, params: dict | None = None) -> ModelSpec:
    """Instantiate a named family with keyword parameters from a config block."""
    if family not in FAMILIES:
        raise InvalidConfigError(f"unknown model family {family!r}; known: {sorted(FAMILIES)}")
    try:
        return FAMILIES[family](**(params or {}))
    except TypeError as exc:
        raise InvalidConfigError(f"bad parameters for family {family!r}: {exc}") from None
