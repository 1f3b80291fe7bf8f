"""Discretized path space.

Paths live on a uniform time grid and are read with right-continuous step
interpolation: the value on ``[t_i, t_{i+1})`` is ``values[i]`` and the value
at the last node is ``values[-1]``. A path on ``[0, t]`` is embedded in the
larger path spaces by freezing its terminal value, which is exactly what
:func:`horizontal_extend` does.

All objects here are immutable and every function is pure.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidInputError

_ALIGN_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform mesh ``t_start = t_0 < t_1 < ... < t_n = t_end``."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise InvalidInputError("grid endpoints must be finite")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidInputError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not self.t_start < self.t_end:
            raise InvalidInputError(f"need t_start < t_end, got {self.t_start} >= {self.t_end}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_dt(cls, dt: float, n_steps: int, t_start: float = 0.0) -> "TimeGrid":
        return cls(t_start, t_start + dt * n_steps, n_steps)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        out = self.t_start + self.dt * np.arange(self.n_steps + 1)
        out[-1] = self.t_end
        return out

    def time(self, i: int) -> float:
        return self.t_end if i == self.n_steps else self.t_start + self.dt * i

    def index(self, t: float) -> int:
        """Index of the grid node at time ``t``; raises if ``t`` is off-grid."""
        pos = (t - self.t_start) / self.dt
        i = int(round(pos))
        if abs(pos - i) > 1e-7 or i < 0 or i > self.n_steps:
            raise InvalidInputError(f"time {t} is not a node of {self}")
        return i

    def prefix(self, i: int) -> "TimeGrid":
        """Grid of the first ``i`` steps (same dt)."""
        if not 1 <= i <= self.n_steps:
            raise InvalidInputError(f"prefix length {i} outside 1..{self.n_steps}")
        return TimeGrid(self.t_start, self.time(i), i)

    def extended(self, k: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_start + self.dt * (self.n_steps + k), self.n_steps + k)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_end, self.n_steps * factor)

    def same_step(self, other: "TimeGrid") -> bool:
        return (
            math.isclose(self.dt, other.dt, rel_tol=_ALIGN_RTOL)
            and math.isclose(self.t_start, other.t_start, rel_tol=0, abs_tol=_ALIGN_RTOL * self.dt)
        )


class DiscretePath:
    """A sampled cadlag path: ``n_steps + 1`` points in R^d on a TimeGrid.

    A grid with a single node is not representable (``n_steps >= 1``);
    a lone starting point is handled by the batch routines as a length-one
    prefix array instead.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InvalidInputError("path values must be a non-empty (n_steps+1, d) array")
        if arr.shape[0] != grid.n_steps + 1:
            raise InvalidInputError(
                f"path has {arr.shape[0]} nodes but grid has {grid.n_steps + 1}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("path values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("DiscretePath is immutable")

    @classmethod
    def from_values(cls, values, dt: float, t_start: float = 0.0) -> "DiscretePath":
        arr = np.asarray(values, dtype=float)
        return cls(TimeGrid.from_dt(dt, len(arr) - 1, t_start), arr)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> float:
        return self.grid.t_end

    @property
    def endpoint(self) -> np.ndarray:
        return self.values[-1]

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DiscretePath):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.grid, self.values.tobytes()))

    def __repr__(self):
        return f"DiscretePath(t=[{self.grid.t_start:g}, {self.t:g}], n={self.grid.n_steps}, d={self.d})"

    def __call__(self, s: float) -> np.ndarray:
        """Step-interpolated value at time ``s``."""
        if s < self.grid.t_start or s > self.t + 1e-12:
            raise InvalidInputError(f"time {s} outside the path's domain")
        i = min(int(math.floor((s - self.grid.t_start) / self.grid.dt + 1e-9)), self.grid.n_steps)
        return self.values[i]

    def restrict(self, t: float) -> "DiscretePath":
        """The prefix ``x_t`` on ``[t_start, t]``."""
        i = self.grid.index(t)
        return DiscretePath(self.grid.prefix(i), self.values[: i + 1])

    def scaled(self, c: float) -> "DiscretePath":
        return DiscretePath(self.grid, c * self.values)


def refine(x: DiscretePath, factor: int) -> DiscretePath:
    """Re-express ``x`` on a grid ``factor`` times finer (exact under step interpolation)."""
    if factor < 1 or int(factor) != factor:
        raise InvalidInputError("refinement factor must be a positive integer")
    if factor == 1:
        return x
    vals = np.repeat(x.values[:-1], factor, axis=0)
    vals = np.vstack([vals, x.values[-1:]])
    return DiscretePath(x.grid.refined(factor), vals)


def _common_step(x: DiscretePath, y: DiscretePath):
    """Bring two paths onto a shared dt, refining the coarser one if it is a subgrid."""
    if x.grid.same_step(y.grid):
        return x, y
    if not math.isclose(x.grid.t_start, y.grid.t_start, abs_tol=1e-12):
        raise InvalidInputError("paths start at different times")
    ratio = x.grid.dt / y.grid.dt
    k = int(round(ratio)) if ratio >= 1 else int(round(1 / ratio))
    if k < 1 or not math.isclose(ratio if ratio >= 1 else 1 / ratio, k, rel_tol=1e-9):
        raise InvalidInputError(
            f"grids are misaligned: dt {x.grid.dt} vs {y.grid.dt} (neither is a subgrid)"
        )
    if ratio >= 1:
        return refine(x, k), y
    return x, refine(y, k)


def sup_norm(x: DiscretePath) -> float:
    """``max_s |x(s)|`` over the grid nodes."""
    if not isinstance(x, DiscretePath) or len(x) == 0:
        raise InvalidInputError("sup_norm needs a non-empty path")
    return float(np.max(np.linalg.norm(x.values, axis=1)))


def d0(x: DiscretePath, y: DiscretePath) -> float:
    """Distance between paths of possibly different lengths.

    For ``x`` on ``[0, r]`` and ``y`` on ``[0, t]`` with ``r <= t``::

        sqrt(t - r) + sup_s { |x(s) - y(s)| for s < r ;  |x(r) - y(s)| for s >= r }

    The arguments may be given in either order.
    """
    x, y = _common_step(x, y)
    if x.t > y.t:
        x, y = y, x
    nr = x.grid.n_steps
    if y.grid.n_steps < nr:
        raise InvalidInputError("inconsistent path lengths")
    gap = max(y.t - x.t, 0.0)
    head = np.linalg.norm(x.values[:nr] - y.values[:nr], axis=1)
    tail = np.linalg.norm(x.values[nr] - y.values[nr:], axis=1)
    sup = max(float(head.max()) if nr else 0.0, float(tail.max()))
    return math.sqrt(gap) + sup


def horizontal_extend(x: DiscretePath, delta: float) -> DiscretePath:
    """Continue ``x`` for ``delta`` units of time by freezing its terminal value."""
    if delta < 0:
        raise InvalidInputError("delta must be non-negative")
    k = delta / x.grid.dt
    kk = int(round(k))
    if abs(k - kk) > 1e-7:
        raise InvalidInputError(f"delta={delta} is not a multiple of dt={x.grid.dt}")
    if kk == 0:
        return x
    vals = np.vstack([x.values, np.repeat(x.values[-1:], kk, axis=0)])
    return DiscretePath(x.grid.extended(kk), vals)


def vertical_perturb(x: DiscretePath, h) -> DiscretePath:
    """Bump only the final node: ``x_t^h``."""
    h = np.broadcast_to(np.asarray(h, dtype=float), (x.d,))
    vals = x.values.copy()
    vals[-1] = vals[-1] + h
    return DiscretePath(x.grid, vals)


def holder_profile(values, dt: float, alpha: float, start: int = 0, max_lag: int | None = None):
    """Running alpha-Hoelder seminorm of one or many sampled paths.

    ``values`` has shape ``(..., n+1, d)``. The result ``prof`` has shape
    ``(..., n+1-start)`` and ``prof[..., j]`` is the seminorm over the node
    window ``[start, start+j]`` (zero for ``j = 0``). Exact O(n^2) pairwise
    scan unless ``max_lag`` truncates it.
    """
    v = np.asarray(values, dtype=float)[..., start:, :]
    n_nodes = v.shape[-2]
    best = np.zeros(v.shape[:-2] + (n_nodes,))
    top = n_nodes - 1 if max_lag is None else min(max_lag, n_nodes - 1)
    scalar = v.shape[-1] == 1
    for lag in range(1, top + 1):
        diff = v[..., lag:, :] - v[..., :-lag, :]
        mag = np.abs(diff[..., 0]) if scalar else np.sqrt(np.sum(diff * diff, axis=-1))
        mag /= (lag * dt) ** alpha
        np.maximum(best[..., lag:], mag, out=best[..., lag:])
    return np.maximum.accumulate(best, axis=-1)


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")


def holder_seminorm(x: DiscretePath, t0: float, t1: float, alpha: float,
                    max_lag: int | None = None) -> float:
    """``max_{t0 <= t < s <= t1} |x(s) - x(t)| / (s - t)^alpha`` over grid nodes."""
    _check_alpha(alpha)
    if not t0 < t1:
        raise InvalidInputError(f"need t0 < t1, got {t0} >= {t1}")
    i0, i1 = x.grid.index(t0), x.grid.index(t1)
    prof = holder_profile(x.values[i0: i1 + 1], x.grid.dt, alpha, max_lag=max_lag)
    return float(prof[-1])


@dataclass(frozen=True)
class HolderClassParams:
    """Parameters ``(k, alpha, anchor)`` of a Hoelder ball of continuations."""

    k: float
    alpha: float
    anchor: DiscretePath

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not self.k > 0:
            raise InvalidInputError("k must be positive")


def in_holder_ball(x: DiscretePath, params: HolderClassParams, t: float | None = None) -> bool:
    """Whether ``x`` continues the anchor from time ``t`` with seminorm at most ``k``."""
    xi = params.anchor
    if t is None:
        t = xi.t
    it = x.grid.index(t)
    if not x.grid.same_step(xi.grid) or xi.grid.n_steps < it:
        raise InvalidInputError("anchor grid does not cover [0, t] on the path's mesh")
    if not np.allclose(x.values[:it], xi.values[:it], rtol=0, atol=1e-12):
        raise InvalidInputError("path does not agree with the anchor before t")
    if not np.allclose(x.values[it], xi.values[it], rtol=0, atol=1e-12):
        return False
    if it == x.grid.n_steps:
        return True
    prof = holder_profile(x.values, x.grid.dt, params.alpha, start=it)
    return bool(prof[-1] <= params.k * (1 + 1e-12))


def holder_exit_indices(values, dt: float, start: int, alpha: float, k: float,
                        max_lag: int | None = None) -> np.ndarray:
    """Grid index of the first Hoelder exit after ``start`` (``n`` when none occurs)."""
    prof = holder_profile(values, dt, alpha, start=start, max_lag=max_lag)
    over = prof > k
    n = np.asarray(values).shape[-2] - 1
    hit = over.any(axis=-1)
    first = np.argmax(over, axis=-1) + start
    return np.where(hit, first, n)


def first_holder_exit(x: DiscretePath, r: float, alpha: float, k: float,
                      max_lag: int | None = None) -> float:
    """Smallest node ``s > r`` whose window seminorm on ``[r, s]`` exceeds ``k``, capped at ``t_end``."""
    _check_alpha(alpha)
    i = x.grid.index(r)
    j = int(holder_exit_indices(x.values, x.grid.dt, i, alpha, k, max_lag))
    return x.grid.time(j)


# ---------------------------------------------------------------- text format

def _header(d: int, with_id: bool) -> str:
    cols = (["path"] if with_id else []) + ["t"] + [f"x{i + 1}" for i in range(d)]
    return ",".join(cols)


def write_path(x: DiscretePath, fh=None, comment: str | None = None) -> str | None:
    """Write ``x`` as ``t,x1..xd`` rows; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    buf.write(_header(x.d, False) + "\n")
    table = np.column_stack([x.grid.nodes, x.values])
    for row in table:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue() if fh is None else None


def read_path(source) -> DiscretePath:
    """Parse the columnar text format written by :func:`write_path`."""
    text = source.read() if hasattr(source, "read") else str(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InvalidInputError("empty path file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "t" or any(h != f"x{i + 1}" for i, h in enumerate(header[1:])):
        raise InvalidInputError(f"unexpected header {lines[0]!r}")
    table = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] != len(header):
        raise InvalidInputError("malformed path table")
    t = table[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise InvalidInputError("time column is not a uniform increasing grid")
    grid = TimeGrid(float(t[0]), float(t[-1]), len(t) - 1)
    return DiscretePath(grid, table[:, 1:])


def write_paths(grid: TimeGrid, values, fh, comment: str | None = None) -> None:
    """Write a batch ``(n_paths, n+1, d)`` as ``path,t,x1..xd`` rows."""
    values = np.asarray(values, dtype=float)
    if comment:
        for line in comment.splitlines():
            fh.write(f"# {line}\n")
    fh.write(_header(values.shape[-1], True) + "\n")
    nodes = grid.nodes[: values.shape[1]]
    for p, path in enumerate(values):
        for t, row in zip(nodes, path):
            fh.write(f"{p}," + ",".join(repr(float(v)) for v in (t, *row)) + "\n")


def as_batch(paths: Iterable[DiscretePath] | DiscretePath) -> np.ndarray:
    """Stack equal-length paths into a ``(n_paths, n+1, d)`` array."""
    if isinstance(paths, DiscretePath):
        return paths.values[None]
    return np.stack([p.values for p in paths])
