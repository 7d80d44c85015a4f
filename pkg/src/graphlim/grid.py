"""Uniform partitions of the unit interval, step-function fields and L2 geometry.

Cells are half-open, ``I_k = [k/N, (k+1)/N)`` for ``k = 0..N-1``; a point ``x``
belongs to cell ``floor(N x)``.  A step function on ``N`` cells is stored as
its cell values; all L2 computations between step functions are exact (they
are carried out on the least common refinement of the two grids).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Union

import numpy as np

DEFAULT_ORDER = 4


@lru_cache(maxsize=32)
def gauss_unit(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights of order ``q`` on ``[0, 1]``."""
    if q < 1:
        raise ValueError(f"quadrature order must be >= 1, got {q}")
    x, w = np.polynomial.legendre.leggauss(q)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class UnitGrid:
    """``N`` equal cells partitioning ``[0, 1)``."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"grid size must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.N + 1) / self.N

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) / self.N

    def index(self, x) -> np.ndarray:
        """Cell index ``floor(N x)`` of each point; points must lie in [0, 1)."""
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x >= 1.0)):
            raise ValueError("points must lie in [0, 1)")
        return np.minimum(np.floor(self.N * x).astype(np.intp), self.N - 1)

    def quadrature_points(self, q: int = DEFAULT_ORDER) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell Gauss points, shape ``(N, q)``, and the shared weights (sum 1)."""
        nodes, weights = gauss_unit(q)
        pts = (np.arange(self.N)[:, None] + nodes[None, :]) / self.N
        return pts, weights


def _as_grid(grid: Union[UnitGrid, int]) -> UnitGrid:
    return grid if isinstance(grid, UnitGrid) else UnitGrid(grid)


class StepFunction1D:
    """Piecewise-constant field ``I -> R^d``; ``values`` has shape ``(N, d)``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Union[UnitGrid, int], values):
        grid = _as_grid(grid)
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != grid.N:
            raise ValueError(
                f"values must have shape (N, d) with N={grid.N}, got {np.shape(values)}"
            )
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def wrap(cls, grid: UnitGrid, values: np.ndarray) -> "StepFunction1D":
        """Wrap a correctly shaped ``(N, d)`` float array without copying or checks."""
        obj = object.__new__(cls)
        obj.grid = grid
        obj.values = values
        return obj

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __call__(self, x) -> np.ndarray:
        """Point evaluation; returns ``x.shape + (d,)``."""
        return self.values[self.grid.index(x)]

    def __repr__(self):
        return f"StepFunction1D(N={self.N}, d={self.d})"

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.values**2)) / self.N)

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def refine(self, factor: int) -> "StepFunction1D":
        return StepFunction1D(self.N * factor, np.repeat(self.values, factor, axis=0))


class StepFunction2D:
    """Piecewise-constant kernel on ``I x I``; ``values`` has shape ``(N, N)``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Union[UnitGrid, int], values):
        grid = _as_grid(grid)
        v = np.array(values, dtype=float)
        if v.shape != (grid.N, grid.N):
            raise ValueError(f"values must have shape ({grid.N}, {grid.N}), got {v.shape}")
        v.setflags(write=False)
        self.grid = grid
        self.values = v

    @classmethod
    def wrap(cls, grid: UnitGrid, values: np.ndarray) -> "StepFunction2D":
        """Wrap a correctly shaped ``(N, N)`` float array without copying or checks."""
        obj = object.__new__(cls)
        obj.grid = grid
        obj.values = values
        return obj

    @property
    def N(self) -> int:
        return self.grid.N

    def __call__(self, x, y) -> np.ndarray:
        return self.values[self.grid.index(x), self.grid.index(y)]

    def __repr__(self):
        return f"StepFunction2D(N={self.N})"

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.values**2))) / self.N

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def row(self, x: float) -> StepFunction1D:
        """The section ``y -> K(x, y)`` as a scalar step function."""
        return StepFunction1D(self.grid, self.values[int(self.grid.index(x))])

    def column_mean(self) -> StepFunction1D:
        """``y -> int K(x, y) dx``."""
        return StepFunction1D(self.grid, self.values.mean(axis=0))

    def refine(self, factor: int) -> "StepFunction2D":
        v = np.repeat(np.repeat(self.values, factor, axis=0), factor, axis=1)
        return StepFunction2D(self.N * factor, v)


class Graphon:
    """Bounded kernel ``W`` on ``I x I``: an analytic callable or a sampled step function.

    An analytic graphon is a vectorised callable ``w(x, y)`` together with a
    declared bound on its sup norm.  Evaluations exceeding the bound raise.
    """

    def __init__(self, func: Callable | None = None, bound: float | None = None,
                 sampled: StepFunction2D | None = None):
        if (func is None) == (sampled is None):
            raise ValueError("give exactly one of an analytic function or a sampled kernel")
        if sampled is not None:
            self.func = None
            self.sampled = sampled
            self.bound = sampled.sup_norm() if bound is None else float(bound)
        else:
            if bound is None or not math.isfinite(bound) or bound < 0:
                raise ValueError("an analytic graphon needs a finite declared sup-norm bound")
            self.func = func
            self.sampled = None
            self.bound = float(bound)

    def __call__(self, x, y) -> np.ndarray:
        if self.sampled is not None:
            return self.sampled(x, y)
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        w = np.asarray(self.func(x, y), dtype=float)
        w = np.broadcast_to(w, x.shape)
        if not np.all(np.isfinite(w)):
            raise ValueError("graphon produced non-finite values")
        if np.any(np.abs(w) > self.bound * (1 + 1e-12)):
            raise ValueError(f"graphon exceeds its declared bound {self.bound}")
        return w


def embed(phi, kappa) -> tuple[StepFunction1D, StepFunction2D]:
    """Step-function representatives ``(u^N, K^N)`` of particle states and weights."""
    phi = np.asarray(phi, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    n = phi.shape[0] if phi.ndim else 0
    if phi.ndim not in (1, 2) or kappa.shape != (n, n) or n == 0:
        raise ValueError(
            f"inconsistent dimensions: phi {phi.shape}, kappa {kappa.shape}"
        )
    grid = UnitGrid(n)
    return StepFunction1D(grid, phi), StepFunction2D(grid, kappa)


def restrict(fine, N: int):
    """L2-orthogonal projection of a step function onto the coarser grid ``N``."""
    M = fine.N
    if M % N:
        raise ValueError(f"coarse size {N} does not divide fine size {M}")
    r = M // N
    if isinstance(fine, StepFunction1D):
        v = fine.values.reshape(N, r, fine.d).mean(axis=1)
        return StepFunction1D(N, v)
    if isinstance(fine, StepFunction2D):
        v = fine.values.reshape(N, r, N, r).mean(axis=(1, 3))
        return StepFunction2D(N, v)
    raise TypeError(f"cannot restrict {type(fine).__name__}")


def cell_average_1d(func: Callable, grid: Union[UnitGrid, int],
                    q: int = DEFAULT_ORDER) -> StepFunction1D:
    """Cell means ``N * int_{I_k} func`` by Gauss-Legendre of order ``q``."""
    grid = _as_grid(grid)
    if isinstance(func, StepFunction1D) and func.N % grid.N == 0:
        return restrict(func, grid.N)
    pts, w = grid.quadrature_points(q)
    vals = np.asarray(func(pts), dtype=float)
    if vals.shape == pts.shape:
        vals = vals[..., None]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand values in cell average")
    return StepFunction1D(grid, np.einsum("kqd,q->kd", vals, w))


def cell_average_2d(w, grid: Union[UnitGrid, int], q: int = DEFAULT_ORDER) -> StepFunction2D:
    """Cell means ``N^2 * int_{I_k x I_l} w`` by tensor Gauss-Legendre of order ``q``."""
    grid = _as_grid(grid)
    if isinstance(w, Graphon) and w.sampled is not None:
        w = w.sampled
    if isinstance(w, StepFunction2D) and w.N % grid.N == 0:
        return restrict(w, grid.N)
    pts, wts = grid.quadrature_points(q)
    x = pts[:, :, None, None]
    y = pts[None, None, :, :]
    vals = np.broadcast_to(np.asarray(w(x, y), dtype=float), (grid.N, q, grid.N, q))
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand values in cell average")
    return StepFunction2D(grid, np.einsum("aibj,i,j->ab", vals, wts, wts))


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def _sample_1d(f, pts: np.ndarray) -> np.ndarray:
    if isinstance(f, StepFunction1D):
        return f(pts)
    v = np.asarray(f(pts), dtype=float)
    return v[..., None] if v.shape == pts.shape else v


def l2_distance_1d(a, b, q: int = DEFAULT_ORDER, default_n: int = 64) -> float:
    """L2(I) distance between step functions and/or vectorised callables.

    Two step functions are compared exactly on their common refinement; a
    callable is integrated per cell of the other argument's grid (or of a
    ``default_n`` grid when both are callables) with Gauss order ``q``.
    """
    if isinstance(a, StepFunction1D) and isinstance(b, StepFunction1D):
        if a.d != b.d:
            raise ValueError(f"incompatible state dimensions {a.d} and {b.d}")
        L = _lcm(a.N, b.N)
        diff = a.refine(L // a.N).values - b.refine(L // b.N).values
        return math.sqrt(float(np.sum(diff**2)) / L)
    if isinstance(b, StepFunction1D):
        a, b = b, a
    grid = a.grid if isinstance(a, StepFunction1D) else UnitGrid(default_n)
    pts, w = grid.quadrature_points(q)
    va, vb = _sample_1d(a, pts), _sample_1d(b, pts)
    if va.shape[-1] != vb.shape[-1]:
        raise ValueError(f"incompatible state dimensions {va.shape[-1]} and {vb.shape[-1]}")
    sq = np.einsum("kq,q->", np.sum((va - vb) ** 2, axis=-1), w) / grid.N
    return math.sqrt(float(sq))


def l2_distance_2d(a, b, q: int = DEFAULT_ORDER, default_n: int = 64) -> float:
    """L2(I^2) analogue of :func:`l2_distance_1d`."""
    if isinstance(a, Graphon) and a.sampled is not None:
        a = a.sampled
    if isinstance(b, Graphon) and b.sampled is not None:
        b = b.sampled
    if isinstance(a, StepFunction2D) and isinstance(b, StepFunction2D):
        L = _lcm(a.N, b.N)
        diff = a.refine(L // a.N).values - b.refine(L // b.N).values
        return math.sqrt(float(np.sum(diff**2))) / L
    if isinstance(b, StepFunction2D):
        a, b = b, a
    grid = a.grid if isinstance(a, StepFunction2D) else UnitGrid(default_n)
    pts, w = grid.quadrature_points(q)
    x = pts[:, :, None, None]
    y = pts[None, None, :, :]
    shape = (grid.N, q, grid.N, q)
    if isinstance(a, StepFunction2D):
        va = np.broadcast_to(a.values[:, None, :, None], shape)
    else:
        va = np.broadcast_to(np.asarray(a(x, y), float), shape)
    vb = np.broadcast_to(np.asarray(b(x, y), float), shape)
    sq = np.einsum("aibj,i,j->", (va - vb) ** 2, w, w) / grid.N**2
    return math.sqrt(float(sq))


# -- serialisation -----------------------------------------------------------

_MAGIC = b"GLSF"
_HEADER = struct.Struct("<4sIIQQ")  # magic, version, ndim, N, d


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_csv(field, path) -> None:
    """``k,value_0,...`` rows for 1D fields, ``k,l,value`` rows for 2D (0-based)."""
    path = Path(path)
    lines = []
    if isinstance(field, StepFunction1D):
        lines.append("k," + ",".join(f"value_{j}" for j in range(field.d)))
        for k, row in enumerate(field.values):
            lines.append(f"{k}," + ",".join(_fmt(v) for v in row))
    elif isinstance(field, StepFunction2D):
        lines.append("k,l,value")
        for k in range(field.N):
            for l in range(field.N):
                lines.append(f"{k},{l},{_fmt(field.values[k, l])}")
    else:
        raise TypeError(f"cannot serialise {type(field).__name__}")
    path.write_text("\n".join(lines) + "\n")


def from_csv(path):
    path = Path(path)
    rows = [ln.split(",") for ln in path.read_text().splitlines() if ln.strip()]
    header, body = rows[0], rows[1:]
    if header[:3] == ["k", "l", "value"]:
        n = int(round(math.sqrt(len(body))))
        v = np.zeros((n, n))
        for k, l, val in body:
            v[int(k), int(l)] = float(val)
        return StepFunction2D(n, v)
    v = np.array([[float(x) for x in r[1:]] for r in body])
    return StepFunction1D(len(body), v)


def to_binary(field, path) -> None:
    """Little-endian container: header {magic, version, ndim, N, d} then f64 row-major data."""
    if isinstance(field, StepFunction1D):
        header = _HEADER.pack(_MAGIC, 1, 1, field.N, field.d)
    elif isinstance(field, StepFunction2D):
        header = _HEADER.pack(_MAGIC, 1, 2, field.N, 1)
    else:
        raise TypeError(f"cannot serialise {type(field).__name__}")
    data = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(header + data)


def from_binary(path):
    raw = Path(path).read_bytes()
    magic, version, ndim, n, d = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a step-function container")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if ndim == 1:
        return StepFunction1D(n, data.reshape(n, d))
    if ndim == 2:
        return StepFunction2D(n, data.reshape(n, n))
    raise ValueError(f"unsupported ndim {ndim}")
