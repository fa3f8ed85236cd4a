"""Uniform 2D grids, grid-sampled fields and finite-difference kernels.

Arrays are indexed ``[i, j]`` with ``x = x0 + i*h`` and ``y = y0 + j*h``.
Operations that are only defined at interior nodes (Hessian, divergence)
return arrays of shape ``(nx - 2, ny - 2, ...)``; use :func:`interior` to
slice a full-grid array down to the same shape.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise GridError(f"grid needs at least 3x3 points, got {self.nx}x{self.ny}")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise GridError(f"spacing must be positive, got {self.h}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def from_box(cls, x0: float, x1: float, y0: float, y1: float, n: int) -> "Grid2D":
        """Grid with ``n`` points along x covering ``[x0, x1]``.

        The y extent must be an integer multiple of the spacing.
        """
        h = (x1 - x0) / (n - 1)
        ny = (y1 - y0) / h + 1
        if abs(ny - round(ny)) > 1e-9:
            raise GridError("box aspect ratio is incompatible with isotropic spacing")
        return cls(n, int(round(ny)), h, (x0, y0))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def points(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.stack([X, Y], axis=-1)

    @property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def is_boundary(self, i: int, j: int) -> bool:
        return i == 0 or j == 0 or i == self.nx - 1 or j == self.ny - 1

    def nearest_index(self, point) -> tuple[int, int]:
        i = int(round((point[0] - self.origin[0]) / self.h))
        j = int(round((point[1] - self.origin[1]) / self.h))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise GridError(f"point {tuple(point)} lies outside the grid")
        return i, j

    def contains(self, point, tol: float = 1e-12) -> bool:
        x, y = point
        return (
            self.origin[0] - tol <= x <= self.x[-1] + tol
            and self.origin[1] - tol <= y <= self.y[-1] + tol
        )

    @property
    def diameter(self) -> float:
        return self.h * float(np.hypot(self.nx - 1, self.ny - 1))


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise GridError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridError(f"expected shape {self.grid.shape}, got {v.shape}")
        _check_finite(v, "scalar field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid2D, f) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(f(X, Y), grid.shape))


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape + (2,):
            raise GridError(f"expected shape {self.grid.shape + (2,)}, got {v.shape}")
        _check_finite(v, "vector field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def norm(self) -> np.ndarray:
        return np.hypot(self.values[..., 0], self.values[..., 1])


@dataclass(frozen=True, eq=False)
class SymMatrixField:
    """Per-point symmetric 2x2 matrices stored as (a11, a12, a22)."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape + (3,):
            raise GridError(f"expected shape {self.grid.shape + (3,)}, got {v.shape}")
        _check_finite(v, "matrix field")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid2D, a11: float, a12: float, a22: float) -> "SymMatrixField":
        return cls(grid, np.broadcast_to(np.array([a11, a12, a22], float), grid.shape + (3,)))

    def full(self) -> np.ndarray:
        """Dense ``(nx, ny, 2, 2)`` view of the matrices."""
        return sym_to_full(self.values)


def sym_to_full(v: np.ndarray) -> np.ndarray:
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 1]
    out[..., 1, 1] = v[..., 2]
    return out


def interior(a: np.ndarray) -> np.ndarray:
    return a[1:-1, 1:-1]


def _diff_axis(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    # (-3f0 + 4f1 - f2) in difference form, exact zero on constants
    d[0] = (3 * (f[1] - f[0]) - (f[2] - f[1])) / (2 * h)
    d[-1] = (3 * (f[-1] - f[-2]) - (f[-2] - f[-3])) / (2 * h)
    return np.moveaxis(d, 0, axis)


def gradient_array(f: np.ndarray, h: float) -> np.ndarray:
    """Second-order gradient of a raw ``(nx, ny, ...)`` array; returns ``(nx, ny, 2, ...)``."""
    f = np.asarray(f, dtype=float)
    return np.stack([_diff_axis(f, h, 0), _diff_axis(f, h, 1)], axis=2)


def gradient(f: ScalarField) -> VectorField:
    """Centered differences inside, second-order one-sided stencils on the boundary."""
    return VectorField(f.grid, gradient_array(f.values, f.grid.h))


def hessian_array(f: np.ndarray, h: float) -> np.ndarray:
    """Interior second derivatives ``(nx-2, ny-2, 3, ...)`` as (f_xx, f_xy, f_yy)."""
    f = np.asarray(f, dtype=float)
    c = f[1:-1, 1:-1]
    fxx = (f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]) / h**2
    fyy = (f[1:-1, 2:] - 2 * c + f[1:-1, :-2]) / h**2
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4 * h**2)
    return np.stack([fxx, fxy, fyy], axis=2)


def hessian(f: ScalarField) -> np.ndarray:
    """Interior Hessians as an ``(nx-2, ny-2, 2, 2)`` array (symmetric by construction)."""
    _check_finite(f.values, "scalar field")
    return sym_to_full(np.moveaxis(hessian_array(f.values, f.grid.h), 2, -1))


def hessian_at(f: ScalarField, i: int, j: int) -> np.ndarray:
    if f.grid.is_boundary(i, j):
        raise GridError(f"Hessian is undefined at boundary node ({i}, {j})")
    return hessian(f)[i - 1, j - 1]


def divergence(F: VectorField) -> np.ndarray:
    """Centered divergence at interior nodes, shape ``(nx-2, ny-2)``."""
    v, h = F.values, F.grid.h
    return (v[2:, 1:-1, 0] - v[:-2, 1:-1, 0]) / (2 * h) + (v[1:-1, 2:, 1] - v[1:-1, :-2, 1]) / (2 * h)


def laplacian_5pt(f: ScalarField) -> np.ndarray:
    v, h = f.values, f.grid.h
    return (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4 * v[1:-1, 1:-1]) / h**2


def ball_mask(grid: Grid2D, center, radius: float, distance: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of nodes strictly closer than ``radius`` to ``center``.

    With ``distance`` (a per-node distance field from ``center``) the ball is
    intrinsic; otherwise Euclidean distance is used.
    """
    if not radius > 0:
        raise GridError("radius must be positive")
    if distance is None:
        P = grid.points
        d = np.hypot(P[..., 0] - center[0], P[..., 1] - center[1])
    else:
        d = np.asarray(distance)
        if d.shape != grid.shape:
            raise GridError("distance field does not match grid")
    mask = d < radius
    if not mask.any():
        raise GridError(f"ball of radius {radius} around {tuple(center)} contains no grid points")
    return mask


def interpolate(grid: Grid2D, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of node values at ``points`` (shape ``(..., 2)``).

    Fractional indices within 1e-9 of an integer are snapped, so sampling at
    grid nodes returns node values exactly. Points outside the grid raise.
    """
    values = np.asarray(values, dtype=float)
    pts = np.asarray(points, dtype=float)
    t = (pts[..., 0] - grid.origin[0]) / grid.h
    s = (pts[..., 1] - grid.origin[1]) / grid.h
    t = np.where(np.abs(t - np.round(t)) < 1e-9, np.round(t), t)
    s = np.where(np.abs(s - np.round(s)) < 1e-9, np.round(s), s)
    if np.any((t < 0) | (t > grid.nx - 1) | (s < 0) | (s > grid.ny - 1)):
        raise GridError("interpolation point outside the grid")
    i = np.minimum(np.floor(t).astype(int), grid.nx - 2)
    j = np.minimum(np.floor(s).astype(int), grid.ny - 2)
    a, b = t - i, s - j
    shp = a.shape + (1,) * (values.ndim - 2)
    a, b = a.reshape(shp), b.reshape(shp)
    return (
        (1 - a) * (1 - b) * values[i, j]
        + a * (1 - b) * values[i + 1, j]
        + (1 - a) * b * values[i, j + 1]
        + a * b * values[i + 1, j + 1]
    )


# -- CSV serialization -------------------------------------------------------

_FMT = "{:.17g}"


def field_to_csv(f: ScalarField | VectorField, path=None) -> str:
    """Row-major (``i`` outer, ``j`` inner) CSV with 17 significant digits."""
    buf = io.StringIO()
    X, Y = f.grid.mesh()
    if isinstance(f, ScalarField):
        buf.write("x,y,value\n")
        cols = [f.values]
    else:
        buf.write("x,y,v1,v2\n")
        cols = [f.values[..., 0], f.values[..., 1]]
    for i in range(f.grid.nx):
        for j in range(f.grid.ny):
            row = [X[i, j], Y[i, j]] + [c[i, j] for c in cols]
            buf.write(",".join(_FMT.format(v) for v in row) + "\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def field_from_csv(text_or_path) -> ScalarField | VectorField:
    text = text_or_path
    if isinstance(text_or_path, Path) or (isinstance(text_or_path, str) and "\n" not in text_or_path):
        text = Path(text_or_path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    if header[:2] != ["x", "y"] or header[2:] not in (["value"], ["v1", "v2"]):
        raise GridError(f"unrecognized field header {header}")
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    nx, ny = len(xs), len(ys)
    if nx * ny != len(data):
        raise GridError("CSV rows do not form a full grid")
    h = (xs[-1] - xs[0]) / (nx - 1)
    grid = Grid2D(nx, ny, h, (data[0, 0], data[0, 1]))
    vals = data[:, 2:].reshape(nx, ny, -1)
    if header[2:] == ["value"]:
        return ScalarField(grid, vals[..., 0])
    return VectorField(grid, vals)
