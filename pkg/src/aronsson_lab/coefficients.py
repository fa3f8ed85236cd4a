"""Coefficient matrix fields A(x): validation, seminorms, smoothing, presets, pullbacks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import (
    Grid2D,
    GridError,
    ScalarField,
    SymMatrixField,
    gradient_array,
    hessian_array,
    interpolate,
)

# ellipticity thresholds under which the convergence and boundary-barrier
# statements are proved
L_CONVERGENCE = 2 ** (1 / 5)
L_BARRIER = 2 ** (1 / 4)


class EllipticityError(ValueError):
    def __init__(self, msg, location=None):
        super().__init__(msg)
        self.location = location


def eigenvalues(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues (min, max) of packed symmetric 2x2 matrices."""
    a, b, c = values[..., 0], values[..., 1], values[..., 2]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return mean - rad, mean + rad


def ellipticity_constant(A: SymMatrixField) -> float:
    lo, hi = eigenvalues(A.values)
    if np.any(lo <= 0):
        idx = np.unravel_index(np.argmin(lo), lo.shape)
        pt = tuple(float(p) for p in A.grid.points[idx])
        raise EllipticityError(
            f"matrix field is not positive definite at node {tuple(int(i) for i in idx)} (x={pt})",
            location=idx,
        )
    return float(max(hi.max(), (1.0 / lo).max()))


def derivative_fields(values: np.ndarray, h: float) -> np.ndarray:
    """Entry derivatives d_k a^{ij}, shape ``(nx, ny, 2, 3)``."""
    return gradient_array(values, h)


def c11_seminorms(A: SymMatrixField) -> tuple[float, float]:
    """Discrete sup-norms of DA and D^2A over all points and entries."""
    d = derivative_fields(A.values, A.grid.h)
    dd = hessian_array(A.values, A.grid.h)
    return float(np.abs(d).max()), float(np.abs(dd).max())


@dataclass(frozen=True, eq=False)
class CoefficientField:
    A: SymMatrixField
    L: float = field(init=False)
    lipA: float = field(init=False)
    hessA: float = field(init=False)
    dA: np.ndarray = field(init=False, repr=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "L", ellipticity_constant(self.A))
        lip, hess = c11_seminorms(self.A)
        object.__setattr__(self, "lipA", lip)
        object.__setattr__(self, "hessA", hess)
        d = derivative_fields(self.A.values, self.A.grid.h)
        d.flags.writeable = False
        object.__setattr__(self, "dA", d)

    @property
    def grid(self) -> Grid2D:
        return self.A.grid

    @property
    def values(self) -> np.ndarray:
        return self.A.values

    @property
    def sup_norm(self) -> float:
        """max over points of the spectral norm of A(x)."""
        return float(eigenvalues(self.A.values)[1].max())

    @property
    def is_constant(self) -> bool:
        v = self.A.values
        return bool(np.all(v == v[0, 0]))

    def hypothesis_flags(self, delta0: float | None = None) -> dict:
        flags = {
            "L_below_convergence_threshold": self.L < L_CONVERGENCE,
            "L_below_barrier_threshold": self.L < L_BARRIER,
        }
        if delta0 is not None:
            flags["lipA_below_delta0"] = self.lipA <= delta0
        return flags

    def at(self, points: np.ndarray) -> np.ndarray:
        """Bilinear samples of the packed matrices at arbitrary points."""
        return interpolate(self.grid, self.A.values, points)


def identity(grid: Grid2D) -> CoefficientField:
    return CoefficientField(SymMatrixField.constant(grid, 1.0, 0.0, 1.0), meta={"preset": "identity"})


def constant(grid: Grid2D, a11: float, a12: float, a22: float) -> CoefficientField:
    if not (a11 > 0 and a11 * a22 - a12 * a12 > 0):
        raise EllipticityError(f"constant({a11}, {a12}, {a22}) is not positive definite")
    return CoefficientField(
        SymMatrixField.constant(grid, a11, a12, a22),
        meta={"preset": "constant", "params": [a11, a12, a22]},
    )


def _smooth_pattern(grid: Grid2D, center) -> np.ndarray:
    X, Y = grid.mesh()
    s, t = X - center[0], Y - center[1]
    P = np.zeros(grid.shape + (3,))
    P[..., 0] = np.sin(s)
    P[..., 1] = 0.5 * np.sin(s + t)
    P[..., 2] = np.sin(t)
    return P


def smooth(grid: Grid2D, lam: float) -> CoefficientField:
    """A = I + c*P with P vanishing at the node nearest the origin.

    The amplitude c is set from the discrete seminorms of P so that
    lipA + hessA <= lam on this grid.
    """
    if not 0 < lam < 1:
        raise ValueError("smooth preset needs 0 < lam < 1")
    center = (0.0, 0.0)
    if grid.contains(center):
        i, j = grid.nearest_index(center)
        center = (grid.x[i], grid.y[j])
    P = _smooth_pattern(grid, center)
    lip, hess = c11_seminorms(SymMatrixField(grid, P))
    c = lam / (lip + hess) * (1 - 1e-12)
    V = c * P
    V[..., 0] += 1.0
    V[..., 2] += 1.0
    cf = CoefficientField(SymMatrixField(grid, V), meta={"preset": "smooth", "params": [lam], "amplitude": c})
    return cf


PRESETS = {"identity": identity, "constant": constant, "smooth": smooth}


def preset(name: str, grid: Grid2D, params=()) -> CoefficientField:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown coefficient preset {name!r}; known: {sorted(PRESETS)}") from None
    return fn(grid, *params)


def _clamp_eigenvalues(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    full = np.empty(values.shape[:-1] + (2, 2))
    full[..., 0, 0], full[..., 0, 1], full[..., 1, 0], full[..., 1, 1] = (
        values[..., 0], values[..., 1], values[..., 1], values[..., 2],
    )
    w, V = np.linalg.eigh(full)
    w = np.clip(w, lo, hi)
    M = np.einsum("...ik,...k,...jk->...ij", V, w, V)
    return np.stack([M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]], axis=-1)


@dataclass(frozen=True, eq=False)
class SmoothingResult:
    field: CoefficientField
    unchanged: bool
    sigma: float


def smooth_coefficients(cf: CoefficientField, eps: float, width: float = 1.0) -> SmoothingResult:
    """Gaussian mollification of each entry with kernel width ``width*eps``.

    Eigenvalues are then clamped to [1/(2L), 2L]. If the smoothed seminorms
    exceed twice the original ones, the result is blended back towards A
    until they do not. A kernel narrower than one grid spacing leaves A
    unchanged (``unchanged`` is set and a warning issued).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = cf.grid
    sigma = width * eps
    if cf.is_constant:
        return SmoothingResult(cf, False, sigma)
    if sigma < grid.h:
        warnings.warn(f"kernel width {sigma:g} below grid spacing {grid.h:g}; A returned unchanged")
        return SmoothingResult(cf, True, sigma)
    V = np.stack(
        [gaussian_filter(cf.values[..., k], sigma / grid.h, mode="nearest") for k in range(3)], axis=-1
    )
    V = _clamp_eigenvalues(V, 1 / (2 * cf.L), 2 * cf.L)
    lip0, hess0 = cf.lipA, cf.hessA
    t = 1.0
    while True:
        W = cf.values + t * (V - cf.values)
        lip, hess = c11_seminorms(SymMatrixField(grid, W))
        if (lip <= 2 * lip0 + 1e-14 and hess <= 2 * hess0 + 1e-14) or t < 1e-6:
            break
        t *= 0.5
    out = CoefficientField(SymMatrixField(grid, W), meta={**cf.meta, "smoothed_eps": eps})
    return SmoothingResult(out, False, sigma)


# -- geometric transforms ------------------------------------------------------


def _mapped_points(target: Grid2D, x0, M) -> np.ndarray:
    M = np.asarray(M, dtype=float).reshape(2, 2)
    if abs(np.linalg.det(M)) < 1e-14:
        raise ValueError("transform matrix is singular")
    Y = target.points
    return np.asarray(x0, float) + np.einsum("ij,...j->...i", M, Y)


def _check_inside(source: Grid2D, pts: np.ndarray, target: Grid2D):
    corners = [(0, 0), (target.nx - 1, 0), (0, target.ny - 1), (target.nx - 1, target.ny - 1)]
    outside = [c for c in corners if not source.contains(pts[c], tol=1e-9 * source.h)]
    # affine image of a box: corners bound it
    if outside:
        raise GridError(f"target grid escapes the source domain at corners {outside}")


def pullback(cf: CoefficientField, x0, M, target: Grid2D) -> CoefficientField:
    """Resample y -> A(x0 + M y) on ``target``; values are not conjugated."""
    pts = _mapped_points(target, x0, M)
    _check_inside(cf.grid, pts, target)
    vals = interpolate(cf.grid, cf.values, pts)
    return CoefficientField(SymMatrixField(target, vals), meta={**cf.meta, "pullback": True})


def rescale_solution(u: ScalarField, x0, r: float, target: Grid2D) -> ScalarField:
    """y -> (u(x0 + r y) - u(x0)) / r sampled on ``target``."""
    if r == 0:
        raise ValueError("scale must be nonzero")
    pts = _mapped_points(target, x0, r * np.eye(2))
    _check_inside(u.grid, pts, target)
    u0 = float(interpolate(u.grid, u.values, np.asarray(x0, float)))
    return ScalarField(target, (interpolate(u.grid, u.values, pts) - u0) / r)
