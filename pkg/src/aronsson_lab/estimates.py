"""Quantitative checks of the a priori estimates on computed solutions.

Constants are never assumed. Each check either verifies a sign or ordering
(maximum principle, barrier supersolution) or fits a constant and leaves its
uniformity across eps or lambda ladders to the caller.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import CoefficientField
from .grid import Grid2D, GridError, ScalarField, gradient, interior, interpolate
from .operator import aronsson_operator, flux_divergence
from .solver import RegularizedSolution

SLACK = 1e-8


@dataclass
class EstimateReport:
    name: str
    hypothesis_flags: dict
    measured: float
    threshold: float
    passed: bool | None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "hypothesis_flags": {k: bool(v) for k, v in self.hypothesis_flags.items()},
            "measured": _jsonable(self.measured),
            "threshold": _jsonable(self.threshold),
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    v = float(v)
    return v if np.isfinite(v) else None


# -- maximum principle -------------------------------------------------------------


def check_max_principle(sol: RegularizedSolution, g: ScalarField) -> EstimateReport:
    """margin = max_boundary |g| - max_interior |u_eps|; passes when >= -1e-8*scale."""
    grid = sol.u_eps.grid
    u = sol.u_eps.values
    gb = np.abs(g.values[grid.boundary_mask]).max()
    ui = np.abs(u[grid.interior_mask]).max()
    scale = max(1.0, float(gb))
    margin = float(gb - ui)
    return EstimateReport(
        "max_principle", {}, margin, -SLACK * scale, margin >= -SLACK * scale,
        details={"boundary_max": float(gb), "interior_max": float(ui)},
    )


# -- interior gradient bound ---------------------------------------------------------


def _check_separated(grid: Grid2D, V: np.ndarray):
    V = np.asarray(V, dtype=bool)
    if V.shape != grid.shape:
        raise GridError(f"mask shape {V.shape} does not match grid {grid.shape}")
    if not V.any():
        raise GridError("empty interior set")
    I, J = np.nonzero(V)
    gap = min(I.min(), J.min(), grid.nx - 1 - I.max(), grid.ny - 1 - J.max())
    if gap < 2:
        raise GridError("interior set must stay at least 2h away from the boundary")
    return V


def interior_gradient_bound(sols: RegularizedSolution | Sequence[RegularizedSolution],
                            V: np.ndarray) -> EstimateReport:
    """sup of |Du_eps| over V, and its max over a schedule of solutions."""
    if isinstance(sols, RegularizedSolution):
        sols = [sols]
    V = _check_separated(sols[0].u_eps.grid, V)
    per_eps = [float(gradient(s.u_eps).norm[V].max()) for s in sols]
    return EstimateReport(
        "interior_gradient_bound", {}, max(per_eps), np.inf, True,
        details={"eps": [s.eps for s in sols], "per_eps": per_eps},
    )


# -- barrier ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BarrierSpec:
    """w(x) = amplitude * |x - y0|**gamma with derived constants for a coefficient field."""

    y0: tuple[float, float]
    amplitude: float
    gamma: float
    L: float
    sup_A: float
    max_distance: float

    def __post_init__(self):
        if not self.amplitude > 1:
            raise ValueError("barrier amplitude must exceed 1")
        if not 0 < self.gamma < 1:
            raise ValueError("barrier exponent must lie in (0, 1)")

    @classmethod
    def for_field(cls, cf: CoefficientField, y0, amplitude: float = 2.0, gamma: float = 0.5) -> "BarrierSpec":
        grid = cf.grid
        y0 = (float(y0[0]), float(y0[1]))
        if not grid.contains(y0, tol=1e-9 * grid.h):
            raise GridError(f"barrier vertex {y0} lies outside the grid")
        on_edge = min(abs(y0[0] - grid.x[0]), abs(y0[0] - grid.x[-1]),
                      abs(y0[1] - grid.y[0]), abs(y0[1] - grid.y[-1]))
        if on_edge > 1e-9 * grid.h:
            raise GridError(f"barrier vertex {y0} is not on the boundary")
        dist = np.hypot(grid.points[..., 0] - y0[0], grid.points[..., 1] - y0[1])
        return cls(y0, amplitude, gamma, cf.L, cf.sup_norm, float(dist.max()))

    @property
    def gamma_tilde(self) -> float:
        return (2 - self.gamma) / self.L**2 - self.L**2

    @property
    def delta0(self) -> float:
        """min over grid points of gamma_tilde / (2|x - y0|), divided by sup|A|."""
        return self.gamma_tilde / (2 * self.max_distance) / self.sup_A

    def distance(self, grid: Grid2D) -> np.ndarray:
        return np.hypot(grid.points[..., 0] - self.y0[0], grid.points[..., 1] - self.y0[1])

    def field(self, grid: Grid2D) -> ScalarField:
        return ScalarField(grid, self.amplitude * self.distance(grid) ** self.gamma)

    def admissible(self, grid: Grid2D) -> np.ndarray:
        """Interior nodes at distance >= 2h from the vertex."""
        return grid.interior_mask & (self.distance(grid) >= 2 * grid.h * (1 - 1e-12))


def barrier_terms_exact(spec: BarrierSpec, A, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(A_H[w], div(A Dw)) in closed form for a constant packed matrix A.

    Returns arrays over the leading shape of ``x``; the transport term
    vanishes for constant A.
    """
    a11, a12, a22 = (float(v) for v in A)
    lam, gam = spec.amplitude, spec.gamma
    z = np.asarray(x, float) - np.asarray(spec.y0)
    r = np.hypot(z[..., 0], z[..., 1])
    zx, zy = z[..., 0] / r, z[..., 1] / r
    c = lam * gam * r ** (gam - 1)  # |Dw|, Dw = c * zhat
    # D^2 w = lam*gam*r^(gam-2) (I + (gam-2) zhat zhat^T)
    k = lam * gam * r ** (gam - 2)
    Ax, Ay = a11 * zx + a12 * zy, a12 * zx + a22 * zy  # A zhat
    AzAz = Ax * Ax + Ay * Ay
    zAz = zx * Ax + zy * Ay
    main = 4 * c**2 * k * (AzAz + (gam - 2) * zAz**2)
    div = k * (a11 + a22 + (gam - 2) * zAz)
    return main, div


def barrier_values(spec: BarrierSpec, cf: CoefficientField, eps: float) -> np.ndarray:
    """-A_H^eps[w] on interior nodes (NaN where not admissible).

    The regularized operator is the one solved by the energy minimizer,
    -A_H[w] - 2*eps*div(A Dw).
    """
    grid = cf.grid
    w = spec.field(grid)
    val = -aronsson_operator(w, cf) - 2 * eps * flux_divergence(w, cf)
    out = np.full(val.shape, np.nan)
    mask = interior(spec.admissible(grid))
    out[mask] = val[mask]
    return out


def barrier_supersolution_check(spec: BarrierSpec, cf: CoefficientField, eps: float) -> EstimateReport:
    """Sign of -A_H^eps[w] at admissible nodes; passes when min >= -1e-8*scale."""
    if spec.gamma_tilde <= 0:
        raise ValueError(
            f"gamma_tilde={spec.gamma_tilde:.4g} <= 0: needs L < 2**(1/4) and gamma < 2 - L**4 (L={spec.L:.6g})"
        )
    if not eps >= 0:
        raise ValueError("eps must be non-negative")
    vals = barrier_values(spec, cf, eps)
    ok = np.isfinite(vals)
    if not ok.any():
        raise GridError("no admissible nodes at distance >= 2h from the vertex")
    v = vals[ok]
    scale = max(1.0, float(np.abs(v).max()))
    eps0 = largest_barrier_eps(spec, cf)
    flags = {
        **cf.hypothesis_flags(spec.delta0),
        "gamma_tilde_positive": True,
        "eps_below_eps0": eps <= eps0,
    }
    m = float(v.min())
    return EstimateReport(
        "barrier_supersolution", flags, m, -SLACK * scale, m >= -SLACK * scale,
        details={"gamma_tilde": spec.gamma_tilde, "delta0": spec.delta0, "eps0_empirical": eps0,
                 "lipA": cf.lipA, "scale": scale},
    )


def largest_barrier_eps(spec: BarrierSpec, cf: CoefficientField) -> float:
    """Largest eps for which the barrier sign check still passes on this grid.

    -A_H^eps[w] = a - eps*b pointwise, so the answer is explicit; 0 when the
    check fails already at eps = 0 and inf when no node tightens with eps.
    """
    grid = cf.grid
    w = spec.field(grid)
    mask = interior(spec.admissible(grid))
    a = -aronsson_operator(w, cf)[mask]
    b = 2 * flux_divergence(w, cf)[mask]
    thr = SLACK * max(1.0, float(np.abs(a).max()))
    if (a < -thr).any():
        return 0.0
    pos = b > 0
    if not pos.any():
        return float("inf")
    return float(((a[pos] + thr) / b[pos]).min())


# -- boundary Hoelder --------------------------------------------------------------------


def holder_constant(u: ScalarField, g0: float, spec: BarrierSpec) -> float:
    """Least C with |u(x) - g0| <= C |x - y0|**gamma over nodes with |x - y0| >= 2h."""
    grid = u.grid
    d = spec.distance(grid)
    mask = d >= 2 * grid.h * (1 - 1e-12)
    return float((np.abs(u.values[mask] - g0) / d[mask] ** spec.gamma).max())


def boundary_holder_check(sols: Sequence[RegularizedSolution], g: ScalarField, spec: BarrierSpec,
                          ratio: float = 2.0) -> EstimateReport:
    """Fitted Hoelder constants per eps; passes when max/min <= ratio."""
    if not sols:
        raise ValueError("no solutions given")
    g0 = float(interpolate(g.grid, g.values, np.asarray(spec.y0)))
    Cs = [holder_constant(s.u_eps, g0, spec) for s in sols]
    lo, hi = min(Cs), max(Cs)
    spread = 1.0 if hi == 0 else (hi / lo if lo > 0 else np.inf)
    return EstimateReport(
        "boundary_holder", {}, spread, ratio, bool(spread <= ratio),
        details={"eps": [s.eps for s in sols], "C": Cs},
    )


# -- flatness ------------------------------------------------------------------------------


def flatness_phi(p: np.ndarray) -> np.ndarray:
    """Phi(p) = ((|p|^2 - p_n)_+)^2 with p_n the second component."""
    e = np.maximum(p[..., 0] ** 2 + p[..., 1] ** 2 - p[..., 1], 0.0)
    return e * e


@dataclass
class FlatnessReport:
    lam: float
    sup: float
    ratio: float
    phi_max: float
    deviation: float
    hypothesis_flags: dict

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.hypothesis_flags.values())

    def to_estimate(self, threshold: float = np.inf) -> EstimateReport:
        passed = bool(self.ratio <= threshold) if self.hypotheses_hold else None
        return EstimateReport("flatness", self.hypothesis_flags, self.ratio, threshold, passed,
                              details=asdict(self))


def _ball(grid: Grid2D, radius: float) -> np.ndarray:
    P = grid.points
    return np.hypot(P[..., 0], P[..., 1]) <= radius + 1e-12


def flatness_check(sol: RegularizedSolution, lam: float, cf: CoefficientField) -> FlatnessReport:
    """sup over B(0,1) of (|Du|^2 - u_n)_+ and its ratio to lam**0.5.

    Hypotheses (recorded in the flags, not enforced): B(0,3) inside the
    domain, A(0) = I, |DA| + |D^2A| <= lam, and |u - x_n| <= lam on B(0,2).
    """
    if not lam > 0:
        raise ValueError("flatness scale must be positive")
    grid = sol.u_eps.grid
    u = sol.u_eps.values
    y = grid.points[..., 1]
    B1, B2 = _ball(grid, 1.0), _ball(grid, 2.0)
    if not B1.any():
        raise GridError("grid does not meet B(0,1)")
    x0, x1, y0, y1 = grid.x[0], grid.x[-1], grid.y[0], grid.y[-1]
    contains_b3 = min(-x0, x1, -y0, y1) >= 3 - 1e-9
    i, j = grid.nearest_index((0.0, 0.0))
    A0 = cf.values[i, j]
    dev = float(np.abs(u - y)[B2].max())
    flags = {
        "domain_contains_B3": bool(contains_b3),
        "A0_identity": bool(np.allclose(A0, [1.0, 0.0, 1.0], atol=1e-12)) and contains_b3,
        "lambda_assumption": bool(cf.lipA + cf.hessA <= lam * (1 + 1e-9)),
        "flatness_assumption": bool(dev <= lam),
    }
    Du = gradient(sol.u_eps).values
    excess = np.maximum(Du[..., 0] ** 2 + Du[..., 1] ** 2 - Du[..., 1], 0.0)
    sup = float(excess[B1].max())
    return FlatnessReport(lam, sup, sup / np.sqrt(lam), float(flatness_phi(Du)[B1].max()), dev, flags)
