"""Minimization of the exponential-growth energy  I[u] = int exp(H(x, Du)/eps) dx.

The discrete energy uses bilinear interpolation of the nodal values on each
grid cell and 2x2 Gauss quadrature of exp(H/eps); it is convex in the
nodal values since H is a convex quadratic of the cell gradient and exp is
convex and increasing.

exp(H/eps) over- and underflows long before eps reaches interesting
values, so everything is carried in log-scaled form. The energy is a pair
(scale, mantissa). The Euler-Lagrange equations are divided node by node by
the sum of the exponential weights touching that node, which turns each of
them into a weighted mean of fluxes (``normalized_gradient``). Newton's
method runs on these normalized equations: log E itself only resolves cells
whose exponent is within about 36 of the largest one, so it cannot steer the
iteration once eps is small, while the normalized equations stay O(1).

In the operator normalization of :mod:`aronsson_lab.operator` the minimizer
solves -A_H[u] - 2*eps*div(A Du) = 0, which is what the reported residual
measures.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import CoefficientField
from .grid import Grid2D, ScalarField, interpolate
from .operator import regularized_residual

log = logging.getLogger(__name__)



def _gauss_rule(order: int):
    """Tensor Gauss-Legendre points on the unit square with weights summing to 1."""
    t, w = np.polynomial.legendre.leggauss(order)
    t, w = (t + 1) / 2, w / 2
    return [(xi, eta, wx * wy) for xi, wx in zip(t, w) for eta, wy in zip(t, w)]


class ConvergenceError(RuntimeError):
    def __init__(self, msg, best=None, grad_norm=None, schedule_position=None):
        super().__init__(msg)
        self.best = best
        self.grad_norm = grad_norm
        self.schedule_position = schedule_position


@dataclass(frozen=True)
class EpsSchedule:
    """Geometric schedule eps0 * ratio**k, k < count, or an explicit list."""

    eps0: float = 1e-1
    ratio: float = 0.5
    count: int = 5
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            if not vals or any(v <= 0 for v in vals):
                raise ValueError("explicit eps schedule must be nonempty and positive")
            object.__setattr__(self, "values", vals)
            return
        if not 0 < self.ratio < 1:
            raise ValueError("schedule ratio must lie in (0, 1)")
        if self.eps0 <= 0 or self.count < 1:
            raise ValueError("schedule needs eps0 > 0 and count >= 1")

    def __iter__(self):
        if self.values is not None:
            return iter(self.values)
        return iter(self.eps0 * self.ratio**k for k in range(self.count))

    def __len__(self):
        return len(self.values) if self.values is not None else self.count


@dataclass(frozen=True)
class SolveConfig:
    eps: float = 1e-2
    grad_tol: float = 1e-8
    max_newton_iters: int = 200
    armijo_fraction: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-4
    eps_schedule: EpsSchedule = field(default_factory=EpsSchedule)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo_fraction < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass(frozen=True)
class StabilizedEnergy:
    """Energy represented as exp(scale) * mantissa."""

    scale: float
    mantissa: float

    @property
    def log(self) -> float:
        return self.scale + math.log(self.mantissa)

    @property
    def value(self) -> float:
        """Plain float value; ``inf`` when it overflows."""
        try:
            return math.exp(self.log)
        except OverflowError:
            return math.inf

    def __lt__(self, other):
        return self.log < other.log

    def __le__(self, other):
        return self.log <= other.log


# -- quadrature -----------------------------------------------------------------


class Quadrature:
    """Gauss points of every cell with their gradient weights and sampled A."""

    def __init__(self, cf: CoefficientField, order: int = 2):
        grid = cf.grid
        self.grid = grid
        nx, ny, h = grid.nx, grid.ny, grid.h
        I, J = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
        I, J = I.ravel(), J.ravel()
        base = np.stack([I * ny + J, (I + 1) * ny + J, I * ny + J + 1, (I + 1) * ny + J + 1], axis=1)
        nodes, bx, by, pts, wts = [], [], [], [], []
        for xi, eta, wq in _gauss_rule(order):
            wts.append(np.full(len(I), wq * h * h))
            nodes.append(base)
            bx.append(np.tile(np.array([-(1 - eta), 1 - eta, -eta, eta]) / h, (len(I), 1)))
            by.append(np.tile(np.array([-(1 - xi), -xi, 1 - xi, xi]) / h, (len(I), 1)))
            pts.append(np.stack([grid.origin[0] + (I + xi) * h, grid.origin[1] + (J + eta) * h], axis=1))
        self.nodes = np.concatenate(nodes)
        self.bx = np.concatenate(bx)
        self.by = np.concatenate(by)
        self.A = interpolate(grid, cf.values, np.concatenate(pts))
        self.weight = np.concatenate(wts)
        self.n = nx * ny
        A, bx, by = self.A, self.bx, self.by
        # B^T A B per Gauss point, (Q, 4, 4)
        self.bab = (A[:, 0, None, None] * bx[:, :, None] * bx[:, None, :]
                    + A[:, 1, None, None] * (bx[:, :, None] * by[:, None, :] + by[:, :, None] * bx[:, None, :])
                    + A[:, 2, None, None] * by[:, :, None] * by[:, None, :])

    def gradients(self, u: np.ndarray) -> np.ndarray:
        uc = u.ravel()[self.nodes]
        return np.stack([(self.bx * uc).sum(1), (self.by * uc).sum(1)], axis=1)

    def state(self, u: np.ndarray, eps: float):
        g = self.gradients(u)
        A = self.A
        Ag = np.stack([A[:, 0] * g[:, 0] + A[:, 1] * g[:, 1], A[:, 1] * g[:, 0] + A[:, 2] * g[:, 1]], axis=1)
        H = (g * Ag).sum(1)
        return g, Ag, H / eps

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.nodes.ravel(), weights=local.ravel(), minlength=self.n)

    def node_max(self, s: np.ndarray) -> np.ndarray:
        m = np.full(self.n, -np.inf)
        np.maximum.at(m, self.nodes.ravel(), np.repeat(s, 4))
        return m


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def _quad(cf_or_quad) -> Quadrature:
    return cf_or_quad if isinstance(cf_or_quad, Quadrature) else Quadrature(cf_or_quad)


def energy(u: ScalarField, cf: CoefficientField | Quadrature, eps: float) -> StabilizedEnergy:
    _check_eps(eps)
    q = _quad(cf)
    _, _, s = q.state(u.values, eps)
    M = float(s.max())
    return StabilizedEnergy(M, float((q.weight * np.exp(s - M)).sum()))


def energy_gradient(u: ScalarField, cf: CoefficientField | Quadrature, eps: float) -> ScalarField:
    """Gradient of exp(-scale) * I[u] in the nodal values; zero on the boundary.

    ``scale`` is the one reported by :func:`energy` at the same ``u``.
    """
    _check_eps(eps)
    q = _quad(cf)
    _, Ag, s = q.state(u.values, eps)
    coef = q.weight * np.exp(s - s.max()) * (2 / eps)
    G = q.bx * Ag[:, :1] + q.by * Ag[:, 1:]
    grad = q.scatter(coef[:, None] * G).reshape(u.grid.shape)
    grad[u.grid.boundary_mask] = 0.0
    return ScalarField(u.grid, grad)


def normalized_gradient(u: ScalarField, cf: CoefficientField | Quadrature, eps: float) -> np.ndarray:
    """Energy gradient divided, node by node, by the sum of its exponential weights.

    The result is the exp(H/eps)-weighted mean of the discrete Euler-Lagrange
    fluxes at each node, multiplied by h so that it carries the units of Du.
    Its size does not depend on how small exp(H/eps) is at a node compared to
    the largest cell, which is what makes it usable as a stopping criterion.
    Zero on the boundary.
    """
    q = _quad(cf)
    _, Ag, s = q.state(u.values, eps)
    m = q.node_max(s)
    G = q.bx * Ag[:, :1] + q.by * Ag[:, 1:]
    wq = q.weight[:, None] * np.exp(s[:, None] - m[q.nodes])
    num = q.scatter(wq * G)
    den = q.scatter(wq)
    out = (q.grid.h * num / den).reshape(u.grid.shape)
    out[u.grid.boundary_mask] = 0.0
    return out


# -- Newton -------------------------------------------------------------------------


class _System:
    """Interior-unknown bookkeeping and row-scaled Newton assembly."""

    def __init__(self, q: Quadrature, grid: Grid2D):
        self.q = q
        self.grid = grid
        interior = grid.interior_mask.ravel()
        self.free = np.flatnonzero(interior)
        self.index = np.full(q.n, -1)
        self.index[self.free] = np.arange(len(self.free))
        loc = self.index[q.nodes]  # (Q, 4)
        self.rows = np.repeat(loc, 4, axis=1)
        self.cols = np.tile(loc, (1, 4))
        self.keep = (self.rows >= 0) & (self.cols >= 0)

    def linear_extension(self, g: np.ndarray) -> np.ndarray:
        """Discrete solution of div(A Du) = 0 with the boundary values of ``g``."""
        q = self.q
        K = q.weight[:, None, None] * q.bab
        # solve for u - c with c a boundary value, so constant data comes back exactly
        c = float(np.asarray(g, float).flat[0])
        u = np.asarray(g, float).ravel() - c
        u[self.free] = 0.0
        Kf = K.reshape(len(q.nodes), 16)
        mat = sp.csr_matrix((Kf[self.keep], (self.rows[self.keep], self.cols[self.keep])),
                            shape=(len(self.free),) * 2)
        # move fixed boundary values to the right-hand side
        fixed_cols = (self.rows >= 0) & (self.cols < 0)
        ucol = np.tile(u[q.nodes], (1, 4))
        rhs = -np.bincount(self.rows[fixed_cols], weights=(Kf * ucol)[fixed_cols], minlength=len(self.free))
        u[self.free] = splu(mat.tocsc()).solve(rhs)
        return (u + c).reshape(self.grid.shape)

    def newton(self, u: np.ndarray, eps: float):
        """Row-scaled gradient, scaled Hessian, node log-scales and the raw quadrature state."""
        q = self.q
        _, Ag, s = q.state(u, eps)
        m = q.node_max(s)
        G = q.bx * Ag[:, :1] + q.by * Ag[:, 1:]
        row_w = np.exp(s[:, None] - m[q.nodes])  # (Q, 4), each <= 1
        rgrad = q.scatter(q.weight[:, None] * row_w * G) * (2 / eps)
        K = (4 / eps**2) * G[:, :, None] * G[:, None, :] + (2 / eps) * q.bab
        K *= q.weight[:, None, None] * row_w[:, :, None]
        Kf = K.reshape(len(q.nodes), 16)
        mat = sp.csr_matrix((Kf[self.keep], (self.rows[self.keep], self.cols[self.keep])),
                            shape=(len(self.free),) * 2)
        return rgrad[self.free], mat, m[self.free], s

    def residual_newton(self, u: np.ndarray, eps: float):
        """Normalized gradient R and its exact Jacobian on the free nodes.

        R_i = sum_q a_qi G_qi / sum_q a_qi with a_qi = w_q exp(s_q - m_i); the
        shift m_i cancels, so R is a smooth function of u alone.
        """
        q = self.q
        _, Ag, s = q.state(u, eps)
        m = q.node_max(s)
        G = q.bx * Ag[:, :1] + q.by * Ag[:, 1:]
        a = q.weight[:, None] * np.exp(s[:, None] - m[q.nodes])
        D = q.scatter(a)
        R = q.scatter(a * G) / D
        Gc = G - R[q.nodes]
        J = a[:, :, None] * (q.bab + (2 / eps) * Gc[:, :, None] * G[:, None, :]) / D[q.nodes][:, :, None]
        Jf = J.reshape(len(q.nodes), 16)
        mat = sp.csr_matrix((Jf[self.keep], (self.rows[self.keep], self.cols[self.keep])),
                            shape=(len(self.free),) * 2)
        return R[self.free], mat, s


def _log_energy(q: Quadrature, u: np.ndarray, eps: float) -> float:
    _, _, s = q.state(u, eps)
    M = s.max()
    return float(M + np.log((q.weight * np.exp(s - M)).sum()))


@dataclass
class RegularizedSolution:
    u_eps: ScalarField
    eps: float
    energy: StabilizedEnergy
    grad_norm: float
    iterations: int
    residual_sup: float
    wall_time: float = 0.0
    warnings: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "eps": self.eps,
            "iters": self.iterations,
            "energy_scale": self.energy.scale,
            "energy_mantissa": self.energy.mantissa,
            "grad_norm": self.grad_norm,
            "residual_sup": self.residual_sup,
            "wall_time": self.wall_time,
        }


def resolution_warning(grid: Grid2D, eps: float, c: float = 1.0) -> str | None:
    if eps < c * grid.h**2:
        return f"eps={eps:g} is below {c:g}*h^2={c * grid.h**2:g}; regularization is under-resolved"
    return None


def minimize(g: ScalarField, cf: CoefficientField, config: SolveConfig,
             initial: ScalarField | None = None, quadrature: Quadrature | None = None) -> RegularizedSolution:
    """Newton's method on the normalized Euler-Lagrange equations.

    A step is accepted when the energy does not increase (up to roundoff in
    its log) and the residual norm satisfies an Armijo decrease. If the
    Jacobian cannot be factored a diagonally scaled gradient step is taken.
    Only the boundary values of ``g`` are used. The first iterate is the
    discrete solution of div(A Du) = 0 unless ``initial`` is given (its
    boundary values are overwritten by those of ``g``).
    """
    t0 = time.perf_counter()
    grid = g.grid
    if cf.grid != grid:
        raise ValueError("boundary data and coefficients live on different grids")
    eps = config.eps
    q = quadrature or Quadrature(cf)
    system = _System(q, grid)
    notes = []
    msg = resolution_warning(grid, eps)
    if msg:
        warnings.warn(msg)
        notes.append(msg)

    bmask = grid.boundary_mask
    if initial is None:
        u = system.linear_extension(g.values)
    else:
        u = np.array(initial.values, float)
        u[bmask] = g.values[bmask]

    def gnorm(u):
        return float(np.abs(normalized_gradient(ScalarField(grid, u), q, eps)).max())

    phi = _log_energy(q, u, eps)
    it = 0
    gn = gnorm(u)
    while gn > config.grad_tol:
        if it >= config.max_newton_iters:
            raise ConvergenceError(
                f"no convergence in {it} Newton iterations (eps={eps:g}, grad={gn:.3e})",
                best=ScalarField(grid, u), grad_norm=gn,
            )
        it += 1
        R, jac, s = system.residual_newton(u, eps)
        rn = float(np.linalg.norm(R)) * grid.h
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                d = splu(jac.tocsc()).solve(-R)
            if not np.all(np.isfinite(d)):
                raise ValueError("non-finite Newton direction")
        except (RuntimeError, ValueError, Warning) as exc:
            log.debug("Newton step rejected (%s); using scaled gradient step", exc)
            rgrad, mat, _, _ = system.newton(u, eps)
            d = -rgrad / mat.diagonal()

        t = 1.0
        full = np.zeros(q.n)
        full[system.free] = d
        step = full.reshape(grid.shape)
        slack = 1e-15 * max(1.0, abs(phi))
        while True:
            trial = u + t * step
            phi_t = _log_energy(q, trial, eps)
            # log E only resolves cells near the largest exponent, so progress is
            # measured on the scale-free residual while E may not increase
            if phi_t <= phi + slack:
                rt = float(np.linalg.norm(normalized_gradient(ScalarField(grid, trial), q, eps)))
                if rt <= (1 - config.armijo_fraction * t) * rn:
                    break
            t *= config.backtrack
            if t < config.min_step:
                raise ConvergenceError(
                    f"line search failed at iteration {it} (eps={eps:g}, grad={gn:.3e})",
                    best=ScalarField(grid, u), grad_norm=gn,
                )
        u, phi = trial, phi_t
        gn = gnorm(u)
        log.debug("eps=%g it=%d t=%g logE=%.15g grad=%.3e", eps, it, t, phi, gn)

    uf = ScalarField(grid, u)
    res = float(np.abs(regularized_residual(uf, cf, 2 * eps)).max())
    return RegularizedSolution(
        u_eps=uf, eps=eps, energy=energy(uf, q, eps), grad_norm=gn, iterations=it,
        residual_sup=res, wall_time=time.perf_counter() - t0, warnings=notes,
    )


@dataclass
class ContinuationReport:
    solutions: list[RegularizedSolution]
    sup_differences: list[float]
    warnings: list[str] = field(default_factory=list)

    @property
    def eps(self) -> list[float]:
        return [s.eps for s in self.solutions]


def default_subdomain(grid: Grid2D, margin: float = 0.125) -> np.ndarray:
    """Nodes at distance >= margin*(shorter side) from the boundary."""
    P = grid.points
    x, y = P[..., 0], P[..., 1]
    side = min(grid.x[-1] - grid.x[0], grid.y[-1] - grid.y[0])
    d = np.minimum.reduce([x - grid.x[0], grid.x[-1] - x, y - grid.y[0], grid.y[-1] - y])
    return d >= margin * side - 1e-12


def continuation(g: ScalarField, cf: CoefficientField, config: SolveConfig,
                 subdomain: np.ndarray | None = None, delta0: float | None = None) -> ContinuationReport:
    """Warm-started solves down ``config.eps_schedule``.

    The report holds sup-norm differences of consecutive solutions on a fixed
    interior subdomain.
    """
    schedule = list(config.eps_schedule)
    if not schedule:
        raise ValueError("empty eps schedule")
    notes = []
    if delta0 is not None and cf.lipA > delta0:
        notes.append(f"lipA={cf.lipA:.3g} exceeds delta0={delta0:.3g}; convergence hypothesis not met")
    sub = default_subdomain(g.grid) if subdomain is None else subdomain
    q = Quadrature(cf)
    sols, diffs = [], []
    prev = None
    for k, eps in enumerate(schedule):
        cfg = replace(config, eps=eps)
        try:
            sol = minimize(g, cf, cfg, initial=prev.u_eps if prev else None, quadrature=q)
        except ConvergenceError as exc:
            exc.schedule_position = k
            raise
        if prev is not None:
            diffs.append(float(np.abs(sol.u_eps.values - prev.u_eps.values)[sub].max()))
        sols.append(sol)
        notes.extend(sol.warnings)
        prev = sol
    return ContinuationReport(sols, diffs, notes)
