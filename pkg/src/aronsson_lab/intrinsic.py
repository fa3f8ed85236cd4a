"""Intrinsic distance d_A and pointwise differentiability diagnostics.

d_A is approximated by shortest paths on the grid graph whose edges join each
node to its neighbours in a 32-, 48- or 80-direction stencil, with edge length
sqrt(<A^{-1}(midpoint) dx, dx>). Everything else (slopes S^+_r, Lip_{d_A},
blow-up slopes, Lebesgue-point deviations) is read off nodal values.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientField, eigenvalues
from .grid import Grid2D, GridError, ScalarField, gradient, interpolate
from .operator import _quad, sup_energy


def _primitive_offsets(pairs):
    out = set()
    for a, b in pairs:
        for p, q in ((a, b), (b, a)):
            for sp in (1, -1):
                for sq in (1, -1):
                    out.add((sp * p, sq * q))
    return sorted(out, key=lambda v: math.atan2(v[1], v[0]))


_BASE = [(1, 0), (1, 1), (2, 1), (3, 1), (3, 2)]
STENCILS = {
    8: _primitive_offsets(_BASE[:2]),
    16: _primitive_offsets(_BASE[:3]),
    32: _primitive_offsets(_BASE),
    48: _primitive_offsets(_BASE + [(4, 1), (4, 3)]),
    80: _primitive_offsets(_BASE + [(4, 1), (4, 3), (5, 1), (5, 2), (5, 3), (5, 4)]),
}
AUTO_TOLERANCE = 0.015


def stencil_error(offsets, metrics=None) -> float:
    """Worst relative overestimate of the metric length by the stencil path metric.

    ``metrics`` is an array of packed symmetric matrices M (length sqrt(<M v, v>));
    the Euclidean metric is the default. Between two angularly adjacent
    stencil vectors the shortest path uses only those two, so the worst
    ratio is found by sampling the segment between them.
    """
    M = np.array([[1.0, 0.0, 1.0]]) if metrics is None else np.asarray(metrics, float).reshape(-1, 3)
    v = np.array(offsets, float)
    t = np.linspace(0, 1, 1001)[:, None]
    worst = 0.0
    for k in range(len(v)):
        a, b = v[k], v[(k + 1) % len(v)]
        p = (1 - t) * a + t * b  # (T, 2)
        la = np.sqrt(_quad(a, M))  # (m,)
        lb = np.sqrt(_quad(b, M))
        lp = np.sqrt(_quad(p[:, None, :], M[None]))  # (T, m)
        worst = max(worst, float((((1 - t) * la + t * lb) / lp).max()))
    return worst - 1


def _metric_samples(cf: CoefficientField, count: int = 64) -> np.ndarray:
    V = cf.values.reshape(-1, 3)
    if cf.is_constant:
        V = V[:1]
    elif len(V) > count:
        lo, hi = eigenvalues(V)
        pick = np.unique(np.concatenate([np.linspace(0, len(V) - 1, count).astype(int),
                                         [np.argmax(hi / lo), np.argmax(hi), np.argmin(lo)]]))
        V = V[pick]
    return _inverse_packed(V)


def choose_stencil(cf: CoefficientField, tolerance: float = AUTO_TOLERANCE) -> tuple[int, float]:
    """Smallest stencil whose metrication error under A^{-1} stays within ``tolerance``."""
    M = _metric_samples(cf)
    for n in (32, 48, 80):
        err = stencil_error(STENCILS[n], M)
        if err <= tolerance:
            return n, err
    return 80, err


def _inverse_packed(V: np.ndarray) -> np.ndarray:
    det = V[..., 0] * V[..., 2] - V[..., 1] ** 2
    return np.stack([V[..., 2] / det, -V[..., 1] / det, V[..., 0] / det], axis=-1)


def edge_costs(cf: CoefficientField, offsets) -> np.ndarray:
    """(n_offsets, nx, ny) costs of the edge leaving each node; inf when it leaves the grid."""
    grid = cf.grid
    nx, ny, h = grid.nx, grid.ny, grid.h
    out = np.full((len(offsets), nx, ny), np.inf)
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    for k, (di, dj) in enumerate(offsets):
        ok = (I + di >= 0) & (I + di < nx) & (J + dj >= 0) & (J + dj < ny)
        mid = np.stack([grid.origin[0] + (I[ok] + 0.5 * di) * h, grid.origin[1] + (J[ok] + 0.5 * dj) * h], axis=-1)
        Ainv = _inverse_packed(interpolate(grid, cf.values, mid))
        dx = np.array([di * h, dj * h])
        out[k][ok] = np.sqrt(_quad(np.broadcast_to(dx, Ainv.shape[:-1] + (2,)), Ainv))
    return out


@dataclass(frozen=True, eq=False)
class DistanceField:
    grid: Grid2D
    source: tuple[int, int]
    values: np.ndarray = field(repr=False)
    stencil: int
    tolerance: float  # relative metrication error of the stencil

    @property
    def source_point(self) -> np.ndarray:
        return self.grid.points[self.source]

    def shell(self, r: float, half_width: float | None = None) -> np.ndarray:
        w = shell_half_width(self.grid) if half_width is None else half_width
        return np.abs(self.values - r) <= w

    def ball(self, r: float) -> np.ndarray:
        return self.values <= r


def shell_half_width(grid: Grid2D) -> float:
    return grid.h * (1 + math.sqrt(2)) / 4


def _dijkstra(costs: np.ndarray, offsets, shape, src: int) -> np.ndarray:
    nx, ny = shape
    n = nx * ny
    steps = [di * ny + dj for di, dj in offsets]
    adj = costs.reshape(len(offsets), n).T.tolist()
    dist = [math.inf] * n
    done = [False] * n
    dist[src] = 0.0
    heap = [(0.0, src)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        d, i = pop(heap)
        if done[i]:
            continue
        done[i] = True
        row = adj[i]
        for k, s in enumerate(steps):
            c = row[k]
            if c == math.inf:
                continue
            j = i + s
            nd = d + c
            if nd < dist[j]:
                dist[j] = nd
                push(heap, (nd, j))
    return np.array(dist).reshape(shape)


def intrinsic_distance(cf: CoefficientField, source, stencil: int | str = "auto",
                       costs: np.ndarray | None = None) -> DistanceField:
    """Label-setting shortest paths from ``source`` (a node index pair or a point on a node).

    Ties in the priority queue are broken by the lower flat node index. With
    ``stencil="auto"`` the smallest of the 32/48/80-direction stencils with
    metrication error <= 1.5% under the local metrics of A is used.
    ``costs`` may be passed in to reuse :func:`edge_costs` across sources.
    """
    grid = cf.grid
    if stencil == "auto":
        stencil, tol = choose_stencil(cf)
    elif stencil in STENCILS:
        tol = stencil_error(STENCILS[stencil], _metric_samples(cf))
    else:
        raise ValueError(f"stencil must be 'auto' or one of {sorted(STENCILS)}")
    offsets = STENCILS[stencil]
    src = _node(grid, source)
    if costs is None:
        costs = edge_costs(cf, offsets)
    vals = _dijkstra(costs, offsets, grid.shape, src[0] * grid.ny + src[1])
    vals.flags.writeable = False
    return DistanceField(grid, src, vals, stencil, tol)


def _node(grid: Grid2D, source) -> tuple[int, int]:
    s = tuple(source)
    if all(isinstance(v, (int, np.integer)) for v in s):
        i, j = int(s[0]), int(s[1])
        if not (0 <= i < grid.nx and 0 <= j < grid.ny):
            raise GridError(f"node {s} is outside the grid")
        return i, j
    p = np.asarray(s, float)
    if not grid.contains(p, tol=1e-9 * grid.h):
        raise GridError(f"point {tuple(p)} is outside the grid")
    i, j = grid.nearest_index(p)
    if np.hypot(*(grid.points[i, j] - p)) > 1e-9 * grid.h:
        raise GridError(f"point {tuple(p)} is not a grid node")
    return i, j


def metric_bracket(cf: CoefficientField) -> tuple[float, float]:
    """(min, max) of sqrt of the eigenvalues of A^{-1}: d_A lies between these times |x - y|."""
    lo, hi = eigenvalues(cf.values)
    return float(1 / np.sqrt(hi.max())), float(1 / np.sqrt(lo.min()))


# -- slopes ---------------------------------------------------------------------------


def slope(u: ScalarField, r: float, dist: DistanceField, half_width: float | None = None) -> float:
    """S^+_r u(x) = max over the discrete d_A-sphere of radius r of (u(z) - u(x))/r, x the source."""
    if u.grid != dist.grid:
        raise GridError("field and distance live on different grids")
    sh = dist.shell(r, half_width)
    if not sh.any():
        raise GridError(f"empty distance shell at r={r:g}")
    return float((u.values[sh] - u.values[dist.source]).max() / r)


def slope_tolerance(lip: float, r: float, dist: DistanceField) -> float:
    """Error allowance for comparing slopes: shell width plus stencil metrication."""
    return lip * (shell_half_width(dist.grid) / r + dist.tolerance)


@dataclass(frozen=True)
class LipEstimate:
    value: float
    shell: float
    per_shell: dict


def lip_at(u: ScalarField, dist: DistanceField, shells=(2, 3, 4)) -> LipEstimate:
    """max over the shells r = k*h of max |u(z) - u(x)| / d_A(z, x)."""
    h = dist.grid.h
    per = {}
    u0 = u.values[dist.source]
    for k in shells:
        sh = dist.shell(k * h)
        if not sh.any():
            raise GridError(f"empty distance shell at r={k}h")
        per[k * h] = float((np.abs(u.values[sh] - u0) / dist.values[sh]).max())
    best = max(per, key=per.get)
    return LipEstimate(per[best], best, per)


# -- blow-up -----------------------------------------------------------------------------


@dataclass
class BlowupTrace:
    center: tuple[float, float]
    radii: np.ndarray
    slopes: np.ndarray  # (k, 2)
    excess: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        if len(r) > 1 and not np.all(np.diff(r) < 0):
            raise ValueError("radius ladder must be strictly decreasing")
        if np.any(np.asarray(self.excess) < 0):
            raise ValueError("excess must be non-negative")

    @property
    def pairwise(self) -> np.ndarray:
        e = self.slopes
        return np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)

    @property
    def consecutive(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.slopes, axis=0), axis=-1)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "e1", "e2", "excess"])
        for r, e, x in zip(self.radii, self.slopes, self.excess):
            w.writerow([repr(float(r)), repr(float(e[0])), repr(float(e[1])), repr(float(x))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text


def euclidean_ball(grid: Grid2D, node, r: float) -> np.ndarray:
    P = grid.points - grid.points[node]
    return np.hypot(P[..., 0], P[..., 1]) <= r * (1 + 1e-12)


def blowup_trace(u: ScalarField, x, ladder) -> BlowupTrace:
    """Least-squares slopes of u on B(x, r) for each r, with sup-norm excess."""
    grid = u.grid
    node = _node(grid, x)
    radii = np.asarray(ladder, float)
    if radii.ndim != 1 or len(radii) == 0:
        raise ValueError("ladder must be a nonempty 1d sequence")
    if len(radii) > 1 and not np.all(np.diff(radii) < 0):
        raise ValueError("radius ladder must be strictly decreasing")
    xc = grid.points[node]
    lo = np.array([grid.x[0], grid.y[0]])
    hi = np.array([grid.x[-1], grid.y[-1]])
    if np.any(xc - radii[0] < lo - 1e-12) or np.any(xc + radii[0] > hi + 1e-12):
        raise GridError(f"ball of radius {radii[0]:g} around {tuple(xc)} leaves the domain")
    u0 = u.values[node]
    slopes, excess = [], []
    for r in radii:
        m = euclidean_ball(grid, node, r)
        if m.sum() < 3:
            raise GridError(f"radius {r:g} resolves fewer than 3 nodes")
        Y = grid.points[m] - xc
        X = np.column_stack([np.ones(len(Y)), Y])
        coef, *_ = np.linalg.lstsq(X, u.values[m], rcond=None)
        e = coef[1:]
        slopes.append(e)
        excess.append(float(np.abs(u.values[m] - u0 - Y @ e).max() / r))
    return BlowupTrace(tuple(float(v) for v in xc), radii, np.array(slopes), np.array(excess))


def normalization_ratios(cf: CoefficientField, e: np.ndarray, lip: float, node) -> dict:
    """H(x, e)/Lip and sqrt(H(x, e))/Lip; which one should be 1 is left open."""
    A = cf.values[node]
    H = float(_quad(np.asarray(e, float), A))
    if lip == 0:
        return {"H_over_lip": math.nan, "sqrtH_over_lip": math.nan}
    return {"H_over_lip": H / lip, "sqrtH_over_lip": math.sqrt(H) / lip}


# -- gradient localization -----------------------------------------------------------------


@dataclass
class GradientNearReport:
    x0: tuple[float, float] | None
    distance: float
    eta: float
    bound: float
    hypothesis_ok: bool
    sup_deviation: float

    @property
    def passed(self) -> bool | None:
        return bool(self.distance <= self.bound) if self.hypothesis_ok else None


def gradient_near(v: ScalarField, b, eta: float, C: float = 10.0, center=(0.0, 0.0),
                  radius: float = 1.0) -> GradientNearReport:
    """Point of the ball where Dv is closest to b, checked against 4*eta + C*h.

    The sup-bound hypothesis |v - <b, x - center>| <= eta on the ball is checked
    first; when it fails the report is flagged and nothing is asserted.
    """
    grid = v.grid
    b = np.asarray(b, float)
    P = grid.points - np.asarray(center, float)
    ball = np.hypot(P[..., 0], P[..., 1]) <= radius + 1e-12
    if not (ball & grid.interior_mask).any():
        raise GridError("ball contains no interior nodes")
    dev = float(np.abs(v.values - P @ b)[ball].max())
    ok = dev <= eta
    scan = ball & grid.interior_mask
    diff = np.linalg.norm(gradient(v).values - b, axis=-1)
    diff = np.where(scan, diff, np.inf)
    idx = np.unravel_index(np.argmin(diff), diff.shape)
    bound = 4 * eta + C * grid.h
    return GradientNearReport(tuple(float(c) for c in grid.points[idx]), float(diff[idx]), eta, bound, ok, dev)


# -- Lebesgue points ---------------------------------------------------------------------------


def lebesgue_deviation(u: ScalarField, r: float, dist: DistanceField, a=None, min_points: int = 10) -> float:
    """Mean of |Du - a|^2 over the intrinsic ball of radius r around the source.

    ``a`` defaults to the least-squares blow-up slope at the same radius.
    """
    ball = dist.ball(r) & u.grid.interior_mask
    if ball.sum() < min_points:
        raise GridError(f"intrinsic ball of radius {r:g} has only {int(ball.sum())} interior nodes")
    if a is None:
        a = blowup_trace(u, dist.source, [r]).slopes[0]
    Du = gradient(u).values[ball]
    return float(((Du - np.asarray(a, float)) ** 2).sum(-1).mean())


# -- absolute minimizers -------------------------------------------------------------------------


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` with a 4-neighbour outside it (or on the grid edge)."""
    m = np.asarray(mask, bool)
    pad = np.pad(m, 1, constant_values=False)
    inner = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return m & ~inner


@dataclass(frozen=True)
class MinimizerProbe:
    F_u: float
    F_v: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.F_u <= self.F_v + self.slack


def absolute_minimizer_probe(u: ScalarField, cf: CoefficientField, U: np.ndarray, v: ScalarField,
                             rel_slack: float = 1e-10) -> MinimizerProbe:
    """Compare sup over U of H(x, Du) for u and a competitor v agreeing on the boundary of U."""
    U = np.asarray(U, bool)
    edge = mask_boundary(U)
    if np.any(u.values[edge] != v.values[edge]) or np.any(u.values[~U] != v.values[~U]):
        raise ValueError("competitor must coincide with u on the boundary of U and outside it")
    Fu = sup_energy(u, cf, U)
    Fv = sup_energy(v, cf, U)
    return MinimizerProbe(Fu, Fv, rel_slack * max(1.0, abs(Fu)))
