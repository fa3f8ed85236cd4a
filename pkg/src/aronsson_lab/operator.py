"""Pointwise Hamiltonian, Aronsson operator and regularized residual.

The Aronsson operator is <D_x(H(x, Du)), D_p H(x, Du)> for H(x, p) = <A(x)p, p>,
expanded by the product rule:

    4 <A Du, D^2u A Du> + 2 sum_k <d_k A Du, Du> (A Du)_k

With A = I this is exactly 4 times the infinity Laplacian <Du, D^2u Du>.
Note that the minimizer of the integral of exp(H/eps) satisfies
-A_H[u] - 2*eps*div(A Du) = 0 in this normalization (see ``solver``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField
from .grid import GridError, ScalarField, VectorField, divergence, gradient, hessian_array, interior


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


def _apply(Av: np.ndarray, p: np.ndarray) -> np.ndarray:
    """A p for packed symmetric A."""
    return np.stack([Av[..., 0] * p[..., 0] + Av[..., 1] * p[..., 1],
                     Av[..., 1] * p[..., 0] + Av[..., 2] * p[..., 1]], axis=-1)


def _quad(q: np.ndarray, S: np.ndarray) -> np.ndarray:
    """<q, S q> for packed symmetric S."""
    q1, q2 = q[..., 0], q[..., 1]
    return q1 * (S[..., 0] * q1 + S[..., 1] * q2) + q2 * (S[..., 1] * q1 + S[..., 2] * q2)


def hamiltonian(cf: CoefficientField, p: VectorField) -> ScalarField:
    _same_grid(cf, p)
    return ScalarField(p.grid, _quad(p.values, cf.values))


def _interior_parts(u: ScalarField, cf: CoefficientField):
    _same_grid(u, cf)
    Du = interior(gradient(u).values)
    D2u = np.moveaxis(hessian_array(u.values, u.grid.h), 2, -1)
    Av = interior(cf.values)
    return Du, D2u, Av


def infinity_laplacian(u: ScalarField) -> np.ndarray:
    """<Du, D^2u Du> at interior nodes."""
    Du = interior(gradient(u).values)
    D2u = np.moveaxis(hessian_array(u.values, u.grid.h), 2, -1)
    return _quad(Du, D2u)


def aronsson_operator(u: ScalarField, cf: CoefficientField) -> np.ndarray:
    """A_H[u] at interior nodes, shape ``(nx-2, ny-2)``."""
    Du, D2u, Av = _interior_parts(u, cf)
    q = _apply(Av, Du)
    main = _quad(q, D2u)
    dA = interior(cf.dA)  # (.., k, entry)
    transport = _quad(Du, dA[..., 0, :]) * q[..., 0] + _quad(Du, dA[..., 1, :]) * q[..., 1]
    return 4 * main + 2 * transport


def flux_divergence(u: ScalarField, cf: CoefficientField) -> np.ndarray:
    """div(A Du) at interior nodes via gradient then centered divergence."""
    _same_grid(u, cf)
    flux = _apply(cf.values, gradient(u).values)
    return divergence(VectorField(u.grid, flux))


def regularized_residual(u: ScalarField, cf: CoefficientField, eps: float) -> np.ndarray:
    """-A_H[u] - eps*div(A Du) at interior nodes."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    res = -aronsson_operator(u, cf)
    if eps:
        res = res - eps * flux_divergence(u, cf)
    return res


def sup_energy(u: ScalarField, cf: CoefficientField, mask: np.ndarray) -> float:
    """max of H(x, Du) over the masked interior nodes."""
    mask = np.asarray(mask, dtype=bool) & u.grid.interior_mask
    if not mask.any():
        raise GridError("sup_energy needs a nonempty interior mask")
    H = hamiltonian(cf, gradient(u)).values
    return float(H[mask].max())


@dataclass(frozen=True)
class OperatorSample:
    index: tuple[int, int]
    H: float
    aronsson: float
    residual: float
    eps: float


def sample(u: ScalarField, cf: CoefficientField, eps: float, index) -> OperatorSample:
    """All pointwise quantities at one interior node."""
    i, j = index
    if u.grid.is_boundary(i, j):
        raise GridError(f"operator is undefined at boundary node ({i}, {j})")
    H = hamiltonian(cf, gradient(u)).values[i, j]
    a = aronsson_operator(u, cf)[i - 1, j - 1]
    r = regularized_residual(u, cf, eps)[i - 1, j - 1]
    return OperatorSample((int(i), int(j)), float(H), float(a), float(r), float(eps))
