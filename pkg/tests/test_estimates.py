import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aronsson_lab.coefficients import constant, identity, smooth
from aronsson_lab.estimates import (
    BarrierSpec,
    EstimateReport,
    barrier_supersolution_check,
    barrier_terms_exact,
    barrier_values,
    boundary_holder_check,
    check_max_principle,
    flatness_check,
    flatness_phi,
    holder_constant,
    interior_gradient_bound,
    largest_barrier_eps,
)
from aronsson_lab.grid import Grid2D, GridError, ScalarField, interior
from aronsson_lab.operator import aronsson_operator
from aronsson_lab.scenario import aronsson_function
from aronsson_lab.solver import EpsSchedule, SolveConfig, continuation, default_subdomain, minimize


def _solve(data, cf, eps=0.05):
    return minimize(data, cf, SolveConfig(eps=eps))


@pytest.fixture(scope="module")
def aronsson_run():
    g = Grid2D.from_box(1, 2, 1, 2, 65)
    data = ScalarField.from_function(g, aronsson_function)
    cfg = SolveConfig(eps_schedule=EpsSchedule(values=(0.1, 0.03, 0.01, 0.003, 0.001)))
    return data, continuation(data, identity(g), cfg).solutions


def _V(grid):
    V = default_subdomain(grid) & grid.interior_mask
    V[:2] = V[-2:] = False
    V[:, :2] = V[:, -2:] = False
    return V


def test_report_json():
    r = EstimateReport("x", {"a": np.True_}, math.nan, math.inf, None)
    d = json.loads(r.to_json())
    assert d == {"name": "x", "hypothesis_flags": {"a": True}, "measured": None, "threshold": None, "pass": None}


def test_max_principle_examples(unit_grid):
    zero = ScalarField(unit_grid, np.zeros(unit_grid.shape))
    r = check_max_principle(_solve(zero, identity(unit_grid)), zero)
    assert r.measured == 0 and r.passed
    aff = ScalarField.from_function(unit_grid, lambda x, y: 0.6 * x - 0.3 * y + 0.2)
    r = check_max_principle(_solve(aff, constant(unit_grid, 1.1, 0.1, 0.9)), aff)
    assert r.passed and r.measured >= 0
    assert r.details["boundary_max"] == pytest.approx(0.8)


def test_max_principle_aronsson(aronsson_run):
    data, sols = aronsson_run
    for s in sols:
        r = check_max_principle(s, data)
        assert r.passed and r.measured > 0


def test_gradient_bound_examples(unit_grid):
    aff = ScalarField.from_function(unit_grid, lambda x, y: 0.6 * x - 0.3 * y)
    r = interior_gradient_bound(_solve(aff, constant(unit_grid, 1.1, 0.1, 0.9)), _V(unit_grid))
    assert r.measured == pytest.approx(math.hypot(0.6, 0.3), rel=1e-10)
    c = ScalarField(unit_grid, np.full(unit_grid.shape, 2.0))
    assert interior_gradient_bound(_solve(c, identity(unit_grid)), _V(unit_grid)).measured == 0
    bad = _V(unit_grid)
    bad[1, 8] = True
    with pytest.raises(GridError):
        interior_gradient_bound(_solve(c, identity(unit_grid)), bad)


def test_gradient_bound_aronsson(aronsson_run):
    data, sols = aronsson_run
    g = data.grid
    V = _V(g)
    X, Y = g.mesh()
    exact = np.hypot(4 / 3 * np.cbrt(X), 4 / 3 * np.cbrt(Y))[V].max()
    r = interior_gradient_bound(sols, V)
    assert abs(r.measured - exact) <= 0.05 * exact
    assert len(r.details["per_eps"]) == 5


def test_barrier_spec_validation(unit_grid):
    cf = identity(unit_grid)
    with pytest.raises(ValueError):
        BarrierSpec.for_field(cf, (0.5, 0), amplitude=1.0)
    with pytest.raises(ValueError):
        BarrierSpec.for_field(cf, (0.5, 0), gamma=1.0)
    with pytest.raises(GridError):
        BarrierSpec.for_field(cf, (0.5, 0.5))
    spec = BarrierSpec.for_field(cf, (0.5, 0))
    assert spec.gamma_tilde == pytest.approx(0.5)
    assert spec.delta0 == pytest.approx(0.5 / (2 * math.hypot(0.5, 1)))


@given(st.floats(1.0, 1.3), st.floats(0.01, 0.99))
def test_delta0_positive_with_gamma_tilde(L, gamma):
    spec = BarrierSpec((0, 0), 2.0, gamma, L, L, 1.5)
    if spec.gamma_tilde > 0:
        assert spec.delta0 > 0
        assert L < 2 ** 0.25 and gamma < 2 - L**4


def _mp_minus_aronsson(lam, gam, x):
    """-4 <Dw, D^2w Dw> for w = lam |x|^gam, differentiated numerically at high precision."""
    mpmath.mp.dps = 30
    w = lambda a, b: lam * mpmath.power(a * a + b * b, gam / 2)
    a, b = mpmath.mpf(x[0]), mpmath.mpf(x[1])
    wx, wy = mpmath.diff(w, (a, b), (1, 0)), mpmath.diff(w, (a, b), (0, 1))
    wxx, wxy, wyy = (mpmath.diff(w, (a, b), o) for o in ((2, 0), (1, 1), (0, 2)))
    return -4 * (wx * wx * wxx + 2 * wx * wy * wxy + wy * wy * wyy)


def test_barrier_symbolic_point():
    spec = BarrierSpec((0.0, 0.0), 1.0 + 1e-12, 0.5, 1.0, 1.0, 2.0)
    main, div = barrier_terms_exact(spec, (1.0, 0.0, 1.0), np.array([1.0, 0.0]))
    # 4 lam^3 gam^3 (1 - gam) |x|^(3 gam - 4) in the operator's normalization
    assert -main == pytest.approx(0.25, rel=1e-11)
    assert -main == pytest.approx(float(_mp_minus_aronsson(1.0, 0.5, (1.0, 0.0))), rel=1e-11)


@given(st.floats(-1, 1), st.floats(0.2, 2), st.floats(0.1, 0.9))
def test_barrier_closed_form_matches_high_precision(x, y, gamma):
    spec = BarrierSpec((0.0, 0.0), 2.0, gamma, 1.0, 1.0, 3.0)
    main, _ = barrier_terms_exact(spec, (1.0, 0.0, 1.0), np.array([x, y]))
    ref = float(_mp_minus_aronsson(2.0, gamma, (x, y)))
    assert -main == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_barrier_stencil_second_order():
    A = (1.05, 0.02, 0.97)
    errs = []
    for n in (65, 129, 257):
        g = Grid2D.from_box(1, 2, 1, 2, n)
        cf = constant(g, *A)
        spec = BarrierSpec.for_field(cf, (1.5, 1.0))
        vals = barrier_values(spec, cf, 0.01)
        far = interior(spec.distance(g) >= 0.25)
        main, div = barrier_terms_exact(spec, A, interior(g.points))
        exact = -main - 2 * 0.01 * div
        errs.append(np.abs(vals - exact)[far].max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 1.8


@pytest.mark.parametrize("gamma", [0.3, 0.5, 0.7])
def test_barrier_identity_passes(gamma):
    g = Grid2D.from_box(1, 2, 1, 2, 65)
    cf = identity(g)
    spec = BarrierSpec.for_field(cf, (1.5, 1.0), gamma=gamma)
    r = barrier_supersolution_check(spec, cf, 1e-3)
    assert r.passed and all(r.hypothesis_flags.values())
    assert np.nanmin(barrier_values(spec, cf, 1e-3)) >= 0


def test_largest_barrier_eps_is_sharp():
    g = Grid2D.from_box(1, 2, 1, 2, 33)
    cf = identity(g)
    spec = BarrierSpec.for_field(cf, (1.5, 1.0))
    e0 = largest_barrier_eps(spec, cf)
    assert 0 < e0 < math.inf
    assert barrier_supersolution_check(spec, cf, e0).passed
    assert not barrier_supersolution_check(spec, cf, 1.01 * e0).passed


def test_barrier_rejects_large_L():
    g = Grid2D.from_box(0, 1, 0, 1, 17)
    cf = constant(g, 1.6, 0.0, 0.7)
    spec = BarrierSpec.for_field(cf, (0.5, 0.0))
    assert spec.gamma_tilde <= 0
    with pytest.raises(ValueError, match="gamma_tilde"):
        barrier_supersolution_check(spec, cf, 1e-3)


def test_barrier_flags_lipA_above_delta0():
    g = Grid2D.from_box(-3, 3, -3, 3, 49)
    cf = smooth(g, 0.1)
    spec = BarrierSpec.for_field(cf, (0.0, -3.0))
    assert cf.lipA > spec.delta0
    r = barrier_supersolution_check(spec, cf, 1e-3)
    assert r.hypothesis_flags["lipA_below_delta0"] is False
    assert math.isfinite(r.measured)


@pytest.mark.parametrize("lam", [0.05, 0.1])
def test_barrier_smooth_presets_within_delta0(lam):
    g = Grid2D.from_box(1, 2, 1, 2, 65)
    cf = smooth(g, lam)
    spec = BarrierSpec.for_field(cf, (1.5, 1.0))
    assert cf.lipA <= spec.delta0
    assert barrier_supersolution_check(spec, cf, 1e-3).passed


def test_holder_examples(unit_grid):
    cf = constant(unit_grid, 1.05, 0.02, 0.97)
    spec = BarrierSpec.for_field(cf, (0.5, 0.0))
    zero = ScalarField(unit_grid, np.zeros(unit_grid.shape))
    assert holder_constant(zero, 0.0, spec) == 0
    b = np.array([0.6, -0.3])
    aff = ScalarField.from_function(unit_grid, lambda x, y: b[0] * x + b[1] * y)
    C = holder_constant(aff, float(b @ spec.y0), spec)
    diam = math.hypot(1, 1)
    assert C <= np.linalg.norm(b) * diam ** (1 - spec.gamma)
    # dense-sampling oracle for the continuum sup of |<b, z>| / |z|^gamma over the box
    t = np.linspace(0, 1, 2001)
    Z = np.stack(np.meshgrid(t - 0.5, t, indexing="ij"), -1)
    r = np.hypot(Z[..., 0], Z[..., 1])
    ok = r >= 2 * unit_grid.h
    ref = (np.abs(Z @ b) / np.where(ok, r, 1) ** spec.gamma)[ok].max()
    assert C == pytest.approx(ref, rel=1e-2)
    sols = [_solve(aff, cf, e) for e in (0.1, 0.05)]
    rep = boundary_holder_check(sols, aff, spec)
    assert rep.passed and rep.measured == pytest.approx(1.0, abs=1e-8)


def test_holder_aronsson_stable(aronsson_run):
    data, sols = aronsson_run
    spec = BarrierSpec.for_field(identity(data.grid), (1.5, 1.0))
    r = boundary_holder_check(sols, data, spec)
    assert r.passed and all(np.isfinite(r.details["C"]))


def test_flatness_exact_plane():
    g = Grid2D.from_box(-3, 3, -3, 3, 49)
    data = ScalarField.from_function(g, lambda x, y: y + 0 * x)
    rep = flatness_check(_solve(data, identity(g), 0.1), 0.1, identity(g))
    assert rep.sup == pytest.approx(0, abs=1e-10)
    assert rep.hypotheses_hold and rep.to_estimate(1.0).passed


def test_flatness_flags_small_domain(unit_grid):
    data = ScalarField.from_function(unit_grid, lambda x, y: y)
    rep = flatness_check(_solve(data, identity(unit_grid)), 0.1, identity(unit_grid))
    assert rep.hypothesis_flags["domain_contains_B3"] is False
    assert rep.to_estimate(1.0).passed is None


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_phi_vanishes_exactly_below_threshold(p1, p2):
    p = np.array([p1, p2])
    phi = flatness_phi(p)
    assert phi >= 0
    if p1 * p1 + p2 * p2 <= p2:
        assert phi == 0
    else:
        assert phi == pytest.approx((p1 * p1 + p2 * p2 - p2) ** 2)
