import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracrobin.green_kernel import (QuadratureError, free_green, free_green_heat, green_solve,
                                    mollified_coefficients, quadrature_spec, robin_value, translation_green)
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis, fractional_params

# Robin values on (-pi/2, pi/2)^2 from an independent method-of-images (small tau)
# plus eigen-sum (large tau) evaluation with adaptive quadrature.
IMAGE_ORACLE = {
    ((0.0, 0.0), 0.3): 0.03394553942064748,
    ((0.0, 0.0), 0.5): 0.08184434558159756,
    ((0.0, 0.0), 0.7): 0.1919008322039048,
    ((0.3, 0.4), 0.3): 0.03932367467578519,
    ((0.3, 0.4), 0.5): 0.09045059881669419,
    ((0.0, 0.4), 0.7): 0.1994661558639404,
}


@pytest.mark.parametrize("key", sorted(IMAGE_ORACLE))
def test_heat_route_matches_image_oracle(square, key):
    _, _, basis = square
    t, s = key
    rv = robin_value(basis, t, s)
    assert rv.value == pytest.approx(IMAGE_ORACLE[key], rel=1e-10)
    assert rv.error_estimate < 1e-8 * rv.value


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0, 7.0])
def test_free_kernel_identity(s, r):
    p = fractional_params(2, s)
    assert free_green_heat(r, p) == pytest.approx(p.c_fund * r ** (2 * s - 2), rel=1e-10)


def test_free_kernel_identity_one_dimension():
    p = fractional_params(1, 0.3)
    assert free_green_heat(1.3, p) == pytest.approx(p.c_fund * 1.3 ** (2 * 0.3 - 1), rel=1e-10)


@pytest.mark.parametrize("t, s", [((0.0, 0.0), 0.5), ((0.3, 0.4), 0.3)])
def test_extrapolation_oracle_agrees(square, t, s):
    _, _, basis = square
    heat = robin_value(basis, t, s).value
    ex = robin_value(basis, t, s, route="extrapolation").value
    assert ex == pytest.approx(heat, rel=1e-3)


def test_green_symmetry_and_positivity(square):
    _, _, basis = square
    t, x = np.array([0.2, -0.3]), np.array([-0.5, 0.4])
    g1 = green_solve(basis, t, 0.5, points=x[None, :]).values[0]
    g2 = green_solve(basis, x, 0.5, points=t[None, :]).values[0]
    assert g1 > 0
    assert g1 == pytest.approx(g2, rel=1e-8)


def test_green_near_pole_matches_free_minus_robin(square):
    # G(x, t) = G_free(x, t) - R(t) + o(1) as x -> t
    _, _, basis = square
    s, t = 0.5, np.array([0.0, 0.2])
    p = fractional_params(2, s)
    x = t + np.array([0.0, 0.05])
    G = green_solve(basis, t, s, points=x[None, :]).values[0]
    R = robin_value(basis, t, s).value
    assert free_green(x, t, p) - G == pytest.approx(R, rel=2e-2)


def test_translation_green_is_odd_for_plane_source(square):
    _, _, basis = square
    tb = np.array([0.0, 0.3])
    x = np.array([[0.4, 0.1], [-0.4, 0.1]])
    u = translation_green(basis, x, tb, 0.5, 0)
    assert u[0] == pytest.approx(-u[1], rel=1e-10)
    assert u[1] > 0


def test_insufficient_modes_raise(square):
    domain, grid, _ = square
    coarse = eigenbasis(domain, grid, 20)
    with pytest.raises(QuadratureError, match="raise J"):
        quadrature_spec(coarse, np.zeros(2))


def test_points_too_close_to_boundary_rejected(square):
    _, _, basis = square
    with pytest.raises(ValueError, match="grid spacings"):
        robin_value(basis, (math.pi / 2 - 0.05, 0.0), 0.5)


@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2), st.sampled_from([0.3, 0.5, 0.7]))
@settings(max_examples=25, deadline=None)
def test_robin_square_symmetries(t1, t2, s):
    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), math.pi / 64))
    basis = eigenbasis(domain, grid, 200)
    R = robin_value(basis, (t1, t2), s).value
    assert R > 0
    for q in ((-t1, t2), (t1, -t2), (t2, t1)):
        assert robin_value(basis, q, s).value == pytest.approx(R, rel=1e-12)


def test_robin_increases_towards_boundary(square):
    _, _, basis = square
    vals = [robin_value(basis, (0.0, y), 0.5).value for y in (0.0, 0.4, 0.8, 1.2)]
    assert np.all(np.diff(vals) > 0)


def test_ellipse_robin_routes_agree(ellipse):
    _, _, basis = ellipse
    heat = robin_value(basis, (0.0, 0.0), 0.3).value
    ex = robin_value(basis, (0.0, 0.0), 0.3, route="extrapolation").value
    assert ex == pytest.approx(heat, rel=1e-4)


@pytest.fixture(scope="module")
def interval():
    domain, grid = build_domain(DomainSpec("interval", (math.pi / 2,), math.pi / 64))
    return eigenbasis(domain, grid, 2000)


def test_interval_spectral_matches_mollified_limit(interval):
    s, t, x = 0.25, np.zeros(1), np.array([[0.5]])
    G = green_solve(interval, t, s, points=x).values[0]
    m = [green_solve(interval, t, s, route="mollified", rho=r, points=x).values[0] for r in (0.1, 0.05, 0.025)]
    r1 = [(4 * m[1] - m[0]) / 3, (4 * m[2] - m[1]) / 3]
    assert (16 * r1[1] - r1[0]) / 15 == pytest.approx(G, rel=5e-3)
    assert green_solve(interval, t, s, points=x, summation="damped").values[0] == pytest.approx(G, rel=1e-6)


def test_mollified_coefficients_invert(interval):
    from fracrobin.spectral_basis import apply_fractional

    eta, c = mollified_coefficients(interval, np.zeros(1), 0.1, 0.25)
    np.testing.assert_allclose(apply_fractional(interval, c, 0.25), eta, atol=1e-14)


def test_mollified_rejects_large_radius(interval):
    with pytest.raises(ValueError, match="rho"):
        green_solve(interval, np.zeros(1), 0.25, route="mollified", rho=1.0)


def test_mode_count_stability():
    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), math.pi / 64))
    a = robin_value(eigenbasis(domain, grid, 200), (0.3, 0.4), 0.5).value
    b = robin_value(eigenbasis(domain, grid, 400), (0.3, 0.4), 0.5).value
    assert abs(a - b) <= 1e-8 * b


@pytest.mark.parametrize("t", [(0.0, 0.0), (0.9, -1.1)])
def test_heat_integrand_nonnegative(square, t):
    _, _, basis = square
    tau = np.geomspace(1e-4, 40, 200)
    diff = basis.free_heat(tau) - basis.heat_diag(tau, np.array(t))
    assert np.all(diff >= -1e-12 * basis.free_heat(tau))
