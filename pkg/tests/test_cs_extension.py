import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from fracrobin import cs_extension as cx
from fracrobin.robin_calculus import robin_hessian
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis, fractional_params


@pytest.fixture(scope="module")
def small():
    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), math.pi / 32))
    basis = eigenbasis(domain, grid, 8)
    return grid, basis


def test_profile_half_is_exponential():
    z = np.linspace(0, 60, 6001)
    np.testing.assert_allclose(cx.bessel_profile(z, 0.5), np.exp(-z), rtol=0, atol=1e-15)


@given(st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_profile_shape(s):
    z = np.geomspace(1e-6, 40, 400)
    h = cx.bessel_profile(z, s)
    assert cx.bessel_profile(np.array([0.0]), s)[0] == 1.0
    assert np.all(np.diff(h) < 0) and np.all(h > 0)
    # small-z behaviour 1 - c z^{2s} with c = Gamma(1-s) / (Gamma(1+s) 4^s)
    c = gamma_fn(1 - s) / (gamma_fn(1 + s) * 4**s)
    # (1 - h) / z^{2s} = c + O(z^{2-2s}); eliminate the correction from two heights
    z = np.array([1e-3, 1e-4])
    f = (1 - cx.bessel_profile(z, s)) / z ** (2 * s)
    r = (z[1] / z[0]) ** (2 - 2 * s)
    assert (f[1] - r * f[0]) / (1 - r) == pytest.approx(c, rel=1e-5)


@given(st.floats(0.05, 0.95))
@settings(max_examples=20, deadline=None)
def test_kappa_normalises_trace(s):
    # -kappa lim y^{1-2s} d/dy h_s(y) = kappa 2s c = 1
    c = gamma_fn(1 - s) / (gamma_fn(1 + s) * 4**s)
    assert fractional_params(2, s).kappa * 2 * s * c == pytest.approx(1.0, rel=1e-12)


def test_cylinder_validation(small):
    grid, basis = small
    with pytest.raises(ValueError, match="Y_max"):
        cx.make_cylinder(grid, basis.lambda_1, y_max=1.0)
    with pytest.raises(ValueError, match="gamma"):
        cx.make_cylinder(grid, basis.lambda_1, gamma=1.0, s=0.3)
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=64, s=0.3)
    assert cyl.y[0] == 0.0 and cyl.y[-1] == pytest.approx(cyl.y_max)
    assert math.exp(-math.sqrt(basis.lambda_1) * cyl.y_max) <= 1e-10 * (1 + 1e-9)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.7])
def test_fd_extension_parseval_and_trace(small, s):
    grid, basis = small
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=128, s=s)
    a = 1.0 / np.arange(1, 11)
    fd = cx.extend(basis, s, cyl, coeffs=a, route="fd")
    target = float(np.sum(a**2 * basis.eigenvalues[:10] ** s))
    assert cx.extension_energy(fd) == pytest.approx(target, rel=5e-3)
    # equivalence of formulations: project the fd trace and undo (-Delta)^s
    tr = cx.neumann_trace(fd)
    phi = basis.values(grid.points, np.arange(10))
    b = phi.T @ tr * np.prod(grid.spacing)
    np.testing.assert_allclose(b / basis.eigenvalues[:10] ** s, a, atol=5e-3)


def test_maximum_principle(small):
    grid, basis = small
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=64, s=0.3)
    fd = cx.extend(basis, 0.3, cyl, coeffs=[1.0, 0.0, 0.0, 0.0, 0.0, 0.2], route="fd")
    assert np.all(fd.values[:, :-1] > 0)


def test_fd_extension_second_order():
    errs = []
    for h, K in ((math.pi / 32, 128), (math.pi / 64, 256)):
        domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), h))
        basis = eigenbasis(domain, grid, 2)
        cyl = cx.make_cylinder(grid, basis.lambda_1, K=K, s=0.3)
        fd = cx.extend(basis, 0.3, cyl, coeffs=[1.0], route="fd")
        sp = cx.extend(basis, 0.3, cyl, coeffs=[1.0])
        errs.append(np.max(np.abs(fd.values - sp.values)))
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_green_extension_flux(square, cylinders):
    _, grid, basis = square
    tb = np.array([0.0, 0.4])
    E = cx.extend(basis, 0.5, cylinders[0.5], source=tb)
    F = cx.lateral_flux(E)
    assert np.all(F.values[:, :-1] <= 0)
    key = {tuple(np.round(p, 12)): i for i, p in enumerate(F.points)}
    mirror = np.array([key[(round(-p[0], 12) + 0.0, round(p[1], 12))] for p in F.points])
    np.testing.assert_allclose(F.values[mirror], F.values, rtol=0, atol=1e-12 * np.abs(F.values).max())


def test_green_extension_trace_is_green(square, cylinders):
    from fracrobin.green_kernel import green_solve

    _, grid, basis = square
    tb = np.array([0.0, 0.4])
    E = cx.extend(basis, 0.5, cylinders[0.5], source=tb)
    x = grid.points[::97]
    G = green_solve(basis, tb, 0.5, points=x).values
    k = np.isfinite(G)
    np.testing.assert_allclose(E.values[::97, 0][k], G[k], rtol=1e-12)


@pytest.fixture(scope="module")
def u1_field(square, cylinders):
    _, _, basis = square
    tb = np.array([0.0, math.pi / 16])
    return tb, cx.solve_ui(basis, tb, 0, 0.3, cylinders[0.3])


def test_u1_properties(square, u1_field):
    _, grid, basis = square
    tb, U = u1_field
    u0 = U.values[:, 0]
    lat = grid.lattice_index.copy()
    lat[:, 0] = grid.mask.shape[0] - 1 - lat[:, 0]
    mirror = grid.index[tuple(lat.T)]
    np.testing.assert_allclose(u0[mirror], -u0, atol=1e-12 * np.abs(u0).max())
    assert abs(u0[grid.node_index(tb)]) <= 1e-6 * np.abs(u0).max()
    assert np.all(u0[grid.points[:, 0] < -1e-9] > 0)
    assert np.max(np.abs(cx.neumann_trace(U))) <= 1e-8 * np.abs(u0).max()
    g = cx.ui_trace_gradient(U, tb)
    H = robin_hessian(basis, tb, 0.3)
    assert g[0] < 0
    assert g[0] == pytest.approx(-0.5 * H[0, 0], rel=2e-2)


def test_u1_matches_translation_oracle(square, u1_field):
    _, grid, basis = square
    tb, U = u1_field
    h = grid.h
    x = np.array([[0.4, 0.2], [-0.7, -0.5], [1.0, 0.9]])
    x = np.round(x / h) * h
    idx = [grid.node_index(p) for p in x]
    exact = cx.ui_trace_oracle(basis, tb, x, 0.3)
    np.testing.assert_allclose(U.values[idx, 0], exact, rtol=1e-2)


def test_u1_representation(square, cylinders, u1_field):
    _, grid, basis = square
    tb, U = u1_field
    t = grid.points[grid.node_index(np.round(np.array([0.5, -0.3]) / grid.h) * grid.h)]
    rep = cx.u1_representation(basis, tb, t, 0.3, cylinders[0.3])
    assert rep == pytest.approx(U.values[grid.node_index(t), 0], rel=2e-2)
    assert abs(cx.u1_representation(basis, tb, tb, 0.3, cylinders[0.3])) <= 1e-10 * abs(rep)


def test_lateral_flux_refuses_lateral_data(u1_field):
    _, U = u1_field
    with pytest.raises(ValueError):
        cx.lateral_flux(U)


def test_solve_ui_requires_plane_point(square, cylinders):
    _, _, basis = square
    with pytest.raises(ValueError):
        cx.solve_ui(basis, (0.2, 0.0), 0, 0.5, cylinders[0.5])


def test_truncation_height_sensitivity(square, u1_field):
    _, grid, basis = square
    tb, U = u1_field
    tall = cx.make_cylinder(grid, basis.lambda_1, K=512, s=0.3, y_max=2 * U.cylinder.y_max)
    U2 = cx.solve_ui(basis, tb, 0, 0.3, tall)
    drift = np.max(np.abs(U2.values[:, 0] - U.values[:, 0])) / np.max(np.abs(U.values[:, 0]))
    assert drift < 1e-3


def test_exports(tmp_path, small):
    grid, basis = small
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=16, s=0.5)
    fld = cx.extend(basis, 0.5, cyl, coeffs=[1.0])
    cx.export_field(fld, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,y,w" and len(lines) == 1 + grid.n * 17
    cx.export_flux(cx.lateral_flux(fld), tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().startswith("face,index,y,flux")


def test_residual_check_catches_wrong_solution(small):
    grid, basis = small
    s = 0.3
    params = fractional_params(2, s)
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=64, s=s)
    u = basis.values(grid.points, [0])[:, 0]
    W = cx.solve_cylinder(cyl, s, params, bottom="dirichlet", data=u, basis=basis)
    c, m = cx._layer_coefficients(cyl.y, s)
    b = np.zeros_like(W)
    cx._check_residual(grid, W, b, c, m, "dirichlet", u, params)
    W[grid.n // 2, 5] *= 1 + 1e-6
    with pytest.raises(cx.SolverError):
        cx._check_residual(grid, W, b, c, m, "dirichlet", u, params)
