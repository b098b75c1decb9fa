"""Extension of fractional problems to the half-cylinder Omega x (0, inf).

The extension w of u solves -div(y^{1-2s} grad w) = 0 with w(., 0) = u and
w = 0 on the lateral boundary; its weighted conormal derivative
-kappa_s lim y^{1-2s} dw/dy returns (-Delta)^s u.  Two discretisations are
provided: a semi-analytic one (Bessel profile / heat-kernel representation)
and a finite-difference solver on a graded y-mesh.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, kve

from .green_kernel import _tau_window, check_interior, heat_green, translation_green
from .quadrature import face_rule, graded_mesh, log_tau_rule, weight_moments, weighted_trapezoid
from .spectral_basis import FractionalParams, Grid, GridBasis, arm_rhs, fractional_params

TRUNCATION_TOL = 1e-10
RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    """The cylinder solve failed its residual check."""


def bessel_profile(z, s: float) -> np.ndarray:
    """h_s(z) = 2^{1-s}/Gamma(s) z^s K_s(z), with h_s(0) = 1.

    Evaluated in log form with the exponentially scaled K so that large z
    underflows gracefully to zero instead of overflowing.
    """
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    pos = z > 0
    zp = z[pos]
    with np.errstate(divide="ignore"):
        logh = (1 - s) * math.log(2) - gammaln(s) + s * np.log(zp) + np.log(kve(s, zp)) - zp
    out[pos] = np.exp(logh)
    return out


# --------------------------------------------------------------------------
# cylinder and fields
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Cylinder:
    grid: Grid
    y: np.ndarray
    y_max: float
    K: int
    gamma: float

    @property
    def domain(self):
        return self.grid.domain


def make_cylinder(grid: Grid, lambda_1: float, K: int = 256, gamma: float = 2.0,
                  y_max: float | None = None, s: float | None = None) -> Cylinder:
    """Truncated cylinder with graded mesh y_k = Y (k/K)^gamma."""
    floor = max(8.0, math.log(1 / TRUNCATION_TOL)) / math.sqrt(lambda_1)
    y_max = floor if y_max is None else float(y_max)
    if math.exp(-math.sqrt(lambda_1) * y_max) > TRUNCATION_TOL * (1 + 1e-9):
        raise ValueError(f"Y_max={y_max:.4g} leaves e^(-sqrt(lambda_1) Y) above {TRUNCATION_TOL:g}")
    if s is not None and abs(s - 0.5) > 1e-12 and gamma < 2:
        raise ValueError("grading exponent gamma must be at least 2 when s != 1/2")
    return Cylinder(grid=grid, y=graded_mesh(y_max, K, gamma), y_max=y_max, K=K, gamma=gamma)


@dataclass
class ExtField:
    cylinder: Cylinder
    values: np.ndarray  # (n_nodes, K + 1)
    s: float
    provenance: str
    lateral: np.ndarray | None = None  # Dirichlet data on the cut arms, (n_arms, K + 1)
    coeffs: np.ndarray | None = field(default=None, repr=False)
    basis: object = field(default=None, repr=False)

    def trace(self) -> np.ndarray:
        return self.values[:, 0]


@dataclass(frozen=True)
class FluxField:
    points: np.ndarray  # (B, N) lateral sample points
    normals: np.ndarray  # (B, N)
    weights: np.ndarray  # (B,) surface quadrature weights
    face: np.ndarray  # (B,) face tag
    y: np.ndarray
    values: np.ndarray  # (B, K + 1) outward normal derivative


# --------------------------------------------------------------------------
# x-operator diagonalisation
# --------------------------------------------------------------------------
class _SeparableTransform:
    """Discrete sine transform diagonalising the box five-point Laplacian."""

    def __init__(self, grid: Grid):
        self.shape = tuple(len(ax) - 2 for ax in grid.axes)
        self.S, mus = [], []
        for n, h in zip(self.shape, grid.spacing):
            j = np.arange(1, n + 1)
            self.S.append(math.sqrt(2 / (n + 1)) * np.sin(np.outer(j, j) * np.pi / (n + 1)))
            mus.append(4 / h**2 * np.sin(j * np.pi / (2 * (n + 1))) ** 2)
        if len(mus) == 1:
            self.eigenvalues = mus[0]
        else:
            self.eigenvalues = (mus[0][:, None] + mus[1][None, :]).ravel()

    def apply(self, X):
        m = X.shape[1]
        if len(self.shape) == 1:
            return self.S[0] @ X
        Y = X.reshape(self.shape + (m,))
        Y = np.einsum("ai,ijm->ajm", self.S[0], Y)
        Y = np.einsum("bj,ajm->abm", self.S[1], Y)
        return Y.reshape(-1, m)

    forward = backward = apply


class _DenseTransform:
    def __init__(self, basis: GridBasis):
        self.V = basis.vectors
        self.eigenvalues = basis.eigenvalues

    def forward(self, X):
        return self.V.T @ X

    def backward(self, X):
        return self.V @ X


def _transform(cylinder: Cylinder, basis=None):
    grid = cylinder.grid
    if grid.domain.kind in ("interval", "rectangle"):
        return _SeparableTransform(grid)
    if isinstance(basis, GridBasis) and basis.grid is grid:
        return _DenseTransform(basis)
    return _DenseTransform(GridBasis(grid.domain, grid, 1, refine=False))


def _layer_coefficients(y, s):
    c = 2 * s / (y[1:] ** (2 * s) - y[:-1] ** (2 * s))
    m = weight_moments(y, 1 - 2 * s)
    return c, m


def _thomas(lower, diag, upper, rhs):
    """Batched tridiagonal solve along axis 0 (diag/rhs shaped (L, M))."""
    L = diag.shape[0]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[0] = upper[0] / diag[0] if L > 1 else 0.0
    dp[0] = rhs[0] / diag[0]
    for k in range(1, L):
        den = diag[k] - lower[k - 1] * cp[k - 1]
        if k < L - 1:
            cp[k] = upper[k] / den
        dp[k] = (rhs[k] - lower[k - 1] * dp[k - 1]) / den
    x = np.empty_like(rhs)
    x[-1] = dp[-1]
    for k in range(L - 2, -1, -1):
        x[k] = dp[k] - cp[k] * x[k + 1]
    return x


def solve_cylinder(cylinder: Cylinder, s: float, params: FractionalParams, *,
                   bottom: str, data: np.ndarray, lateral: np.ndarray | None = None,
                   basis=None) -> np.ndarray:
    """Finite-difference solve of -div(y^{1-2s} grad w) = 0 on the truncated cylinder.

    ``bottom='neumann'`` prescribes the conormal trace (``data`` = f, so that
    -kappa lim y^{1-2s} w_y = f); ``bottom='dirichlet'`` prescribes w(., 0).
    ``lateral`` holds Dirichlet values on the cut arms per y-level.  The cap
    at y = Y is homogeneous.  Returns w on nodes x levels.
    """
    grid, y = cylinder.grid, cylinder.y
    K = cylinder.K
    n = grid.n
    c, m = _layer_coefficients(y, s)
    T = _transform(cylinder, basis)
    mu = T.eigenvalues
    b = arm_rhs(grid, lateral) if lateral is not None else np.zeros((n, K + 1))
    data = np.asarray(data, dtype=float)
    if bottom == "neumann":
        levels = np.arange(0, K)
    elif bottom == "dirichlet":
        levels = np.arange(1, K)
    else:
        raise ValueError("bottom must be 'neumann' or 'dirichlet'")
    rhs = b[:, levels] * m[levels]
    if bottom == "neumann":
        rhs[:, 0] += data / params.kappa
    else:
        rhs[:, 0] += c[0] * data
    Rh = T.forward(rhs).T  # (L, modes)
    diag = m[levels, None] * mu[None, :]
    up = np.zeros(len(levels))
    lo_c = np.zeros(len(levels))
    for r, k in enumerate(levels):
        up[r] = c[k]  # coupling to level k + 1
        lo_c[r] = c[k - 1] if k >= 1 else 0.0
    diag = diag + (up + lo_c)[:, None]
    off = -up[:-1]
    Wh = _thomas(off[:, None], diag, off[:, None], Rh)
    W = np.zeros((n, K + 1))
    W[:, levels] = T.backward(Wh.T)
    if bottom == "dirichlet":
        W[:, 0] = data
    _check_residual(grid, W, b, c, m, bottom, data, params)
    return W


def _check_residual(grid, W, b, c, m, bottom, data, params):
    """Componentwise backward error: each row residual over the sum of its absolute terms."""
    A = grid.laplacian()
    AW = A @ W
    flux = c * (W[:, 1:] - W[:, :-1])  # (n, K)
    res = m * (AW - b)
    res[:, :-1] -= flux
    res[:, 1:] += flux
    size = m * (abs(A) @ np.abs(W) + np.abs(b))
    cw = c * (np.abs(W[:, 1:]) + np.abs(W[:, :-1]))
    size[:, :-1] += cw
    size[:, 1:] += cw
    if bottom == "neumann":
        res[:, 0] -= data / params.kappa
        size[:, 0] += np.abs(data) / params.kappa
        r, size = res[:, :-1], size[:, :-1]
    else:
        r, size = res[:, 1:-1], size[:, 1:-1]
    rel = float(np.max(np.abs(r) / np.maximum(size, 1e-300)))
    if not rel <= RESIDUAL_TOL:
        raise SolverError(f"cylinder solve residual {rel:.2e} exceeds {RESIDUAL_TOL:g}")


# --------------------------------------------------------------------------
# extensions
# --------------------------------------------------------------------------
def extend(basis, s: float, cylinder: Cylinder, coeffs=None, source=None, route: str = "spectral",
           params: FractionalParams | None = None) -> ExtField:
    """Extension of u = sum a_j phi_j (``coeffs``) or of G(., source)."""
    params = params or fractional_params(basis.N, s)
    if (coeffs is None) == (source is None):
        raise ValueError("give exactly one of coeffs or source")
    pts = cylinder.grid.points
    if source is not None:
        if route != "spectral":
            raise ValueError("Green extensions are built on the spectral route")
        vals = heat_green(basis, source, s, pts, cylinder.y, params)
        return ExtField(cylinder, vals, s, f"spectral(green@{tuple(map(float, source))})", basis=basis)
    a = np.asarray(coeffs, dtype=float)
    modes = np.arange(len(a))
    phi = basis.values(pts, modes)
    if route == "spectral":
        lam = basis.eigenvalues[: len(a)]
        prof = bessel_profile(np.sqrt(lam)[:, None] * cylinder.y[None, :], s)
        vals = phi @ (a[:, None] * prof)
        return ExtField(cylinder, vals, s, "spectral(coeffs)", coeffs=a, basis=basis)
    if route == "fd":
        u = phi @ a
        W = solve_cylinder(cylinder, s, params, bottom="dirichlet", data=u, basis=basis)
        return ExtField(cylinder, W, s, "fd_solve(dirichlet)", coeffs=a, basis=basis)
    raise ValueError(f"unknown extension route {route!r}")


# --------------------------------------------------------------------------
# traces, fluxes, energy
# --------------------------------------------------------------------------
def neumann_trace(fld: ExtField, s: float | None = None, params: FractionalParams | None = None,
                  exact: bool = False) -> np.ndarray:
    """Conormal trace -kappa lim y^{1-2s} dw/dy at the base nodes.

    The fd value is the residual of the bottom row of the discrete equation:
    kappa [c_{1/2}(w_0 - w_1) + m_0 (A w_0 - b_0)], where c_{1/2} is the exact
    flux coefficient of the layer w = A + B y^{2s}.
    """
    s = fld.s if s is None else s
    params = params or fractional_params(fld.cylinder.grid.N, s)
    if exact:
        if fld.coeffs is None or fld.basis is None:
            raise ValueError("exact trace needs a coefficient-built field")
        a = fld.coeffs
        phi = fld.basis.values(fld.cylinder.grid.points, np.arange(len(a)))
        return phi @ (a * fld.basis.eigenvalues[: len(a)] ** s)
    y = fld.cylinder.y
    if y[1] > 0.05 * y[-1]:
        raise ValueError("first y-cell is too coarse for the conormal trace")
    c, m = _layer_coefficients(y, s)
    w0, w1 = fld.values[:, 0], fld.values[:, 1]
    Aw0 = fld.cylinder.grid.laplacian() @ w0
    b0 = arm_rhs(fld.cylinder.grid, fld.lateral[:, :1])[:, 0] if fld.lateral is not None else 0.0
    return params.kappa * (c[0] * (w0 - w1) + m[0] * (Aw0 - b0))


def extension_energy(fld: ExtField, s: float | None = None, params: FractionalParams | None = None) -> float:
    """kappa * int y^{1-2s} |grad w|^2 with the same discrete form as the solver."""
    s = fld.s if s is None else s
    params = params or fractional_params(fld.cylinder.grid.N, s)
    grid = fld.cylinder.grid
    c, m = _layer_coefficients(fld.cylinder.y, s)
    W = fld.values
    AW = grid.laplacian() @ W
    cell = float(np.prod(grid.spacing))
    e = np.sum(m * np.sum(W * AW, axis=0)) + np.sum(c * np.sum((W[:, 1:] - W[:, :-1]) ** 2, axis=0))
    return float(params.kappa * cell * e)


def _box_lateral_nodes(grid: Grid):
    """Boundary lattice nodes of a box grid with their two inward neighbours."""
    out = []
    shape = grid.mask.shape
    for ax in range(grid.N):
        for side, sgn in ((0, -1), (shape[ax] - 1, 1)):
            others = [range(1, shape[o] - 1) for o in range(grid.N) if o != ax]
            for rest in np.ndindex(*[len(r) for r in others]):
                lat = [0] * grid.N
                lat[ax] = side
                oi = 0
                for o in range(grid.N):
                    if o != ax:
                        lat[o] = rest[oi] + 1
                        oi += 1
                in1 = list(lat)
                in1[ax] -= sgn
                in2 = list(in1)
                in2[ax] -= sgn
                p = np.array([grid.axes[i][lat[i]] for i in range(grid.N)])
                nrm = np.zeros(grid.N)
                nrm[ax] = sgn
                wgt = 1.0
                for o in range(grid.N):
                    if o != ax:
                        wgt *= grid.spacing[o]
                out.append((p, nrm, wgt, 2 * ax + (side != 0), grid.index[tuple(in1)], grid.index[tuple(in2)]))
    return out


def _arm_flux_rows(grid: Grid):
    """Well-conditioned cut arms for second-order one-sided normal derivatives.

    Returns arm indices, node indices of the inner neighbours and the weights
    of d/de at the boundary point in terms of (w_node, w_inner).
    """
    arms = grid.arms
    e = np.zeros((len(arms.axis), grid.N))
    e[np.arange(len(e)), arms.axis] = arms.direction
    cosang = np.sum(e * arms.normal, axis=1)
    keep = []
    inner = []
    for a in range(len(arms.axis)):
        if cosang[a] < 1 / math.sqrt(2) - 1e-12:
            continue
        off = np.zeros(grid.N, dtype=int)
        off[arms.axis[a]] = -arms.direction[a]
        j = grid.neighbour(arms.node[a], off)
        if j < 0:
            continue
        keep.append(a)
        inner.append(j)
    keep = np.array(keep)
    th = arms.theta[keep]
    h = np.array(grid.spacing)[arms.axis[keep]]
    w_node = -(1 + th) / (th * h)
    w_inner = th / ((1 + th) * h)
    return keep, np.array(inner), w_node, w_inner, cosang[keep]


def _ellipse_weights(points, domain):
    """Periodic trapezoid arclength weights for boundary points ordered by angle."""
    a, b = domain.half_extents
    ang = np.arctan2(points[:, 1] / b, points[:, 0] / a)
    order = np.argsort(ang, kind="stable")
    th = ang[order]
    gap = np.diff(np.concatenate([th, [th[0] + 2 * np.pi]]))
    half = 0.5 * (gap + np.roll(gap, 1))
    speed = np.sqrt((a * np.sin(th)) ** 2 + (b * np.cos(th)) ** 2)
    w = np.empty(len(points))
    w[order] = half * speed
    return w


def lateral_flux(fld: ExtField) -> FluxField:
    """Outward normal derivative of a laterally vanishing field on the lateral samples."""
    if fld.lateral is not None and np.any(fld.lateral != 0):
        raise ValueError("lateral flux is only defined for fields vanishing on the lateral boundary")
    grid = fld.cylinder.grid
    W = fld.values
    if grid.domain.kind in ("interval", "rectangle"):
        rows = _box_lateral_nodes(grid)
        pts = np.array([r[0] for r in rows])
        nrm = np.array([r[1] for r in rows])
        wgt = np.array([r[2] for r in rows])
        face = np.array([r[3] for r in rows])
        i1 = np.array([r[4] for r in rows])
        i2 = np.array([r[5] for r in rows])
        hs = np.array([grid.spacing[int(np.argmax(np.abs(n)))] for n in nrm])
        vals = (-4 * W[i1] + W[i2]) / (2 * hs[:, None])
        return FluxField(pts, nrm, wgt, face, fld.cylinder.y, vals)
    keep, inner, wn, wi, cosang = _arm_flux_rows(grid)
    arms = grid.arms
    de = wn[:, None] * W[arms.node[keep]] + wi[:, None] * W[inner]
    vals = de / cosang[:, None]
    pts = arms.point[keep]
    return FluxField(pts, arms.normal[keep], _ellipse_weights(pts, grid.domain),
                     np.zeros(len(keep), dtype=int), fld.cylinder.y, vals)


# --------------------------------------------------------------------------
# boundary-integral route
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LateralRule:
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    face: np.ndarray


def lateral_rule(domain, n_face: int = 96) -> LateralRule:
    """Gauss-Legendre points on each face of a box (endpoints for an interval)."""
    if domain.kind == "interval":
        a = domain.half_extents[0]
        return LateralRule(np.array([[-a], [a]]), np.array([[-1.0], [1.0]]), np.ones(2), np.array([0, 1]))
    if domain.kind != "rectangle":
        raise ValueError("Gauss-Legendre lateral rules are built for boxes")
    a, b = domain.half_extents
    pts, nrm, wts, face = [], [], [], []
    for ax, (ext, oext) in enumerate(((a, b), (b, a))):
        u, w = face_rule(n_face, -oext, oext)
        for k, sgn in enumerate((-1.0, 1.0)):
            p = np.zeros((n_face, 2))
            p[:, ax] = sgn * ext
            p[:, 1 - ax] = u
            nv = np.zeros((n_face, 2))
            nv[:, ax] = sgn
            pts.append(p)
            nrm.append(nv)
            wts.append(w)
            face.append(np.full(n_face, 2 * ax + k))
    return LateralRule(np.concatenate(pts), np.concatenate(nrm), np.concatenate(wts), np.concatenate(face))


def _heat_flux_terms(basis, t, s, rule: LateralRule, dt=None):
    """Per-tau contributions Q[q, b] with F(b, y) = sum_q e^{-y^2/4 tau_q} Q[q, b]."""
    tau_star, tau_max = _tau_window(basis, t)
    tau, w = log_tau_rule(tau_star, tau_max, 32)
    wt = w * tau ** (s - 1) / math.gamma(s)
    Q = np.zeros((len(tau), len(rule.points)))
    for ax in range(basis.N):
        e = tuple(int(k == ax) for k in range(basis.N))
        sel = rule.normals[:, ax] != 0
        if not sel.any():
            continue
        k = basis.heat_kernel(tau, rule.points[sel], t, dx=e, dt=dt)
        Q[:, sel] += k * rule.normals[sel, ax]
    return tau, Q * wt[:, None]


def boundary_flux(basis, t, s, cylinder: Cylinder | None, rule: LateralRule, y=None, dt=None) -> FluxField:
    """dE[G_t]/dnu on the lateral rule by the heat representation (tensor bases)."""
    y = cylinder.y if y is None else y
    tau, Q = _heat_flux_terms(basis, t, s, rule, dt)
    Y = np.exp(-np.square(y)[:, None] / (4 * tau[None, :]))
    return FluxField(rule.points, rule.normals, rule.weights, rule.face, y, (Y @ Q).T)


def _y_weights(y, s):
    return weighted_trapezoid(y, 1 - 2 * s)


def _pair_integral(tauA, QA, tauB, QB, s):
    """Exact int_0^inf y^{1-2s} F_A F_B dy for heat-represented fluxes."""
    T1, T2 = np.meshgrid(tauA, tauB, indexing="ij")
    Ky = 0.5 * math.gamma(1 - s) * (4 * T1 * T2 / (T1 + T2)) ** (1 - s)
    return np.einsum("an,ab,bn->n", QA, Ky, QB)


def _check_boundary_point(basis, t, cylinder):
    check_interior(basis, t)
    if cylinder is None:
        raise ValueError("boundary route needs a cylinder")


def robin_gradient_boundary(basis, t, s, cylinder: Cylinder, params: FractionalParams | None = None,
                            n_face: int = 96, y_rule: str = "trapezoid") -> np.ndarray:
    """grad R(t) = kappa int y^{1-2s} (dE[G_t]/dnu)^2 nu dsigma over the lateral boundary."""
    params = params or fractional_params(basis.N, s)
    t = np.asarray(t, dtype=float)
    _check_boundary_point(basis, t, cylinder)
    if isinstance(basis, GridBasis):
        F = grid_boundary_flux(basis, t, s, cylinder, params)
        I = F.values**2 @ _y_weights(cylinder.y, s)
        return params.kappa * (F.weights * I) @ F.normals
    rule = lateral_rule(basis.domain, n_face)
    if y_rule == "pair":
        tau, Q = _heat_flux_terms(basis, t, s, rule)
        I = _pair_integral(tau, Q, tau, Q, s)
    else:
        F = boundary_flux(basis, t, s, cylinder, rule)
        I = F.values**2 @ _y_weights(cylinder.y, s)
    return params.kappa * (rule.weights * I) @ rule.normals


def robin_hessian_boundary(basis, t, s, cylinder: Cylinder, params: FractionalParams | None = None,
                           n_face: int = 96, step: float | None = None) -> np.ndarray:
    """Hessian from 2 kappa int y^{1-2s} F nu_i d_{t_j}F.

    d_{t_j}F is a central difference with step ``step`` (default four grid
    spacings) improved by one Richardson level against half that step.
    """
    params = params or fractional_params(basis.N, s)
    t = np.asarray(t, dtype=float)
    _check_boundary_point(basis, t, cylinder)
    step = 4 * basis.spacing if step is None else step
    wy = _y_weights(cylinder.y, s)
    if isinstance(basis, GridBasis):
        flux = lambda p: grid_boundary_flux(basis, p, s, cylinder, params)
    else:
        rule = lateral_rule(basis.domain, n_face)
        flux = lambda p: boundary_flux(basis, p, s, cylinder, rule)
    F0 = flux(t)
    H = np.zeros((basis.N, basis.N))
    for j in range(basis.N):
        e = np.zeros(basis.N)
        e[j] = 1.0
        d = [(flux(t + hh * e).values - flux(t - hh * e).values) / (2 * hh) for hh in (step, step / 2)]
        dF = (4 * d[1] - d[0]) / 3
        I = (F0.values * dF) @ wy
        H[:, j] = 2 * params.kappa * (F0.weights * I) @ F0.normals
    return H


def grid_boundary_flux(basis: GridBasis, t, s, cylinder: Cylinder, params) -> FluxField:
    """Lateral flux of the discrete Green extension at well-conditioned cut arms."""
    grid = basis.grid
    keep, inner, wn, wi, cosang = _arm_flux_rows(grid)
    arms = grid.arms
    nodes = np.unique(np.concatenate([arms.node[keep], inner]))
    E = heat_green(basis, t, s, grid.points[nodes], cylinder.y, params)
    pos = {int(k): r for r, k in enumerate(nodes)}
    En = E[[pos[int(k)] for k in arms.node[keep]]]
    Ei = E[[pos[int(k)] for k in inner]]
    vals = (wn[:, None] * En + wi[:, None] * Ei) / cosang[:, None]
    pts = arms.point[keep]
    return FluxField(pts, arms.normal[keep], _ellipse_weights(pts, grid.domain),
                     np.zeros(len(keep), dtype=int), cylinder.y, vals)


# --------------------------------------------------------------------------
# the auxiliary problem U_i
# --------------------------------------------------------------------------
def _check_plane(t, axis):
    if abs(float(t[axis])) > 1e-12:
        raise ValueError(f"point {tuple(t)} is not on the symmetry plane x_{axis + 1} = 0")


def _arm_gradient_datum(basis, t, s, cylinder, axis, params):
    """d/dx_axis E[G_t] at every cut-arm boundary point, per y-level."""
    grid = basis.grid if basis.grid is not None else cylinder.grid
    arms = cylinder.grid.arms
    if isinstance(basis, GridBasis):
        F = grid_boundary_flux(basis, t, s, cylinder, params)
        # interpolate dE/dnu from the well-conditioned arms to all arms by boundary angle
        a, b = grid.domain.half_extents
        ang_k = np.arctan2(F.points[:, 1] / b, F.points[:, 0] / a)
        ang_all = np.arctan2(arms.point[:, 1] / b, arms.point[:, 0] / a)
        order = np.argsort(ang_k, kind="stable")
        xa = np.concatenate([ang_k[order] - 2 * np.pi, ang_k[order], ang_k[order] + 2 * np.pi])
        out = np.empty((len(arms.node), len(cylinder.y)))
        for k in range(len(cylinder.y)):
            fv = F.values[order, k]
            out[:, k] = np.interp(ang_all, xa, np.concatenate([fv, fv, fv]))
        return out * arms.normal[:, axis][:, None]
    rule = LateralRule(arms.point, arms.normal, np.ones(len(arms.node)), np.zeros(len(arms.node), dtype=int))
    F = boundary_flux(basis, t, s, cylinder, rule)
    return F.values * arms.normal[:, axis][:, None]


def solve_ui(basis, t_bar, axis: int, s: float, cylinder: Cylinder,
             params: FractionalParams | None = None) -> ExtField:
    """U_i: lateral datum d_{x_i} E[G_t], zero conormal trace, decay at the cap."""
    params = params or fractional_params(basis.N, s)
    t_bar = np.asarray(t_bar, dtype=float)
    _check_plane(t_bar, axis)
    lat = _arm_gradient_datum(basis, t_bar, s, cylinder, axis, params)
    W = solve_cylinder(cylinder, s, params, bottom="neumann", data=np.zeros(cylinder.grid.n),
                       lateral=lat, basis=basis)
    return ExtField(cylinder, W, s, f"fd_solve(U{axis + 1})", lateral=lat, basis=basis)


def ui_trace_gradient(fld: ExtField, t) -> np.ndarray:
    """Gradient of the y = 0 trace: central differences at a node, else a bicubic spline (boxes)."""
    grid = fld.cylinder.grid
    u = fld.values[:, 0]
    t = np.asarray(t, dtype=float)
    try:
        k = grid.node_index(t)
    except ValueError:
        if grid.domain.kind != "rectangle":
            raise
        from scipy.interpolate import RectBivariateSpline

        x1, x2 = grid.axes[0][1:-1], grid.axes[1][1:-1]
        spl = RectBivariateSpline(x1, x2, u.reshape(len(x1), len(x2)), kx=3, ky=3)
        return np.array([spl(t[0], t[1], dx=1)[0, 0], spl(t[0], t[1], dy=1)[0, 0]])
    g = np.zeros(grid.N)
    for i in range(grid.N):
        e = np.zeros(grid.N, dtype=int)
        e[i] = 1
        jp, jm = grid.neighbour(k, e), grid.neighbour(k, -e)
        g[i] = (u[jp] - u[jm]) / (2 * grid.spacing[i])
    return g


def ui_trace_oracle(basis, t_bar, x, s, axis: int = 0) -> np.ndarray:
    """Exact U_i(x, 0) = (d/dx_i + d/dt_i) G(x, t_bar) for tensor bases."""
    return translation_green(basis, x, t_bar, s, axis)


def u1_representation(basis, t_bar, t, s, cylinder: Cylinder, params: FractionalParams | None = None,
                      n_face: int = 96, axis: int = 0) -> float:
    """U_1(t, 0) = -kappa int y^{1-2s} d_{x_1}E[G_tbar] dE[G_t]/dnu dsigma."""
    params = params or fractional_params(basis.N, s)
    t_bar = np.asarray(t_bar, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_plane(t_bar, axis)
    wy = _y_weights(cylinder.y, s)
    if isinstance(basis, GridBasis):
        Fb = grid_boundary_flux(basis, t_bar, s, cylinder, params)
        Ft = grid_boundary_flux(basis, t, s, cylinder, params)
        I = (Fb.values * Fb.normals[:, axis][:, None] * Ft.values) @ wy
        return float(-params.kappa * Fb.weights @ I)
    rule = lateral_rule(basis.domain, n_face)
    Fb = boundary_flux(basis, t_bar, s, cylinder, rule)
    Ft = boundary_flux(basis, t, s, cylinder, rule)
    I = (Fb.values * rule.normals[:, axis][:, None] * Ft.values) @ wy
    return float(-params.kappa * rule.weights @ I)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------
def export_field(fld: ExtField, path) -> None:
    grid, y = fld.cylinder.grid, fld.cylinder.y
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "y", "w"])
        for p, row in zip(grid.points, fld.values):
            x2 = p[1] if grid.N > 1 else 0.0
            for yk, v in zip(y, row):
                w.writerow([repr(float(p[0])), repr(float(x2)), repr(float(yk)), repr(float(v))])


def export_flux(flux: FluxField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["face", "index", "y", "flux"])
        for b in range(len(flux.points)):
            for yk, v in zip(flux.y, flux.values[b]):
                w.writerow([int(flux.face[b]), b, repr(float(yk)), repr(float(v))])
