"""Free and domain Green functions of the spectral fractional Laplacian and the Robin function.

All fractional quantities are written through the subordination identity

    lambda^{-s} = (1/Gamma(s)) int_0^inf tau^{s-1} e^{-lambda tau} dtau,

so the Robin function becomes a smooth tau-integral of the difference between
the free and the Dirichlet heat kernels on the diagonal.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gammainc, gammaincc, ive

from .quadrature import log_tau_rule
from .spectral_basis import FractionalParams, GridBasis, fractional_params

LOG_TOL = math.log(1e14)
TAU_MAX_DIGITS = math.log(1e16)
FD_DISTANCE = 4  # minimum distance to the boundary, in grid spacings
HEAT_TAU_DIGITS = 60.0  # pointwise heat integrals stop at tau = 60 / lambda_1


class QuadratureError(RuntimeError):
    """The tau-quadrature invariants cannot be met for the requested point."""


def free_green(x, t, params: FractionalParams) -> float:
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(t, dtype=float)))
    if r == 0.0:
        raise ValueError("free Green function is singular at coincident points")
    return params.c_fund * r ** (2 * params.s - params.N)


def free_green_heat(r: float, params: FractionalParams, per_unit: int = 32) -> float:
    """The free Green function at distance r, evaluated as a heat-kernel integral.

    The window [r^2/(4*64), 1e6 r^2] is integrated numerically; the remaining
    large-tau tail is an incomplete gamma function.
    """
    s, N = params.s, params.N
    c = r * r / 4
    lo, hi = c / 64, 1e6 * r * r
    tau, w = log_tau_rule(lo, hi, per_unit)
    body = np.sum(w * tau ** (s - 1) * (4 * np.pi * tau) ** (-N / 2) * np.exp(-c / tau))
    a = N / 2 - s
    tail = (4 * np.pi) ** (-N / 2) * c ** (-a) * math.gamma(a) * gammainc(a, c / hi)
    return float(body + tail) / math.gamma(s)


def smoothed_free_green(r: float, s: float, N: int, delta: float) -> float:
    """Free Green function convolved with the Gauss-Weierstrass kernel of time ``delta``."""

    def f(u):
        tau = math.exp(u)
        tt = tau + delta
        return tau**s * (4 * math.pi * tt) ** (-N / 2) * math.exp(-r * r / (4 * tt))

    lo, hi = math.log(delta) - 40, math.log(delta) + 60
    val, _ = quad(f, lo, math.log(delta), limit=400, epsabs=0, epsrel=1e-13)
    v2, _ = quad(f, math.log(delta), hi, limit=400, epsabs=0, epsrel=1e-13)
    T = math.exp(hi)
    tail = (4 * math.pi) ** (-N / 2) * T ** (s - N / 2) / (N / 2 - s)
    return (val + v2 + tail) / math.gamma(s)


def lattice_free_green(offset, spacing, s: float) -> float:
    """Green function of the fractional five-point lattice Laplacian on the infinite lattice."""
    N = len(spacing)

    def f(u):
        tau = math.exp(u)
        p = 1.0
        for m, h in zip(offset, spacing):
            p *= ive(abs(int(m)), 2 * tau / h**2) / h
        return tau**s * p

    h = min(spacing)
    mid = math.log(h * h)
    hi = mid + math.log(5e8)  # scipy ive returns nan beyond z ~ 1e10
    v1, _ = quad(f, mid - 40, mid, limit=400, epsabs=0, epsrel=1e-13)
    v2, _ = quad(f, mid, hi, limit=400, epsabs=0, epsrel=1e-13)
    tail = (4 * math.pi) ** (-N / 2) * math.exp(hi) ** (s - N / 2) / (N / 2 - s)
    return (v1 + v2 + tail) / math.gamma(s)


# --------------------------------------------------------------------------
# quadrature specification
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureSpec:
    tau_star: float
    tau_max: float
    nodes_per_unit: int
    modes_used: int
    tail_bound: float


def _lattice_split(m: int, tol: float) -> float:
    """Largest c with ive(m, 2c) <= tol * ive(0, 2c) (bisection in log c)."""
    lo, hi = 1e-8, 10.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if ive(m, 2 * mid) <= tol * ive(0, 2 * mid):
            lo = mid
        else:
            hi = mid
    return lo


def check_interior(basis, t) -> float:
    t = np.asarray(t, dtype=float)
    d = float(basis.domain.distance_to_boundary(t[None, :])[0])
    if d < FD_DISTANCE * basis.spacing * (1 - 1e-12):
        raise ValueError(f"point {tuple(t)} lies within {FD_DISTANCE} grid spacings of the boundary (d={d:.3g})")
    return d


def quadrature_spec(basis, t, tol: float = 1e-14, per_unit: int = 32,
                    check_distance: bool = True) -> QuadratureSpec:
    t = np.asarray(t, dtype=float)
    d = check_interior(basis, t) if check_distance else float(basis.domain.distance_to_boundary(t[None, :])[0])
    if d <= 0:
        raise ValueError(f"point {tuple(t)} is not interior")
    log_tol = -math.log(tol)
    if isinstance(basis, GridBasis):
        m = max(1, int(math.floor(d / basis.spacing + 1e-9)))
        tau_star = _lattice_split(m, tol) * basis.spacing**2
        tail = float(ive(m, 2 * tau_star / basis.spacing**2) / ive(0, 2 * tau_star / basis.spacing**2))
    else:
        tau_star = d * d / (4 * log_tol)
        lam_cut = basis.truncation_eigenvalue
        trunc = math.exp(-lam_cut * tau_star)
        if trunc > tol:
            raise QuadratureError(
                f"{basis.J} modes per axis leave e^(-lambda tau*) = {trunc:.2e} > {tol:g} "
                f"at distance {d:.3g}; raise J")
        tail = max(trunc, math.exp(-d * d / (4 * tau_star)))
    tau_max = TAU_MAX_DIGITS / basis.lambda_1
    return QuadratureSpec(tau_star=tau_star, tau_max=tau_max, nodes_per_unit=per_unit,
                          modes_used=basis.n_modes, tail_bound=tail)


def _free_tail(basis, s: float, T: float) -> float:
    """int_T^inf tau^{s-1} p_free(tau) dtau for the free kernel the basis pairs with."""
    N = basis.N
    base = (4 * np.pi) ** (-N / 2) * T ** (s - N / 2) / (N / 2 - s)
    if isinstance(basis, GridBasis):
        h2 = np.mean(np.square(basis.grid.spacing))
        # large-argument expansion of the lattice kernel: 1 + N h^2 / (16 tau) + ...
        base += (4 * np.pi) ** (-N / 2) * (N * h2 / 16) * T ** (s - N / 2 - 1) / (N / 2 + 1 - s)
    return float(base)


def heat_moments(basis, t, s: float, quad: QuadratureSpec | None = None, order: int = 0,
                 per_unit: int | None = None):
    """R(t) and, for ``order`` >= 1/2, its gradient/Hessian by the heat route.

    Returns ``(R, grad, hess, err)``; entries beyond ``order`` are ``None``.
    """
    quad = quad or quadrature_spec(basis, t)
    n = per_unit or quad.nodes_per_unit
    tau, w = log_tau_rule(quad.tau_star, quad.tau_max, n)
    out = basis.heat_diag(tau, np.asarray(t, dtype=float), order=max(order, 0))
    P = out if order == 0 else out[0]
    ws = w * tau ** (s - 1) / math.gamma(s)
    diff = basis.free_heat(tau) - P
    R = float(np.dot(ws, diff)) + _free_tail(basis, s, quad.tau_max) / math.gamma(s)
    grad = hess = None
    if order >= 1:
        grad = -(ws @ out[1])
    if order >= 2:
        hess = -np.einsum("q,qij->ij", ws, out[2])
        hess = 0.5 * (hess + hess.T)
    return R, grad, hess, quad.tail_bound


# --------------------------------------------------------------------------
# Green functions
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class GreenField:
    t: tuple
    s: float
    route: str
    rho: float | None
    points: np.ndarray
    values: np.ndarray


def _tau_window(basis, t):
    t = np.asarray(t, dtype=float)
    d = float(basis.domain.distance_to_boundary(t[None, :])[0])
    if d <= 0:
        raise ValueError(f"source {tuple(t)} is not interior")
    if isinstance(basis, GridBasis):
        tau_star = quadrature_spec(basis, t, check_distance=False).tau_star
    else:
        tau_star = d * d / (4 * LOG_TOL)
    return tau_star, HEAT_TAU_DIGITS / basis.lambda_1


def heat_green(basis, t, s, points, y=None, params: FractionalParams | None = None) -> np.ndarray:
    """E[G_t](x, y) at points x (P, N) and heights y (default y = 0, i.e. G itself).

    For tau below the split tau* the Dirichlet heat kernel equals the free one
    up to 1e-14, so that part is the closed-form free extension; above it the
    eigen-expansion converges geometrically.
    """
    params = params or fractional_params(basis.N, s)
    y = np.zeros(1) if y is None else np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    pts = np.atleast_2d(points)
    tau_star, tau_max = _tau_window(basis, t)
    tau, w = log_tau_rule(tau_star, tau_max, 32)
    wt = w * tau ** (s - 1) / math.gamma(s)
    k = basis.heat_kernel(tau, pts, t)  # (Q, P)
    Y = np.exp(-np.square(y)[:, None] / (4 * tau[None, :])) * wt  # (K+1, Q)
    vals = (Y @ k).T
    N = basis.N
    a = N / 2 - s
    rho2 = np.sum((pts - t) ** 2, axis=1)[:, None] + np.square(y)[None, :]
    with np.errstate(divide="ignore"):
        if isinstance(basis, GridBasis):
            vals += _lattice_small_tau(basis, pts - t, y, s, tau_star)
        else:
            vals += params.c_fund * rho2 ** (-a) * gammaincc(a, rho2 / (4 * tau_star))
    return vals


def _lattice_small_tau(basis, offsets, y, s, tau_star):
    """int_0^tau* tau^{s-1} e^{-y^2/4tau} p_lattice(tau, offset) dtau / Gamma(s)."""
    h = basis.grid.spacing
    tau, w = log_tau_rule(tau_star * 1e-8, tau_star, 32)
    lat = np.rint(offsets / np.array(h)).astype(int)
    out = np.zeros((len(offsets), len(y)))
    near = np.abs(lat).sum(axis=1) <= 40
    if not near.any():
        return out
    p = np.ones((len(tau), near.sum()))
    for i, hi in enumerate(h):
        p *= ive(np.abs(lat[near, i])[None, :], 2 * tau[:, None] / hi**2) / hi
    Y = np.exp(-np.square(y)[:, None] / (4 * tau[None, :])) * (w * tau ** (s - 1)) / math.gamma(s)
    out[near] = (Y @ p).T
    zero = near.copy()
    zero[near] = np.all(lat[near] == 0, axis=1)
    out[zero, 0] = np.inf
    return out


def default_damping(basis) -> float:
    """Gauss-Weierstrass time at which the truncated modes weigh e^{-74}."""
    lam = basis.truncation_eigenvalue
    return 0.0 if not math.isfinite(lam) else 2 * TAU_MAX_DIGITS / lam


def _summed(fn, basis, damping):
    """Evaluate a mode sum with Gauss-Weierstrass damping and one Richardson step in it."""
    if damping is None:
        damping = default_damping(basis)
    if damping == 0.0:
        return fn(0.0)
    return 2 * fn(damping / 2) - fn(damping)


def grid_ball_coefficients(basis: GridBasis, t, rho: float) -> np.ndarray:
    inside = np.linalg.norm(basis.grid.points - np.asarray(t), axis=1) < rho
    eta = inside / (inside.sum() * basis.cell)
    return basis.vectors.T @ eta * math.sqrt(basis.cell)


def green_solve(basis, t, s: float, route: str = "spectral", rho: float | None = None,
                points=None, damping: float | None = None, summation: str = "heat") -> GreenField:
    """Green function with pole ``t`` sampled at ``points`` (default: grid nodes).

    The spectral series sum_j phi_j(t) phi_j(x) / lambda_j^s is summed either
    through its heat-kernel form (``summation="heat"``: free kernel below the
    split tau*, eigen-expansion above) or with Gauss-Weierstrass damping and a
    Richardson step in the damping time (``"damped"``).
    """
    t = np.asarray(t, dtype=float)
    if not basis.domain.contains(t[None, :])[0]:
        raise ValueError(f"source {tuple(t)} is not interior")
    pts = basis.grid.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    if route == "spectral":
        if summation == "heat":
            vals = heat_green(basis, t, s, pts)[:, 0]
        elif summation == "damped":
            vals = _summed(lambda d: basis.green_series(pts, t, s, d), basis, damping)
        else:
            raise ValueError(f"unknown summation {summation!r}")
    elif route == "mollified":
        if rho is None or rho <= 0:
            raise ValueError("mollified route needs rho > 0")
        d = float(basis.domain.distance_to_boundary(t[None, :])[0])
        if rho >= d / 2:
            raise ValueError(f"rho={rho} must be below half the boundary distance {d / 2:.3g}")
        if isinstance(basis, GridBasis):
            c = grid_ball_coefficients(basis, t, rho)
            vals = basis.values(pts) @ (c * basis.eigenvalues**-s)
        else:
            vals = _summed(lambda dd: basis.ball_series(pts, t, rho, s, dd), basis, damping)
    else:
        raise ValueError(f"unknown Green route {route!r}")
    return GreenField(t=tuple(t), s=s, route=route, rho=rho, points=pts, values=np.asarray(vals))


def mollified_coefficients(basis, t, rho: float, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of eta_rho and of the mollified Green function, flat mode order."""
    if isinstance(basis, GridBasis):
        eta = grid_ball_coefficients(basis, t, rho)
    else:
        eta = basis.ball_coefficients(t, rho)
    return eta, eta * basis.eigenvalues[: len(eta)] ** -s


def translation_green(basis, x, t, s: float, axis: int, quad: QuadratureSpec | None = None) -> np.ndarray:
    """(d/dx_i + d/dt_i) G(x, t) for a tensor basis, by the heat route.

    The free kernel depends on x - t only, so it drops out and the integrand is
    smooth; it equals -(d/dx_i + d/dt_i) H(x, t).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    if quad is None:
        d = min(float(basis.domain.distance_to_boundary(t[None, :])[0]),
                float(basis.domain.distance_to_boundary(x).min()))
        tau_star = d * d / (4 * LOG_TOL)
        quad = QuadratureSpec(tau_star, TAU_MAX_DIGITS / basis.lambda_1, 32, basis.n_modes, 0.0)
    tau, w = log_tau_rule(quad.tau_star, quad.tau_max, quad.nodes_per_unit)
    e = tuple(int(k == axis) for k in range(basis.N))
    k = basis.heat_kernel(tau, x, t, dx=e) + basis.heat_kernel(tau, x, t, dt=e)
    return (w * tau ** (s - 1)) @ k / math.gamma(s)


# --------------------------------------------------------------------------
# Robin function
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class RobinValue:
    t: tuple
    s: float
    value: float
    route: str
    error_estimate: float


def _richardson(vals, ratio=2.0, orders=(2, 4)):
    vals = list(vals)
    for p in orders:
        f = ratio**p
        vals = [(f * b - a) / (f - 1) for a, b in zip(vals[:-1], vals[1:])]
    return vals[-1]


def robin_value(basis, t, s: float, params: FractionalParams | None = None,
                quad: QuadratureSpec | None = None, route: str = "heat") -> RobinValue:
    t = np.asarray(t, dtype=float)
    params = params or fractional_params(basis.N, s)
    if route == "heat":
        quad = quad or quadrature_spec(basis, t)
        R, _, _, tail = heat_moments(basis, t, s, quad)
        R16, _, _, _ = heat_moments(basis, t, s, quad, per_unit=quad.nodes_per_unit // 2)
        err = abs(R - R16) + tail * abs(R)
        return RobinValue(tuple(t), s, R, "heat", err)
    if route == "extrapolation":
        check_interior(basis, t)
        R, err = _extrapolated_robin(basis, t, s, params)
        return RobinValue(tuple(t), s, R, "extrapolation", err)
    raise ValueError(f"unknown Robin route {route!r}")


def _directions(N):
    E = np.eye(N)
    return [E[i] * sg for i in range(N) for sg in (1, -1)]


def _extrapolated_robin(basis, t, s, params):
    h = basis.spacing
    ladder = (8 * h, 4 * h, 2 * h)
    dirs = _directions(basis.N)
    if isinstance(basis, GridBasis):
        H = []
        for k, eps in enumerate(ladder):
            m = 8 >> k
            vals = []
            for e in dirs:
                off = (e * m).astype(int)
                x = t + e * eps
                g = basis.green_series(x[None, :], t, s)[0]
                vals.append(lattice_free_green(off, basis.grid.spacing, s) - g)
            H.append(np.mean(vals))
        one = _richardson(H[1:], orders=(2,))
        two = _richardson(H)
        return float(two), float(abs(two - one))

    delta0 = default_damping(basis)

    def at(delta):
        H = []
        for eps in ladder:
            x = t + np.array(dirs) * eps
            g = basis.green_series(x, t, s, delta)
            H.append(smoothed_free_green(eps, s, basis.N, delta) - float(np.mean(g)))
        return H

    Ha, Hb = at(delta0), at(delta0 / 2)
    Ra, Rb = _richardson(Ha), _richardson(Hb)
    R = 2 * Rb - Ra
    one = 2 * _richardson(Hb[1:], orders=(2,)) - _richardson(Ha[1:], orders=(2,))
    return float(R), float(abs(R - one) + abs(Rb - Ra))


def export_green(field: GreenField, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "G"])
        for p, g in zip(field.points, field.values):
            x2 = p[1] if len(p) > 1 else 0.0
            w.writerow([repr(float(p[0])), repr(float(x2)), repr(float(g))])


def export_robin(values, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t1", "t2", "R", "route", "err_est"])
        for r in values:
            t2 = r.t[1] if len(r.t) > 1 else 0.0
            w.writerow([repr(float(r.t[0])), repr(float(t2)), repr(r.value), r.route, repr(r.error_estimate)])
