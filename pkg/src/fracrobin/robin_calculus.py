"""Gradient and Hessian of the Robin function and scans along symmetry planes."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .green_kernel import check_interior, heat_moments, quadrature_spec, robin_value
from .spectral_basis import FractionalParams, fractional_params

ROUTES = ("spectral", "fd", "boundary")


def _fd_value(basis, t, s):
    return heat_moments(basis, t, s, quadrature_spec(basis, t, check_distance=False))[0]


def _fd_gradient(basis, t, s):
    """Central differences with steps 2h and h, one Richardson level."""
    h = basis.spacing
    g = np.zeros(basis.N)
    for i in range(basis.N):
        e = np.zeros(basis.N)
        e[i] = 1.0
        d = [(_fd_value(basis, t + k * h * e, s) - _fd_value(basis, t - k * h * e, s)) / (2 * k * h) for k in (2, 1)]
        g[i] = (4 * d[1] - d[0]) / 3
    return g


def _fd_hessian(basis, t, s):
    """Second differences with steps 2h and h, one Richardson level."""
    h = basis.spacing
    N = basis.N
    E = np.eye(N)
    R0 = _fd_value(basis, t, s)

    def at(step):
        H = np.zeros((N, N))
        for i in range(N):
            H[i, i] = (_fd_value(basis, t + step * E[i], s) - 2 * R0
                       + _fd_value(basis, t - step * E[i], s)) / step**2
            for j in range(i + 1, N):
                pp = _fd_value(basis, t + step * (E[i] + E[j]), s)
                pm = _fd_value(basis, t + step * (E[i] - E[j]), s)
                mp = _fd_value(basis, t - step * (E[i] - E[j]), s)
                mm = _fd_value(basis, t - step * (E[i] + E[j]), s)
                H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * step**2)
        return H

    return (4 * at(h) - at(2 * h)) / 3


def robin_gradient(basis, t, s: float, params: FractionalParams | None = None,
                   route: str = "spectral", cylinder=None) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    check_interior(basis, t)
    if route == "spectral":
        return heat_moments(basis, t, s, order=1)[1]
    if route == "fd":
        return _fd_gradient(basis, t, s)
    if route == "boundary":
        from .cs_extension import robin_gradient_boundary

        return robin_gradient_boundary(basis, t, s, cylinder, params)
    raise ValueError(f"unknown route {route!r}")


def robin_hessian(basis, t, s: float, params: FractionalParams | None = None,
                  route: str = "spectral", cylinder=None) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    check_interior(basis, t)
    if route == "spectral":
        return heat_moments(basis, t, s, order=2)[2]
    if route == "fd":
        return _fd_hessian(basis, t, s)
    if route == "boundary":
        from .cs_extension import robin_hessian_boundary

        return robin_hessian_boundary(basis, t, s, cylinder, params)
    raise ValueError(f"unknown route {route!r}")


@dataclass(frozen=True)
class Tolerances:
    """Relative tolerances; gradient scales use max(|grad|, H_aa * diam)."""

    spectral_zero: float = 1e-12
    fd_zero: float = 1e-6
    boundary_zero: float = 1e-3
    offdiag: float = 1e-3
    fd_agree: float = 1e-2
    boundary_agree: float = 2e-2


NUMERIC_TOLERANCES = Tolerances(spectral_zero=5e-3, fd_zero=5e-3, boundary_zero=5e-3,
                                offdiag=5e-3, fd_agree=5e-3, boundary_agree=2e-2)


@dataclass
class RobinReport:
    t: tuple
    s: float
    axis: int
    value: float
    gradient: dict
    hessian: dict
    tolerances: Tolerances
    flags: dict = field(default_factory=dict)
    measures: dict = field(default_factory=dict)

    @property
    def alpha(self) -> float:
        return float(self.hessian["spectral"][self.axis, self.axis])

    @property
    def passed(self) -> bool:
        return all(self.flags.values())


def _rel(a, b, floor):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), floor))


def evaluate_point(basis, t, s, axis: int, routes=("spectral", "fd"), cylinder=None,
                   params: FractionalParams | None = None, tol: Tolerances = Tolerances()) -> RobinReport:
    """Gradient/Hessian per route at t with the plane-point checks (vanishing d_axis R, diagonal row)."""
    params = params or fractional_params(basis.N, s)
    t = np.asarray(t, dtype=float)
    value = robin_value(basis, t, s, params).value
    grads = {r: robin_gradient(basis, t, s, params, r, cylinder) for r in routes}
    hess = {r: robin_hessian(basis, t, s, params, r, cylinder) for r in routes}
    a = axis
    Haa = float(hess["spectral"][a, a])
    diam = basis.domain.diameter
    scale = max(float(np.max(np.abs(grads["spectral"]))), Haa * diam)
    zero_tol = {"spectral": tol.spectral_zero, "fd": tol.fd_zero, "boundary": tol.boundary_zero}
    flags, measures = {}, {}
    for r in routes:
        g, H = grads[r], hess[r]
        measures[f"grad_axis_{r}"] = float(g[a])
        flags[f"grad_axis_zero_{r}"] = abs(g[a]) <= zero_tol[r] * scale
        off = [abs(H[a, j]) for j in range(basis.N) if j != a]
        measures[f"offdiag_{r}"] = float(max(off)) if off else 0.0
        flags[f"offdiag_{r}"] = all(o <= tol.offdiag * H[a, a] for o in off)
        flags[f"alpha_positive_{r}"] = bool(H[a, a] > 0)
    floor = Haa * diam * 1e-6
    if "fd" in routes:
        measures["grad_gap_fd"] = _rel(grads["fd"], grads["spectral"], floor)
        measures["hess_gap_fd"] = _rel(hess["fd"], hess["spectral"], Haa * 1e-6)
        flags["fd_agrees"] = measures["grad_gap_fd"] <= tol.fd_agree and measures["hess_gap_fd"] <= tol.fd_agree
    if "boundary" in routes:
        measures["grad_gap_boundary"] = _rel(grads["boundary"], grads["spectral"], floor)
        measures["hess_gap_boundary"] = _rel(hess["boundary"], hess["spectral"], Haa * 1e-6)
        flags["boundary_agrees"] = (measures["grad_gap_boundary"] <= tol.boundary_agree
                                    and measures["hess_gap_boundary"] <= tol.boundary_agree)
    return RobinReport(tuple(float(v) for v in t), s, a, value, grads, hess, tol, flags, measures)


def symmetry_scan(basis, s: float, params: FractionalParams | None, axis: int, points,
                  routes=("spectral", "fd"), cylinder=None, tol: Tolerances | None = None,
                  parallel: bool = False) -> list[RobinReport]:
    """Reports at points of the plane {x_axis = 0}; off-plane samples are rejected."""
    params = params or fractional_params(basis.N, s)
    pts = [np.asarray(p, dtype=float) for p in points]
    for p in pts:
        if p[axis] != 0.0:
            raise ValueError(f"sample {tuple(p)} is off the plane x_{axis + 1} = 0")
    tol = tol or Tolerances()
    job = lambda p: evaluate_point(basis, p, s, axis, routes, cylinder, params, tol)
    if parallel and len(pts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor() as ex:
            return list(ex.map(job, pts))
    return [job(p) for p in pts]


def export_scan(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t1", "t2", "dR1_spec", "dR1_fd", "dR1_bdy", "H11", "H12", "H22", "alpha_pass"])
        nan = float("nan")
        for r in reports:
            H = r.hessian["spectral"]
            g = lambda k: repr(float(r.gradient[k][0])) if k in r.gradient else repr(nan)
            t2 = r.t[1] if len(r.t) > 1 else 0.0
            H12 = H[0, 1] if H.shape[0] > 1 else 0.0
            H22 = H[1, 1] if H.shape[0] > 1 else 0.0
            w.writerow([repr(r.t[0]), repr(t2), g("spectral"), g("fd"), g("boundary"), repr(float(H[0, 0])),
                        repr(float(H12)), repr(float(H22)), int(r.passed)])
