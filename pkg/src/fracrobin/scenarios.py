"""Verification scenarios: configuration, check records and reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cs_extension as cx
from .green_kernel import free_green_heat, green_solve, heat_green, robin_value
from .robin_calculus import NUMERIC_TOLERANCES, ROUTES, Tolerances, evaluate_point, symmetry_scan
from .spectral_basis import (DomainSpec, GridBasis, build_domain, eigenbasis, fractional_params,
                             verify_normal_condition)

SCENARIOS = ("theorem1", "theorem2", "lemma_symmetry", "lemma_u1", "lemma_grad_formula",
             "extension_selftest")
KAPPA_CONVENTION = "kappa_s = 2^(2s-1) Gamma(s) / Gamma(1-s)"

ANCHORS = {
    "normal_condition": "x_i nu_i(x) <= 0 on the boundary (inward normal)",
    "plane_gradient_zero": "dR/dt_1 = 0 at points of {x_1 = 0}",
    "plane_hessian_diagonal": "d^2R/dt_1 dt_i = alpha delta_1i at points of {x_1 = 0}",
    "alpha_positive": "alpha = d^2R/dt_1^2 > 0",
    "route_agreement_fd": "finite differences of R agree with the spectral derivative",
    "route_agreement_boundary": "grad R = kappa int y^(1-2s) (dE[G_t]/dnu)^2 nu; Hessian from its t-derivative",
    "center_gradient_zero": "grad R(0) = 0",
    "center_hessian_diagonal": "the Hessian of R at 0 is diagonal",
    "center_alpha_positive": "the diagonal entries alpha_i of the Hessian at 0 are positive",
    "square_alpha_equal": "alpha_1 = alpha_2 on the square (swap symmetry)",
    "rectangle_alpha_distinct": "alpha_1 != alpha_2 on a non-square rectangle",
    "robin_oracle": "heat-kernel R(t) agrees with the near-diagonal limit of G_free - G",
    "robin_positive": "R(t) > 0",
    "green_reflection": "G_t(x_1, x') = G_t(-x_1, x') for t on {x_1 = 0}",
    "green_symmetry": "G(x; t) = G(t; x)",
    "extension_reflection": "E[G_t](x_1, x', y) = E[G_t](-x_1, x', y) for t on {x_1 = 0}",
    "extension_positive": "E[G_t] > 0 in the cylinder",
    "flux_nonpositive": "dE[G_t]/dnu <= 0 on the lateral boundary",
    "flux_reflection": "lateral flux is even in x_1 for t on {x_1 = 0}",
    "flux_decay": "lateral flux decays like the first-mode profile h_s(sqrt(lambda_1) y)",
    "u1_odd": "U_1(x, 0) is odd in x_1",
    "u1_vanishes_at_plane_point": "U_1(t, 0) = 0 for t on {x_1 = 0}",
    "u1_positive_left": "U_1(x, 0) > 0 for x_1 < 0",
    "hopf_sign": "dU_1/dx_1(t, 0) < 0",
    "u1_tangential_zero": "dU_1/dx_i(t, 0) = 0 for i >= 2",
    "u1_neumann_zero": "the conormal trace of U_1 vanishes",
    "u1_cross_identity": "dU_1/dx_i(t, 0) = -1/2 d^2R/dt_1 dt_i(t)",
    "u1_representation": "U_1(t, 0) = -kappa int y^(1-2s) d_x1 E[G_tbar] dE[G_t]/dnu",
    "u1_representation_odd": "the representation is odd in t_1",
    "profile_closed_form": "h_1/2(z) = exp(-z)",
    "kappa_trace_identity": "-kappa lim y^(1-2s) d/dy h_s(sqrt(lambda) y) = lambda^s",
    "fd_extension_order": "fd extension converges at second order to the closed form",
    "isometry": "kappa int y^(1-2s) |grad E[u]|^2 = sum a_j^2 lambda_j^s",
    "conormal_trace": "-kappa lim y^(1-2s) dE[phi_1]/dy = lambda_1^s phi_1",
    "free_kernel_identity": "(1/Gamma(s)) int tau^(s-1) (4 pi tau)^(-N/2) e^(-r^2/4tau) = c_(N,s) r^(2s-N)",
    "free_space_asymptotics": "E[G_t] ~ c_(N,s) |(x - t, y)|^(2s-N) near the pole",
}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------
@dataclass
class CylinderConfig:
    y_max: float | None = None
    k: int = 256
    gamma: float = 2.0


@dataclass
class ScenarioConfig:
    scenario: str
    kind: str = "rectangle"
    half_extents: tuple = (math.pi / 2, math.pi / 2)
    spacing: float | None = None
    s: tuple = (0.3, 0.5, 0.7)
    modes: int = 400
    cylinder: CylinderConfig = field(default_factory=CylinderConfig)
    axis: int = 0
    points: tuple | None = None
    generic_points: tuple | None = None
    tolerances: dict = field(default_factory=dict)
    parallel: bool = False

    @property
    def domain_spec(self) -> DomainSpec:
        return DomainSpec(self.kind, tuple(self.half_extents), self.grid_spacing)

    @property
    def grid_spacing(self) -> float:
        if self.spacing is not None:
            return float(self.spacing)
        if self.kind == "ellipse":
            return 1 / 32
        return min(self.half_extents) / 32

    @property
    def numeric(self) -> bool:
        return self.kind == "ellipse"


DEFAULT_POINTS = {
    "rectangle": [(0.0, -0.4), (0.0, -0.2), (0.0, 0.0), (0.0, 0.2), (0.0, 0.4)],
    "ellipse": [(0.0, -0.25), (0.0, 0.0), (0.0, 0.25)],
    "interval": [(0.0,)],
}
DEFAULT_GENERIC = {
    "rectangle": [(0.3, 0.4), (-0.6, 0.2), (0.5, -0.7), (-0.25, -0.45), (0.8, 0.6), (-0.9, -0.3)],
    "ellipse": [(0.25, 0.125), (-0.375, 0.0), (0.125, -0.25)],
    "interval": [(0.3,), (-0.6,)],
}


def config_from_dict(d: dict, scenario: str | None = None) -> ScenarioConfig:
    """Build and validate a config from a snake_case mapping (e.g. parsed JSON)."""
    d = dict(d)
    name = scenario or d.pop("scenario", None)
    d.pop("scenario", None)
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    dom = d.pop("domain", {}) or {}
    cyl = d.pop("cylinder", {}) or {}
    known = {"s", "modes", "axis", "points", "generic_points", "tolerances", "parallel"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if "kind" in dom and dom["kind"] == "ellipse" and "half_extents" not in dom:
        dom["half_extents"] = (1.0, 0.6)
    if dom.get("kind") == "interval" and "half_extents" not in dom:
        dom["half_extents"] = (math.pi / 2,)
    s = d.get("s", (0.3,) if dom.get("kind") in ("ellipse", "interval") else (0.3, 0.5, 0.7))
    s = tuple(float(v) for v in (s if isinstance(s, (list, tuple)) else [s]))
    try:
        cfg = ScenarioConfig(
            scenario=name,
            kind=dom.get("kind", "rectangle"),
            half_extents=tuple(float(a) for a in dom.get("half_extents", (math.pi / 2, math.pi / 2))),
            spacing=dom.get("spacing"),
            s=s,
            modes=int(d.get("modes", 20 if dom.get("kind") == "ellipse" else 400)),
            cylinder=CylinderConfig(y_max=cyl.get("y_max"), k=int(cyl.get("k", 256)),
                                    gamma=float(cyl.get("gamma", 2.0))),
            axis=int(d.get("axis", 0)),
            points=tuple(tuple(map(float, p)) for p in d["points"]) if "points" in d else None,
            generic_points=tuple(tuple(map(float, p)) for p in d["generic_points"]) if "generic_points" in d else None,
            tolerances=dict(d.get("tolerances", {})),
            parallel=bool(d.get("parallel", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    N = len(cfg.half_extents)
    for s in cfg.s:
        try:
            fractional_params(N, s)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    for k, v in cfg.tolerances.items():
        if k not in Tolerances.__dataclass_fields__:
            raise ConfigError(f"unknown tolerance {k!r}")
        if not float(v) > 0:
            raise ConfigError(f"tolerance {k} must be positive")
    if cfg.modes < 1:
        raise ConfigError("modes must be at least 1")
    if cfg.cylinder.k < 2 or cfg.cylinder.gamma < 1:
        raise ConfigError("cylinder needs k >= 2 and gamma >= 1")
    if not 0 <= cfg.axis < N:
        raise ConfigError(f"axis {cfg.axis} out of range for N={N}")
    try:
        domain, grid = build_domain(cfg.domain_spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    h = grid.h
    for p in (cfg.points or ()) + (cfg.generic_points or ()):
        if len(p) != N:
            raise ConfigError(f"point {p} has the wrong dimension")
        d = float(domain.distance_to_boundary(np.array(p)[None, :])[0])
        if d < 4 * h:
            raise ConfigError(f"test point {p} is not interior at distance >= 4 grid spacings")


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------
@dataclass
class Check:
    claim_id: str
    anchor: str
    route: str
    value: float
    tolerance: float
    relation: str  # "<=", ">", "<"
    passed: bool
    s: float | None = None
    point: tuple | None = None
    note: str = ""


@dataclass
class VerificationReport:
    scenario: str
    checks: list
    environment: dict

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario,
                "checks": [_clean(asdict(c)) for c in self.checks],
                "environment": _clean(self.environment),
                "pass": self.passed}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit_report(report: VerificationReport, fmt: str, path) -> None:
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
        with open(path, "w") as fh:
            fh.write(text)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["claim_id", "route", "value", "tolerance", "pass", "s", "point", "anchor"])
            for c in report.checks:
                pt = "" if c.point is None else " ".join(repr(float(v)) for v in c.point)
                w.writerow([c.claim_id, c.route, repr(float(c.value)), repr(float(c.tolerance)),
                            int(c.passed), "" if c.s is None else repr(c.s), pt, c.anchor])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


class _Recorder:
    def __init__(self):
        self.checks = []

    def add(self, claim, route, value, tol, relation="<=", s=None, point=None, note=""):
        value = float(value)
        if not math.isfinite(value):
            ok = False
        elif relation == "<=":
            ok = value <= tol
        elif relation == ">":
            ok = value > tol
        elif relation == "<":
            ok = value < tol
        else:
            raise ValueError(relation)
        pt = None if point is None else tuple(float(v) for v in point)
        self.checks.append(Check(claim, ANCHORS[claim], route, value, float(tol), relation, bool(ok),
                                 None if s is None else float(s), pt, note))

    def failure(self, claim, route, exc, s=None, point=None):
        pt = None if point is None else tuple(float(v) for v in point)
        self.checks.append(Check(claim, ANCHORS[claim], route, float("nan"), 0.0, "error", False,
                                 None if s is None else float(s), pt, f"{type(exc).__name__}: {exc}"))


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------
class _Context:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.domain, self.grid = build_domain(cfg.domain_spec)
        self.basis = eigenbasis(self.domain, self.grid, cfg.modes)
        base = NUMERIC_TOLERANCES if cfg.numeric else Tolerances()
        self.tol = Tolerances(**{**asdict(base), **{k: float(v) for k, v in cfg.tolerances.items()}})
        self._cyl = {}

    def cylinder(self, s):
        if s not in self._cyl:
            c = self.cfg.cylinder
            self._cyl[s] = cx.make_cylinder(self.grid, self.basis.lambda_1, K=c.k, gamma=c.gamma,
                                            y_max=c.y_max, s=s)
        return self._cyl[s]

    def points(self):
        return [np.array(p) for p in (self.cfg.points or DEFAULT_POINTS[self.domain.kind])]

    def generic(self):
        return [np.array(p) for p in (self.cfg.generic_points or DEFAULT_GENERIC[self.domain.kind])]

    def environment(self):
        c = self.cfg.cylinder
        env = {"domain": self.domain.kind, "half_extents": list(self.domain.half_extents),
               "spacing": list(self.grid.spacing), "interior_nodes": self.grid.n,
               "modes": self.cfg.modes, "basis": _basis_kind(self.basis),
               "cylinder": {"k": c.k, "gamma": c.gamma,
                            "y_max": self.cylinder(self.cfg.s[0]).y_max},
               "s": list(self.cfg.s), "kappa_convention": KAPPA_CONVENTION,
               "tolerances": asdict(self.tol)}
        if _basis_kind(self.basis) == "grid":
            env["lambda_extrapolated"] = [float(v) for v in self.basis.extrapolated_eigenvalues[:5]]
        else:
            env["lambda"] = [float(v) for v in self.basis.eigenvalues[:5]]
        return env


def _basis_kind(basis):
    return "grid" if isinstance(basis, GridBasis) else "tensor"


def _map(ctx, fn, items):
    if ctx.cfg.parallel and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor() as ex:
            return list(ex.map(fn, items))
    return [fn(p) for p in items]


def _routes(ctx):
    return ROUTES


def _plane_checks(rec, ctx, rep, s):
    tol = ctx.tol
    a = rep.axis
    Haa = float(rep.hessian["spectral"][a, a])
    diam = ctx.domain.diameter
    scale = max(float(np.max(np.abs(rep.gradient["spectral"]))), Haa * diam)
    zero = {"spectral": tol.spectral_zero, "fd": tol.fd_zero, "boundary": tol.boundary_zero}
    for r in rep.gradient:
        g, H = rep.gradient[r], rep.hessian[r]
        rec.add("plane_gradient_zero", r, abs(g[a]) / scale, zero[r], s=s, point=rep.t)
        off = max([abs(H[a, j]) for j in range(len(g)) if j != a], default=0.0)
        rec.add("plane_hessian_diagonal", r, off / H[a, a] if H[a, a] > 0 else math.inf, tol.offdiag,
                s=s, point=rep.t)
        rec.add("alpha_positive", r, H[a, a], 0.0, ">", s=s, point=rep.t)
    if "fd" in rep.gradient:
        rec.add("route_agreement_fd", "fd", max(rep.measures["grad_gap_fd"], rep.measures["hess_gap_fd"]),
                tol.fd_agree, s=s, point=rep.t)
    if "boundary" in rep.gradient:
        rec.add("route_agreement_boundary", "boundary",
                max(rep.measures["grad_gap_boundary"], rep.measures["hess_gap_boundary"]),
                tol.boundary_agree, s=s, point=rep.t)


def _u1_checks(rec, ctx, s, tb, with_identity=True):
    basis, cyl, grid = ctx.basis, ctx.cylinder(s), ctx.grid
    a = ctx.cfg.axis
    U = cx.solve_ui(basis, tb, a, s, cyl)
    u0 = U.values[:, 0]
    norm = float(np.max(np.abs(u0)))
    lat = grid.lattice_index.copy()
    lat[:, a] = grid.mask.shape[a] - 1 - lat[:, a]
    mirror = grid.index[tuple(lat.T)]
    rec.add("u1_odd", "fd", np.max(np.abs(u0 + u0[mirror])) / norm, 1e-6, s=s, point=tb)
    try:
        k = grid.node_index(tb)
        u_tb = abs(u0[k])
    except ValueError:
        from scipy.interpolate import RectBivariateSpline

        x1, x2 = grid.axes[0][1:-1], grid.axes[1][1:-1]
        spl = RectBivariateSpline(x1, x2, u0.reshape(len(x1), len(x2)))
        u_tb = abs(float(spl(tb[0], tb[1])[0, 0]))
    rec.add("u1_vanishes_at_plane_point", "fd", u_tb / norm, 1e-6, s=s, point=tb)
    left = grid.points[:, a] < -0.5 * grid.spacing[a]
    rec.add("u1_positive_left", "fd", float(np.min(u0[left])), 0.0, ">", s=s, point=tb)
    g = cx.ui_trace_gradient(U, tb)
    rec.add("hopf_sign", "fd", g[a], 0.0, "<", s=s, point=tb)
    for i in range(basis.N):
        if i != a:
            rec.add("u1_tangential_zero", "fd", abs(g[i]) / abs(g[a]), 1e-6, s=s, point=tb)
    tr = cx.neumann_trace(U)
    rec.add("u1_neumann_zero", "fd", np.max(np.abs(tr)) / (fractional_params(basis.N, s).kappa * norm),
            1e-8, s=s, point=tb)
    if with_identity:
        from .robin_calculus import robin_hessian

        H = robin_hessian(basis, tb, s)
        ref = 0.5 * H[a, a]
        for i in range(basis.N):
            rec.add("u1_cross_identity", f"fd_vs_spectral[{i + 1}]", abs(g[i] + 0.5 * H[a, i]) / ref,
                    2e-2, s=s, point=tb)
    return U


def _guard(rec, claim, route, s, point, fn):
    try:
        return fn()
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        rec.failure(claim, route, exc, s=s, point=point)
        return None


def _theorem1(ctx, rec):
    a = ctx.cfg.axis
    for s in ctx.cfg.s:
        cyl = ctx.cylinder(s)
        pts = ctx.points()
        for p in pts:
            if p[a] != 0.0:
                raise ConfigError(f"theorem1 sample {tuple(p)} is off the plane x_{a + 1} = 0")
        reps = _guard(rec, "plane_gradient_zero", "all", s, None,
                      lambda: symmetry_scan(ctx.basis, s, None, a, pts, _routes(ctx), cyl, ctx.tol,
                                            parallel=ctx.cfg.parallel))
        for rep in reps or []:
            _plane_checks(rec, ctx, rep, s)
        for p in pts:
            _guard(rec, "hopf_sign", "fd", s, p, lambda p=p: _u1_checks(rec, ctx, s, p))


def _theorem2(ctx, rec):
    basis = ctx.basis
    N = basis.N
    origin = np.zeros(N)
    tol = ctx.tol
    for s in ctx.cfg.s:
        cyl = ctx.cylinder(s)
        rep = _guard(rec, "center_gradient_zero", "all", s, origin,
                     lambda: evaluate_point(basis, origin, s, 0, _routes(ctx), cyl, None, tol))
        if rep is None:
            continue
        H = rep.hessian["spectral"]
        diag = np.diag(H)
        scale = float(np.max(diag)) * ctx.domain.diameter
        zero = {"spectral": tol.spectral_zero, "fd": tol.fd_zero, "boundary": tol.boundary_zero}
        for r in rep.gradient:
            Hr = rep.hessian[r]
            rec.add("center_gradient_zero", r, float(np.max(np.abs(rep.gradient[r]))) / scale, zero[r],
                    s=s, point=origin)
            off = np.max(np.abs(Hr - np.diag(np.diag(Hr)))) if N > 1 else 0.0
            rec.add("center_hessian_diagonal", r, off / float(np.min(np.diag(Hr))), tol.offdiag, s=s,
                    point=origin)
            rec.add("center_alpha_positive", r, float(np.min(np.diag(Hr))), 0.0, ">", s=s, point=origin)
        rec.add("route_agreement_fd", "fd", max(rep.measures["grad_gap_fd"], rep.measures["hess_gap_fd"]),
                tol.fd_agree, s=s, point=origin)
        rec.add("route_agreement_boundary", "boundary",
                max(rep.measures["grad_gap_boundary"], rep.measures["hess_gap_boundary"]),
                tol.boundary_agree, s=s, point=origin)
        if N == 2 and ctx.domain.kind == "rectangle":
            gap = abs(diag[0] - diag[1]) / float(np.max(diag))
            if ctx.domain.half_extents[0] == ctx.domain.half_extents[1]:
                rec.add("square_alpha_equal", "spectral", gap, 1e-10, s=s, point=origin,
                        note="relative gap |H11 - H22| / max H_ii")
            else:
                rec.add("rectangle_alpha_distinct", "spectral", gap, 0.05, ">", s=s, point=origin)
        heat = robin_value(basis, origin, s)
        rec.add("robin_positive", "heat", heat.value, 0.0, ">", s=s, point=origin)
        ex = _guard(rec, "robin_oracle", "extrapolation", s, origin,
                    lambda: robin_value(basis, origin, s, route="extrapolation"))
        if ex is not None:
            rec.add("robin_oracle", "heat_vs_extrapolation", abs(heat.value - ex.value) / heat.value, 1e-2,
                    s=s, point=origin)


def _mirror(grid, axis):
    lat = grid.lattice_index.copy()
    lat[:, axis] = grid.mask.shape[axis] - 1 - lat[:, axis]
    return grid.index[tuple(lat.T)]


def _lemma_symmetry(ctx, rec):
    basis, grid = ctx.basis, ctx.grid
    a = ctx.cfg.axis
    mirror = _mirror(grid, a)
    ref_tol = 1e-8 if ctx.cfg.numeric else 1e-10
    for s in ctx.cfg.s:
        cyl = ctx.cylinder(s)
        for tb in ctx.points():
            G = green_solve(basis, tb, s, points=grid.points)
            fin = np.isfinite(G.values)
            rec.add("green_reflection", "spectral",
                    np.max(np.abs(G.values - G.values[mirror])[fin]) / np.max(np.abs(G.values[fin])),
                    ref_tol, s=s, point=tb)
            offsets = np.array([[0.3, 0.1], [-0.2, 0.25], [0.1, -0.3], [-0.35, -0.05], [0.05, 0.2]])
            sample = [q for q in tb + offsets[:, : basis.N] if ctx.domain.contains(q[None, :])[0]]
            if isinstance(basis, GridBasis):
                sample = [_snap(grid, q) for q in sample]
            gap = 0.0
            for q in sample:
                g1 = green_solve(basis, tb, s, points=q[None, :]).values[0]
                g2 = green_solve(basis, q, s, points=tb[None, :]).values[0]
                gap = max(gap, abs(g1 - g2) / abs(g1))
            rec.add("green_symmetry", "spectral", gap, 1e-6, s=s, point=tb)
            E = cx.extend(basis, s, cyl, source=tb)
            vals = E.values
            fin = np.isfinite(vals)
            both = fin & fin[mirror]
            rec.add("extension_reflection", "spectral",
                    np.max(np.abs(vals[both] - vals[mirror][both])) / np.max(np.abs(vals[fin])),
                    ref_tol, s=s, point=tb)
            rec.add("extension_positive", "spectral", float(np.min(vals[:, :-1])), 0.0, ">", s=s, point=tb)
            F = cx.lateral_flux(E)
            rec.add("flux_nonpositive", "fd", float(np.max(F.values[:, :-1])), 0.0, "<=", s=s, point=tb)
            if ctx.domain.kind == "rectangle":
                key = {tuple(np.round(p, 12)): i for i, p in enumerate(F.points)}
                mp = F.points.copy()
                mp[:, a] *= -1
                idx = np.array([key[tuple(np.round(p, 12))] for p in mp])
                rec.add("flux_reflection", "fd", np.max(np.abs(F.values - F.values[idx])) / np.max(np.abs(F.values)),
                        ref_tol, s=s, point=tb)
            rec.add("flux_decay", "fd", _decay_mismatch(F, basis, s, cyl), 1e-2, s=s, point=tb)


def _decay_mismatch(F, basis, s, cyl):
    """Fitted log-decay rate of the total flux on y in [Y/2, 0.9 Y] against the first-mode profile."""
    y = cyl.y
    sel = (y >= 0.5 * y[-1]) & (y <= 0.9 * y[-1])
    total = np.abs(F.values[:, sel]).sum(axis=0)
    rate = -np.polyfit(y[sel], np.log(total), 1)[0]
    prof = cx.bessel_profile(math.sqrt(basis.lambda_1) * y[sel], s)
    pred = -np.polyfit(y[sel], np.log(prof), 1)[0]
    return abs(rate / pred - 1)


def _lemma_u1(ctx, rec):
    basis = ctx.basis
    a = ctx.cfg.axis
    for s in ctx.cfg.s:
        cyl = ctx.cylinder(s)
        for tb in ctx.points():
            U = _guard(rec, "hopf_sign", "fd", s, tb, lambda tb=tb: _u1_checks(rec, ctx, s, tb))
            if U is None:
                continue
            rep0 = cx.u1_representation(basis, tb, tb, s, cyl, axis=a)
            scale = float(np.max(np.abs(U.values[:, 0])))
            rec.add("u1_representation_odd", "boundary", abs(rep0) / scale, 1e-8, s=s, point=tb,
                    note="value at t = tbar")
            for t in ctx.generic():
                if ctx.domain.kind == "rectangle":
                    t = ctx.grid.points[ctx.grid.node_index(_snap(ctx.grid, t))]
                rep = cx.u1_representation(basis, tb, t, s, cyl, axis=a)
                fd = U.values[ctx.grid.node_index(t), 0]
                rec.add("u1_representation", "boundary_vs_fd", abs(rep - fd) / scale, 2e-2, s=s, point=t)
                tm = t.copy()
                tm[a] *= -1
                repm = cx.u1_representation(basis, tb, tm, s, cyl, axis=a)
                rec.add("u1_representation_odd", "boundary", abs(rep + repm) / scale, 1e-8, s=s, point=t)


def _snap(grid, t):
    """Nearest interior node."""
    return grid.points[int(np.argmin(np.abs(grid.points - t).max(axis=1)))]


def _lemma_grad_formula(ctx, rec):
    basis = ctx.basis
    tol = ctx.tol
    for s in ctx.cfg.s:
        cyl = ctx.cylinder(s)
        pts = ctx.generic()
        if ctx.cfg.numeric:
            pts = [_snap(ctx.grid, p) for p in pts]
        reps = _map(ctx, lambda p: _guard(rec, "route_agreement_fd", "all", s, p,
                                          lambda: evaluate_point(basis, p, s, 0, _routes(ctx), cyl, None, tol)),
                    pts)
        for p, rep in zip(pts, reps):
            if rep is None:
                continue
            rec.add("route_agreement_fd", "fd_gradient", rep.measures["grad_gap_fd"], tol.fd_agree, s=s, point=p)
            rec.add("route_agreement_fd", "fd_hessian", rep.measures["hess_gap_fd"], tol.fd_agree, s=s, point=p)
            rec.add("route_agreement_boundary", "boundary_gradient", rep.measures["grad_gap_boundary"],
                    tol.boundary_agree, s=s, point=p)
            rec.add("route_agreement_boundary", "boundary_hessian", rep.measures["hess_gap_boundary"],
                    tol.boundary_agree, s=s, point=p)


def _extension_selftest(ctx, rec):
    basis, grid = ctx.basis, ctx.grid
    z = np.linspace(0.0, 40.0, 4001)
    rec.add("profile_closed_form", "spectral",
            float(np.max(np.abs(cx.bessel_profile(z, 0.5) - np.exp(-z)))), 1e-10, s=0.5)
    N = basis.N
    for r in (0.5, 1.0, 2.0):
        for s in ctx.cfg.s:
            p = fractional_params(N, s)
            val = free_green_heat(r, p)
            rec.add("free_kernel_identity", "heat", abs(val / (p.c_fund * r ** (2 * s - N)) - 1), 1e-10, s=s,
                    point=(r,))
    lam1 = basis.lambda_1
    for s in ctx.cfg.s:
        p = fractional_params(N, s)
        # (1 - h_s(z)) / z^{2s} = C + O(z^{2-2s}); eliminate the first correction
        z = np.array([1e-4, 1e-5])
        f = p.kappa * 2 * s * (1 - cx.bessel_profile(z, s)) / z ** (2 * s)
        r = (z[1] / z[0]) ** (2 - 2 * s)
        lim = (f[1] - r * f[0]) / (1 - r)
        rec.add("kappa_trace_identity", "spectral", abs(lim - 1), 1e-6, s=s)
        cyl = ctx.cylinder(s)
        fd = _guard(rec, "conormal_trace", "fd", s, None,
                    lambda: cx.extend(basis, s, cyl, coeffs=[1.0], route="fd"))
        if fd is None:
            continue
        sp = cx.extend(basis, s, cyl, coeffs=[1.0])
        exact = cx.neumann_trace(sp, exact=True)
        rec.add("conormal_trace", "spectral", float(np.max(np.abs(
            cx.neumann_trace(sp, exact=True) - lam1**s * basis.values(grid.points, [0])[:, 0]))), 1e-10, s=s)
        rec.add("conormal_trace", "fd", float(np.max(np.abs(cx.neumann_trace(fd) - exact))), 1e-3, s=s)
        rec.add("isometry", "fd", abs(cx.extension_energy(fd) / lam1**s - 1), 2e-3, s=s)
        n2 = min(2, basis.n_modes)
        two = cx.extend(basis, s, cyl, coeffs=np.ones(n2), route="fd")
        target = float(np.sum(basis.eigenvalues[:n2] ** s))
        rec.add("isometry", "fd_two_modes", abs(cx.extension_energy(two) / target - 1), 2e-3, s=s)
        n10 = min(10, basis.n_modes)
        a10 = 1.0 / np.arange(1, n10 + 1)
        ten = cx.extend(basis, s, cyl, coeffs=a10, route="fd")
        target = float(np.sum(a10**2 * basis.eigenvalues[:n10] ** s))
        rec.add("isometry", "fd_ten_modes", abs(cx.extension_energy(ten) / target - 1), 2e-3, s=s)
        if s == 0.5 and ctx.domain.kind != "ellipse":
            rec.add("profile_closed_form", "spectral_extension", float(np.max(np.abs(
                sp.values - basis.values(grid.points, [0]) * np.exp(-math.sqrt(lam1) * cyl.y)[None, :]))),
                1e-10, s=s)
        if ctx.domain.kind != "ellipse":
            order = _fd_order(ctx, s)
            rec.add("fd_extension_order", "fd", order, 1.8, ">", s=s, note="observed order, (2h, K/2) -> (h, K)")
        if isinstance(basis, GridBasis):
            continue  # the lattice kernel has no continuum pole
        t0 = np.zeros(N)
        d = float(ctx.domain.distance_to_boundary(t0[None, :])[0])
        rr = 1e-3 * d
        pts = np.array([t0 + rr * np.eye(N)[0], t0])
        ys = np.array([0.0, rr])
        E = heat_green(basis, t0, s, pts, ys, p)
        free = p.c_fund * rr ** (2 * s - N)
        gap = max(abs(E[0, 0] / free - 1), abs(E[1, 1] / free - 1))
        rec.add("free_space_asymptotics", "spectral", gap, 2e-2, s=s, point=t0, note=f"distance {rr:.3g}")


def _fd_order(ctx, s):
    errs = []
    base = ctx.cfg.domain_spec
    for scale, K in ((2.0, ctx.cfg.cylinder.k // 2), (1.0, ctx.cfg.cylinder.k)):
        dom, grid = build_domain(DomainSpec(base.kind, base.half_extents, base.spacing * scale))
        b = eigenbasis(dom, grid, 4)
        cyl = cx.make_cylinder(grid, b.lambda_1, K=K, gamma=ctx.cfg.cylinder.gamma, s=s,
                               y_max=ctx.cylinder(s).y_max)
        fd = cx.extend(b, s, cyl, coeffs=[1.0], route="fd")
        sp = cx.extend(b, s, cyl, coeffs=[1.0])
        errs.append(float(np.max(np.abs(fd.values - sp.values))))
    return math.log2(errs[0] / errs[1])


RUNNERS = {
    "theorem1": _theorem1,
    "theorem2": _theorem2,
    "lemma_symmetry": _lemma_symmetry,
    "lemma_u1": _lemma_u1,
    "lemma_grad_formula": _lemma_grad_formula,
    "extension_selftest": _extension_selftest,
}


def run_scenario(cfg: ScenarioConfig) -> VerificationReport:
    validate(cfg)
    ctx = _Context(cfg)
    rec = _Recorder()
    for ax in range(ctx.domain.N):
        c = verify_normal_condition(ctx.grid, ax)
        rec.add("normal_condition", "geometry", c.max_value, 1e-12, point=c.witness)
    RUNNERS[cfg.scenario](ctx, rec)
    return VerificationReport(cfg.scenario, rec.checks, ctx.environment())
