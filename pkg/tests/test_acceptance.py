"""One test per acceptance criterion; each prints a single pass/fail line."""
import math
import time

import numpy as np
from conftest import record_criterion
from fracrobin import cs_extension as cx
from fracrobin.green_kernel import free_green_heat, robin_value
from fracrobin.robin_calculus import NUMERIC_TOLERANCES, robin_gradient, robin_hessian
from fracrobin.scenarios import config_from_dict, emit_report, run_scenario
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis, fractional_params

S_VALUES = (0.3, 0.5, 0.7)
# grid nodes of the default mesh h = pi/64 on {x1 = 0}
PLANE_POINTS = [np.array([0.0, k * math.pi / 64]) for k in (-8, -4, 0, 4, 8)]
GENERIC_POINTS = [np.array(p) for p in
                  [(0.3, 0.4), (-0.6, 0.2), (0.5, -0.7), (-0.25, -0.45), (0.8, 0.6), (-0.9, -0.3)]]


def _finish(number, failures, detail):
    record_criterion(number, not failures, detail if not failures else "; ".join(failures[:4]))
    assert not failures, failures


def test_criterion_1_plane_gradient(square, cylinders):
    domain, _, basis = square
    diam = domain.diameter
    fails, worst = [], {"spectral": 0.0, "fd": 0.0, "boundary": 0.0}
    start = time.perf_counter()
    for s in S_VALUES:
        for t in PLANE_POINTS:
            g = {r: robin_gradient(basis, t, s, route=r, cylinder=cylinders[s]) for r in worst}
            H11 = robin_hessian(basis, t, s)[0, 0]
            scale = max(abs(g["spectral"][1]), H11 * diam)
            bounds = {"spectral": 1e-12 * scale, "fd": 1e-6 * scale, "boundary": 1e-3 * H11 * diam}
            for r, b in bounds.items():
                worst[r] = max(worst[r], abs(g[r][0]) / b)
                if not abs(g[r][0]) <= b:
                    fails.append(f"{r} d1R={g[r][0]:.2e} at s={s}, t={tuple(t)}")
    elapsed = time.perf_counter() - start
    if elapsed > 60:
        fails.append(f"runtime {elapsed:.1f}s > 60s")
    _finish(1, fails, "|d1R|/bound max: " + ", ".join(f"{r} {v:.1e}" for r, v in worst.items())
            + f"; {elapsed:.1f}s")


def test_criterion_2_plane_hessian(square):
    _, _, basis = square
    fails, worst = [], 0.0
    for s in S_VALUES:
        for t in PLANE_POINTS:
            for route in ("spectral", "fd"):
                H = robin_hessian(basis, t, s, route=route)
                if not H[0, 0] > 0:
                    fails.append(f"{route} H11={H[0, 0]:.3e} at s={s}, t={tuple(t)}")
                ratio = abs(H[0, 1]) / H[0, 0]
                worst = max(worst, ratio)
                if not ratio <= 1e-3:
                    fails.append(f"{route} |H12|/H11={ratio:.2e} at s={s}, t={tuple(t)}")
    _finish(2, fails, f"max |H12|/H11 = {worst:.1e}, H11 > 0 at all points")


def test_criterion_3_center(square, rectangle, cylinders):
    fails = []
    origin = np.zeros(2)
    sq_domain, _, sq = square
    for s in S_VALUES:
        H11 = robin_hessian(sq, origin, s)[0, 0]
        scale = H11 * sq_domain.diameter
        bounds = {"spectral": 1e-12, "fd": 1e-6, "boundary": 1e-3}
        for route, b in bounds.items():
            g = robin_gradient(sq, origin, s, route=route, cylinder=cylinders[s])
            if not np.max(np.abs(g)) <= b * scale:
                fails.append(f"square {route} |grad|={np.max(np.abs(g)):.2e} at s={s}")
        H = robin_hessian(sq, origin, s)
        if not abs(H[0, 0] - H[1, 1]) <= 1e-10 * H[0, 0]:
            fails.append(f"square H11-H22={H[0, 0] - H[1, 1]:.2e} at s={s}")
        if not (H[0, 0] > 0 and H[1, 1] > 0 and abs(H[0, 1]) <= 1e-3 * H[0, 0]):
            fails.append(f"square Hessian {H.tolist()} at s={s}")
    _, _, rect = rectangle
    gaps = []
    for s in S_VALUES:
        H = robin_hessian(rect, origin, s)
        Hfd = robin_hessian(rect, origin, s, route="fd")
        d = np.diag(H)
        gap = abs(d[0] - d[1]) / d.max()
        gaps.append(gap)
        if not (gap > 0.05 and d.min() > 0):
            fails.append(f"rectangle diag {d} at s={s}")
        for name, M in (("spectral", H), ("fd", Hfd)):
            if not abs(M[0, 1]) <= 1e-3 * np.min(np.diag(M)):
                fails.append(f"rectangle {name} H12={M[0, 1]:.2e} at s={s}")
    _finish(3, fails, f"square H11=H22 exactly; rectangle relative diagonal gap >= {min(gaps):.2f}")


def test_criterion_4_route_triangle(square, cylinders):
    _, _, basis = square
    fails, fd_worst, bd_worst = [], 0.0, 0.0
    start = time.perf_counter()
    for s in S_VALUES:
        for t in GENERIC_POINTS:
            g_sp = robin_gradient(basis, t, s)
            g_fd = robin_gradient(basis, t, s, route="fd")
            g_bd = robin_gradient(basis, t, s, route="boundary", cylinder=cylinders[s])
            e_fd = np.linalg.norm(g_fd - g_sp) / np.linalg.norm(g_sp)
            e_bd = np.linalg.norm(g_bd - g_sp) / np.linalg.norm(g_sp)
            fd_worst, bd_worst = max(fd_worst, e_fd), max(bd_worst, e_bd)
            if not e_fd <= 1e-2:
                fails.append(f"fd gap {e_fd:.2e} at s={s}, t={tuple(t)}")
            if not e_bd <= 2e-2:
                fails.append(f"boundary gap {e_bd:.2e} at s={s}, t={tuple(t)}")
    elapsed = time.perf_counter() - start
    if elapsed > 600:
        fails.append(f"runtime {elapsed:.1f}s > 600s")
    _finish(4, fails, f"fd gap {fd_worst:.1e} (<= 1e-2), boundary gap {bd_worst:.1e} (<= 2e-2); {elapsed:.1f}s")


def test_criterion_5_u1(square, cylinders):
    _, grid, basis = square
    fails, worst = [], 0.0
    for s in S_VALUES:
        for tb in PLANE_POINTS:
            U = cx.solve_ui(basis, tb, 0, s, cylinders[s])
            u0 = U.values[:, 0]
            norm = np.max(np.abs(u0))
            k = grid.node_index(tb)
            if not abs(u0[k]) <= 1e-6 * norm:
                fails.append(f"U1(tbar)={u0[k]:.2e} at s={s}, tbar={tuple(tb)}")
            left = grid.points[:, 0] < -0.5 * grid.spacing[0]
            if not np.all(u0[left] > 0):
                fails.append(f"U1 not positive on x1<0 at s={s}, tbar={tuple(tb)}")
            g = cx.ui_trace_gradient(U, tb)
            if not g[0] < 0:
                fails.append(f"d1U1={g[0]:.2e} at s={s}, tbar={tuple(tb)}")
            H = robin_hessian(basis, tb, s)
            for i in range(2):
                err = abs(g[i] + 0.5 * H[0, i]) / (0.5 * H[0, 0])
                worst = max(worst, err)
                if not err <= 2e-2:
                    fails.append(f"cross identity i={i + 1} error {err:.2e} at s={s}, tbar={tuple(tb)}")
    _finish(5, fails, f"U1(tbar)=0, U1>0 on x1<0, d1U1<0; cross identity max error {worst:.1e}")


def _fd_phi1_error(s, h, K):
    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), h))
    basis = eigenbasis(domain, grid, 4)
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=K, gamma=2.0, s=s)
    fd = cx.extend(basis, s, cyl, coeffs=[1.0], route="fd")
    sp = cx.extend(basis, s, cyl, coeffs=[1.0])
    return basis, cyl, fd, sp, float(np.max(np.abs(fd.values - sp.values)))


def test_criterion_6_extension_selftest():
    fails = []
    z = np.linspace(0, 50, 5001)
    prof_err = float(np.max(np.abs(cx.bessel_profile(z, 0.5) - np.exp(-z))))
    if not prof_err <= 1e-10:
        fails.append(f"profile error {prof_err:.1e}")
    basis, cyl, fd, sp, err_fine = _fd_phi1_error(0.5, math.pi / 64, 256)
    *_, err_coarse = _fd_phi1_error(0.5, math.pi / 32, 128)
    order = math.log2(err_coarse / err_fine)
    phi1 = basis.values(basis.grid.points, [0])[:, 0]
    closed = phi1[:, None] * np.exp(-math.sqrt(basis.lambda_1) * cyl.y)[None, :]
    sp_err = float(np.max(np.abs(sp.values - closed)))
    if not sp_err <= 1e-10:
        fails.append(f"spectral extension error {sp_err:.1e}")
    if not order >= 1.8:
        fails.append(f"fd order {order:.2f}")
    energy = {}
    trace = {}
    for s in S_VALUES:
        b, c, f, _, _ = (basis, cyl, fd, sp, None) if s == 0.5 else _fd_phi1_error(s, math.pi / 64, 256)
        energy[s] = abs(cx.extension_energy(f) / b.lambda_1**s - 1)
        trace[s] = float(np.max(np.abs(cx.neumann_trace(f) - b.lambda_1**s * phi1)))
        if not energy[s] <= 2e-3:
            fails.append(f"energy error {energy[s]:.1e} at s={s}")
        if not trace[s] <= 1e-3:
            fails.append(f"trace error {trace[s]:.1e} at s={s}")
    _finish(6, fails, f"profile {prof_err:.0e}, spectral {sp_err:.0e}, fd order {order:.2f}, "
                      f"energy {max(energy.values()):.1e}, trace {max(trace.values()):.1e}")


def test_criterion_7_oracles(square):
    _, _, basis = square
    fails, gaps, ids = [], [], []
    origin = np.zeros(2)
    for s in S_VALUES:
        heat = robin_value(basis, origin, s).value
        ex = robin_value(basis, origin, s, route="extrapolation").value
        gap = abs(heat - ex) / heat
        gaps.append(gap)
        if not gap <= 1e-2:
            fails.append(f"heat vs extrapolation {gap:.1e} at s={s}")
        p = fractional_params(2, s)
        for r in (0.5, 1.0, 2.0):
            err = abs(free_green_heat(r, p) / (p.c_fund * r ** (2 * s - 2)) - 1)
            ids.append(err)
            if not err <= 1e-10:
                fails.append(f"free identity {err:.1e} at s={s}, r={r}")
    _finish(7, fails, f"heat vs extrapolation max {max(gaps):.1e}; free identity max {max(ids):.1e}")


def test_criterion_8_ellipse(tmp_path):
    cfg = config_from_dict({"scenario": "theorem1", "domain": {"kind": "ellipse", "half_extents": [1.0, 0.6]},
                            "s": [0.3]})
    report = run_scenario(cfg)
    failed = [f"{c.claim_id}/{c.route} {c.value:.2e} at {c.point}" for c in report.checks if not c.passed]
    hopf = [c for c in report.checks if c.claim_id == "hopf_sign"]
    if len(hopf) != 3:
        failed.append(f"{len(hopf)} Hopf checks instead of 3")
    if any(c.tolerance != 0.0 or c.relation != "<" for c in hopf):
        failed.append("Hopf checks are not sign-only")
    gaps = [c.value for c in report.checks if c.claim_id.startswith("route_agreement")]
    numeric = NUMERIC_TOLERANCES
    assert numeric.fd_agree == 5e-3 and numeric.offdiag == 5e-3
    _finish(8, failed, f"{len(report.checks)} checks on 3 plane points, route gaps max {max(gaps):.1e}, "
                       f"Hopf sign at all points")


def test_criterion_9_determinism(tmp_path):
    runs = [("theorem2", [0.5, 0.7], False), ("theorem2", [0.5, 0.7], False), ("theorem2", [0.5, 0.7], True),
            ("lemma_grad_formula", [0.3], False), ("lemma_grad_formula", [0.3], True)]
    blobs = {}
    for k, (scenario, s, parallel) in enumerate(runs):
        cfg = config_from_dict({"scenario": scenario, "s": s, "parallel": parallel})
        path = tmp_path / f"run{k}.json"
        emit_report(run_scenario(cfg), "json", path)
        blobs.setdefault(scenario, []).append(path.read_bytes())
    fails = [f"{name} reports differ across runs" for name, b in blobs.items() if len(set(b)) != 1]
    _finish(9, fails, f"{sum(len(b) for b in blobs.values())} runs of 2 scenarios byte-identical "
                      f"(serial and parallel)")
