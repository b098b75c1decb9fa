"""Drift of U_1(., 0) and of the Robin Hessian boundary route when the cylinder height doubles."""
import argparse
import math

import numpy as np

from fracrobin import cs_extension as cx
from fracrobin.robin_calculus import robin_hessian
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--s", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--tbar", type=float, default=math.pi / 16, help="x_2 of the plane point")
    p.add_argument("--k", type=int, default=256)
    args = p.parse_args()

    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), math.pi / 64))
    basis = eigenbasis(domain, grid, 400)
    tb = np.array([0.0, args.tbar])
    print("s      Y_max    U1 drift   d1U1(Y)      d1U1(2Y)     -H11/2")
    for s in args.s:
        base = cx.make_cylinder(grid, basis.lambda_1, K=args.k, s=s)
        tall = cx.make_cylinder(grid, basis.lambda_1, K=2 * args.k, s=s, y_max=2 * base.y_max)
        U, U2 = (cx.solve_ui(basis, tb, 0, s, c) for c in (base, tall))
        drift = np.max(np.abs(U2.values[:, 0] - U.values[:, 0])) / np.max(np.abs(U.values[:, 0]))
        g, g2 = cx.ui_trace_gradient(U, tb)[0], cx.ui_trace_gradient(U2, tb)[0]
        ref = -0.5 * robin_hessian(basis, tb, s)[0, 0]
        print(f"{s:<6} {base.y_max:<8.3f} {drift:<10.2e} {g:<12.6e} {g2:<12.6e} {ref:.6e}")


if __name__ == "__main__":
    main()
