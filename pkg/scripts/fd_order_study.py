"""Observed order of the cylinder solver under (h, K) -> (h/2, 2K) for u = phi_1."""
import argparse
import math

import numpy as np

from fracrobin import cs_extension as cx
from fracrobin.spectral_basis import DomainSpec, build_domain, eigenbasis


def errors(s, h, K):
    domain, grid = build_domain(DomainSpec("rectangle", (math.pi / 2, math.pi / 2), h))
    basis = eigenbasis(domain, grid, 2)
    cyl = cx.make_cylinder(grid, basis.lambda_1, K=K, s=s)
    fd = cx.extend(basis, s, cyl, coeffs=[1.0], route="fd")
    sp = cx.extend(basis, s, cyl, coeffs=[1.0])
    phi = basis.values(grid.points, [0])[:, 0]
    return (np.max(np.abs(fd.values - sp.values)),
            abs(cx.extension_energy(fd) - basis.lambda_1**s),
            np.max(np.abs(cx.neumann_trace(fd) - basis.lambda_1**s * phi)))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--s", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--levels", type=int, default=3, help="meshes h = pi/32 ... pi/(32 2^(levels-1))")
    args = p.parse_args()
    for s in args.s:
        prev = None
        print(f"s = {s}")
        print("  h          K     sup err    energy err  trace err   orders")
        for lvl in range(args.levels):
            h, K = math.pi / (32 * 2**lvl), 128 * 2**lvl
            e = errors(s, h, K)
            orders = "" if prev is None else "  ".join(f"{math.log2(a / b):.2f}" for a, b in zip(prev, e))
            print(f"  {h:<10.5f} {K:<5d} {e[0]:<10.2e} {e[1]:<11.2e} {e[2]:<11.2e} {orders}")
            prev = e


if __name__ == "__main__":
    main()
