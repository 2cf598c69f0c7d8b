"""Grid value iteration against the exact LQR value on a scalar system.

Prints the relative error on the interior third of the grid for a range
of grid sizes, showing where the boundary clamp stops mattering.

    python3 scripts/grid_vs_lqr.py --gamma 0.9 --counts 51 101 201 401
"""
import argparse
import time

import numpy as np

from recurlab.riccati_lqr import lqr_oracle
from recurlab.system_model import NoiseSpec, linear_system
from recurlab.value_iteration import StateGrid, control_grid, make_quadrature, value_iterate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=0.5)
    ap.add_argument("--l", type=float, default=0.1)
    ap.add_argument("--gamma", type=float, default=0.9)
    ap.add_argument("--half-width", type=float, default=4.0)
    ap.add_argument("--counts", type=int, nargs="+", default=[51, 101, 201, 401])
    ap.add_argument("--controls", type=int, default=301)
    ap.add_argument("--quad", type=int, default=8)
    args = ap.parse_args()

    spec = linear_system([[args.a]], [[1.0]], [[args.l]], [[1.0]], [[1.0]], NoiseSpec.gaussian([0.0], [[1.0]]))
    exact = lqr_oracle(spec, args.gamma)
    h = args.half_width
    U = control_grid([[-1.5 * h / 4, 1.5 * h / 4]], args.controls)
    quad = make_quadrature(spec.noise, args.quad)
    print(f"P = {exact.P[0, 0]:.6f}  K = {exact.K[0, 0]:.6f}  offset = {exact.noise_offset:.6f}")
    print(f"{'nodes':>6} {'iters':>6} {'interior':>10} {'whole':>10} {'seconds':>8}")
    for n in args.counts:
        t0 = time.perf_counter()
        grid = StateGrid.uniform([[-h, h]], [n])
        V = value_iterate(spec, grid, U, quad, args.gamma)
        x = grid.nodes
        rel = np.abs(V.values - exact(x)) / exact(x)
        inner = np.abs(x[:, 0]) <= h / 3
        print(f"{n:6d} {V.iterations:6d} {rel[inner].max():10.2e} {rel.max():10.2e} "
              f"{time.perf_counter() - t0:8.2f}")


if __name__ == "__main__":
    main()
