"""Fast spectral vs direct collision on random smooth distributions."""
import argparse

import numpy as np

from nsrkinetic.spectral_collision import (CollisionKernelSpec, DirectQuadrature,
                                           build_spectral_operator, direct_collision_values,
                                           fast_collision_values)
from nsrkinetic.velocity_grid import build_uniform_grid


def smooth(grid, rng, kappa=0.5, terms=3):
    half = 0.5 * (grid.axes[0].upper - grid.axes[0].lower)
    s = np.zeros(grid.n_v)
    for _ in range(terms):
        d = rng.normal(size=3)
        k = np.round(d / np.linalg.norm(d))
        if not k.any():
            k[0] = 1.0
        s += rng.uniform(0.3, 1.0) * np.cos(np.pi / half * (grid.points @ k) + rng.uniform(0, 2 * np.pi))
    f = np.exp(kappa * s)
    return f / (f @ grid.weights)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[8, 12])
    ap.add_argument("--cases", type=int, default=10)
    ap.add_argument("--half", type=float, default=5.0)
    args = ap.parse_args()
    spec = CollisionKernelSpec.for_knudsen(1.0, sphere_points=(16, 16))
    quad = DirectQuadrature(radial=16, g_sphere=(14, 28), sigma=(14, 14))
    print("case  " + "  ".join(f"{n:>3d}^3 gap" for n in args.n))
    rows = []
    for n in args.n:
        g = build_uniform_grid(-args.half, args.half, (n, n, n))
        op = build_spectral_operator(g, spec)
        col = []
        for seed in range(args.cases):
            f = smooth(g, np.random.default_rng(seed))
            qd = direct_collision_values(f, None, g, spec, quad)
            col.append(np.linalg.norm(fast_collision_values(f, op) - qd) / np.linalg.norm(qd))
        rows.append(col)
    for i, gaps in enumerate(zip(*rows)):
        print(f"{i:4d}  " + "  ".join(f"{x:10.3e}" for x in gaps))


if __name__ == "__main__":
    main()
