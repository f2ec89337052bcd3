"""Grid refinement study of the reference solver on the smooth 1D wave."""
import argparse

import numpy as np

from nsrkinetic.moments import KineticConfig
from nsrkinetic.problems import get_problem
from nsrkinetic.reference_solver import FvmConfig, solve_problem
from nsrkinetic.velocity_grid import build_uniform_grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kn", type=float, default=0.1)
    ap.add_argument("--cells", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--nv", type=int, default=16)
    args = ap.parse_args()
    grid = build_uniform_grid(-8, 8, (args.nv,) * 3)
    prob = get_problem("wave1d")
    rho, prev = {}, None
    for n in args.cells:
        rec = solve_problem(prob, grid, FvmConfig(cells=(n,)), KineticConfig(kn=args.kn))
        rho[n] = rec.field("rho")
        drift = np.abs(rec.totals[-1] - rec.totals[0]).max() / prob.t_end
        line = f"N_x={n:4d}  drift/t {drift:.1e}"
        if prev is not None:
            coarse = 0.5 * (rho[n][0::2] + rho[n][1::2])
            d = np.linalg.norm(coarse - rho[prev]) / np.sqrt(prev)
            line += f"  |rho_{n} - rho_{prev}| {d:.3e}"
        print(line)
        prev = n


if __name__ == "__main__":
    main()
