"""Interior error of u_eps against the Aronsson function on [1,2]^2, over an eps ladder and two grids.

Prints a table of sup errors on the default interior subdomain. The error is
set by the ratio h/eps rather than by eps alone, so rows at small eps need
the finer grid before they improve.
"""

import argparse
import time
import warnings

import numpy as np

from aronsson_lab.coefficients import identity
from aronsson_lab.grid import Grid2D, ScalarField
from aronsson_lab.scenario import aronsson_function
from aronsson_lab.solver import EpsSchedule, SolveConfig, continuation, default_subdomain


def errors(n: int, ladder) -> list[float]:
    g = Grid2D.from_box(1, 2, 1, 2, n)
    data = ScalarField.from_function(g, aronsson_function)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = continuation(data, identity(g), SolveConfig(eps_schedule=EpsSchedule(values=tuple(ladder))))
    sub = default_subdomain(g)
    return [float(np.abs(s.u_eps.values - data.values)[sub].max()) for s in rep.solutions]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[33, 65, 129])
    ap.add_argument("--ladder", type=float, nargs="+", default=[1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    args = ap.parse_args()

    table = {}
    for n in args.sizes:
        t0 = time.perf_counter()
        table[n] = errors(n, args.ladder)
        print(f"# n={n} solved in {time.perf_counter() - t0:.1f} s")
    print("eps      " + "  ".join(f"h=1/{n - 1:<6d}" for n in args.sizes) + "  h/eps (finest)")
    for k, eps in enumerate(args.ladder):
        row = "  ".join(f"{table[n][k]:.3e}  " for n in args.sizes)
        print(f"{eps:.1e}  {row}  {1 / (args.sizes[-1] - 1) / eps:.3f}")


if __name__ == "__main__":
    main()
