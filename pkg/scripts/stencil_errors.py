"""Worst-case length overestimate of each neighbour stencil, isotropic and anisotropic."""

import numpy as np

from aronsson_lab.intrinsic import STENCILS, stencil_error

METRICS = {
    "identity": (1.0, 0.0, 1.0),
    "aniso (1.5, 0.4, 0.8)": (1.5, 0.4, 0.8),
    "strong (4, 0, 0.25)": (4.0, 0.0, 0.25),
}


def main():
    print("stencil  " + "  ".join(f"{k:>22s}" for k in METRICS))
    for n, offsets in sorted(STENCILS.items()):
        errs = []
        for a in METRICS.values():
            # distance uses the inverse of A as its metric
            Minv = np.linalg.inv(np.array([[a[0], a[1]], [a[1], a[2]]]))
            errs.append(stencil_error(offsets, [Minv[0, 0], Minv[0, 1], Minv[1, 1]]))
        print(f"{n:>7d}  " + "  ".join(f"{100 * e:>21.2f}%" for e in errs))


if __name__ == "__main__":
    main()
