"""Observed order of the two-phase solver on the unit disk.

For beta = 0, V = 0 the exact chemical potential is j_{0,1}^2 / 2. The script
prints h, phase-1 and phase-2 errors and the pairwise observed orders.

    python scripts/disk_convergence.py [--levels 4]
"""
import argparse

import numpy as np
from scipy.special import jn_zeros

from lsbec.flow import FlowConfig, ModelSpec, build_bundle, run_two_phase
from lsbec.geometry import Circle, Grid2D


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--h0", type=float, default=0.1)
    args = ap.parse_args()

    exact = jn_zeros(0, 1)[0] ** 2 / 2
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-10)
    rows = []
    for k in range(args.levels):
        h = args.h0 / 2**k
        b = build_bundle(Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, h), Circle(0, 0, 1))
        res = run_two_phase(ModelSpec(), b, cfg)
        rows.append((h, abs(res.mu_phase1 - exact), abs(res.mu - exact)))

    print(f"{'h':>10} {'err phase 1':>12} {'order':>6} {'err phase 2':>12} {'order':>6}")
    for i, (h, e1, e2) in enumerate(rows):
        o1 = o2 = ""
        if i:
            hp, e1p, e2p = rows[i - 1]
            o1 = f"{np.log(e1p / e1) / np.log(hp / h):6.2f}"
            o2 = f"{np.log(e2p / e2) / np.log(hp / h):6.2f}"
        print(f"{h:10.5f} {e1:12.3e} {o1:>6} {e2:12.3e} {o2:>6}")


if __name__ == "__main__":
    main()
