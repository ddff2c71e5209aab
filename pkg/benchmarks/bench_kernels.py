"""Timing comparison of the compiled sweep kernels against pure numpy.

Runs the moving-frame and Ricatti integrations on a family of grid
sizes, once with QUADRICA_NUMBA=1 and once with QUADRICA_NUMBA=0, and
prints wall times plus the speedup.  The two modes are executed in
subprocesses because the kernel backend is chosen at import time.

Usage: python3 benchmarks/bench_kernels.py [--sizes 33,65,129]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def workload(sizes):
    import numpy as np

    from quadrica import backlund, netgrid
    from quadrica.confocal import diagonal_qwc
    from quadrica.kernels import USE_NUMBA, warmup
    from quadrica.lmap import build_lmap

    warmup()
    Q = diagonal_qwc((1.7, 1.0))
    lm = build_lmap(Q)
    rows = []
    for m in sizes:
        grid = netgrid.GridSpec(n=2, extra=0, h=0.64 / (m - 1),
                                extent=(m, m))
        seed = netgrid.seed_diagonal(Q, lm, grid)
        R, _ = netgrid.soliton_rotation(grid, np.diag(lm.Apn).real)
        M = np.zeros(grid.shape + (2, 2), dtype=complex)
        origin = (0,) * grid.axes

        t0 = time.perf_counter()
        st = netgrid.integrate_moving_frame(
            R, M, np.zeros_like(M), (seed.V[origin], seed.Lam[origin]),
            lm, grid, substeps=2)
        t_frame = time.perf_counter() - t0

        t0 = time.perf_counter()
        backlund.integrate_ricatti(seed, lm, 0.3)
        t_ric = time.perf_counter() - t0
        rows.append({"m": m, "frame": t_frame, "ricatti": t_ric,
                     "numba": USE_NUMBA})
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="33,65,129")
    ap.add_argument("--inner", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if args.inner:
        json.dump(workload(sizes), sys.stdout)
        return

    results = {}
    for mode in ("1", "0"):
        env = dict(os.environ, QUADRICA_NUMBA=mode)
        out = subprocess.run(
            [sys.executable, __file__, "--inner", "--sizes", args.sizes],
            env=env, capture_output=True, text=True, check=True)
        results[mode] = json.loads(out.stdout)

    print(f"{'grid':>6} {'kernel':>8} {'numba [s]':>10} {'numpy [s]':>10} "
          f"{'speedup':>8}")
    for nb, np_ in zip(results["1"], results["0"]):
        for key in ("frame", "ricatti"):
            sp = np_[key] / nb[key] if nb[key] > 0 else float("inf")
            print(f"{nb['m']:>4}^2 {key:>8} {nb[key]:>10.4f} "
                  f"{np_[key]:>10.4f} {sp:>7.1f}x")


if __name__ == "__main__":
    main()
