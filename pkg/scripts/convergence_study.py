"""Grid refinement table for both solvers on the reference parameters.

Prints value and strategy at t=0 for successively finer time / belief grids, so the
discretisation error of the defaults can be read off directly.
"""
import argparse
import time

import numpy as np

from regime_impact.full_info import solve_full, value_full
from regime_impact.model import reference_params
from regime_impact.partial_info import Grid2, cfl_rate, solve_partial, value_partial


def full_rows(params, impact, steps):
    for n in steps:
        t0 = time.perf_counter()
        value, strat = solve_full(params, impact, n_steps=n)
        v = [value_full(params, value, 0.0, params.w0, i) for i in range(params.K)]
        yield n, v, strat.h_star[0], time.perf_counter() - t0


def partial_rows(params, impact, n_pis):
    for n_pi in n_pis:
        # keep the explicit scheme at the same CFL number as the grid is refined
        n_t = int(np.ceil(cfl_rate(params, n_pi) * params.T / 0.8))
        t0 = time.perf_counter()
        table = solve_partial(params, Grid2(n_t, n_pi, params.T), impact)
        v = value_partial(params, table, 0.0, params.w0, params.pi0)
        yield n_t, n_pi, v, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-impact", action="store_true")
    ap.add_argument("--skip-partial", action="store_true")
    args = ap.parse_args()
    params = reference_params()
    impact = not args.no_impact

    print("full information: n_steps | V(0,e1) V(0,e2) | h*(0,e1) h*(0,e2) | seconds")
    prev = None
    for n, v, h, sec in full_rows(params, impact, (250, 500, 1000, 2000, 4000)):
        delta = "" if prev is None else f"  dV={max(abs(a - b) for a, b in zip(v, prev)):.2e}"
        print(f"{n:6d} | {v[0]:.8f} {v[1]:.8f} | {h[0]:+.5f} {h[1]:+.5f} | {sec:6.2f}{delta}")
        prev = v

    if args.skip_partial:
        return
    print("\npartial information: n_t n_pi | V(0,pi0) | seconds")
    prev = None
    for n_t, n_pi, v, sec in partial_rows(params, impact, (50, 100, 200, 400)):
        delta = "" if prev is None else f"  dV={abs(v - prev):.2e}"
        print(f"{n_t:6d} {n_pi:4d} | {v:.8f} | {sec:6.2f}{delta}")
        prev = v


if __name__ == "__main__":
    main()
