"""Compiled vs numpy flux kernels on Q1 and Q2 cell batches.

    python3 benchmarks/bench_kernels.py [--cells N] [--repeat R]

Prints the best-of-R wall time per kernel and backend, the speedup and the
largest deviation between the two results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from smartdwr.kernels import flux_jacobian_py, flux_residual_py
from smartdwr.quadrature import make_quadrature
from smartdwr.space import shape_functions

try:
    from smartdwr import _kernels
except ImportError:  # fallback only
    _kernels = None


def best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--p", type=float, default=4.0)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<10}{'deg':>4}{'cells':>8}{'python s':>12}{'compiled s':>12}{'speedup':>9}{'max diff':>11}")
    for degree in (1, 2):
        rule = make_quadrature(2 * degree + 3)
        _, DN = shape_functions(degree, rule.points)
        DN = np.ascontiguousarray(DN)
        nloc = DN.shape[1]
        U = rng.standard_normal((args.cells, nloc))
        h = np.full(args.cells, 1.0 / np.sqrt(args.cells))
        w = np.ascontiguousarray(rule.weights)
        for name, py, cy in (("residual", flux_residual_py, _kernels.flux_residual),
                             ("jacobian", flux_jacobian_py, _kernels.flux_jacobian)):
            a = py(U, DN, w, h, args.p, 1e-10)
            b = np.asarray(cy(U, DN, w, h, args.p, 1e-10))
            diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
            tp = best_of(lambda: py(U, DN, w, h, args.p, 1e-10), args.repeat)
            tc = best_of(lambda: cy(U, DN, w, h, args.p, 1e-10), args.repeat)
            print(f"{name:<10}{degree:>4}{args.cells:>8}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
