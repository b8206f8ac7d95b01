"""Compare the compiled and pure-Python kernel lanes.

Times the hot primitives in-process (both lane modules imported directly)
and one end-to-end traveling-wave solve per lane in subprocesses, since the
lane is fixed at import time.

Usage: python benchmarks/kernel_bench.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hjbport._kernels import _fallback

try:
    from hjbport._kernels import _core
except ImportError:
    _core = None


def time_call(fn, *args, reps=5):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(quick: bool):
    rng = np.random.default_rng(0)
    n = 3200
    reps = 3 if quick else 10
    lower = rng.uniform(-1, 1, n)
    upper = rng.uniform(-1, 1, n)
    diag = np.abs(lower) + np.abs(upper) + 1.0
    rhs = rng.normal(size=n)

    npts = 321
    vals = np.cumsum(rng.uniform(0.01, 0.1, npts))
    slopes = rng.uniform(0.0, 2.0, npts)
    queries = rng.uniform(0.0, (npts - 1) * 0.05, n)

    field = rng.normal(size=n)

    lanes = [("python", _fallback)] + ([("compiled", _core)] if _core else [])
    rows = []
    for name, lane in lanes:
        t_thomas = time_call(lane.thomas_solve, lower, diag, upper, rhs, reps=reps)
        t_hermite = time_call(
            lane.hermite_eval, 0.0, 0.05, vals, slopes, queries, reps=reps
        )
        t_trapz = time_call(lane.cumtrapz_uniform, field, 0.0125, reps=reps)
        rows.append((name, t_thomas, t_hermite, t_trapz))

    print(f"primitive timings (n={n}, best of {reps}):")
    print(f"{'lane':<10} {'thomas_solve':>14} {'hermite_eval':>14} {'cumtrapz':>12}")
    for name, t1, t2, t3 in rows:
        print(f"{name:<10} {t1 * 1e6:>12.1f}us {t2 * 1e6:>12.1f}us {t3 * 1e6:>10.1f}us")
    if len(rows) == 2:
        print(
            "speedups (compiled vs python): "
            f"thomas {rows[0][1] / rows[1][1]:.1f}x, "
            f"hermite {rows[0][2] / rows[1][2]:.1f}x, "
            f"cumtrapz {rows[0][3] / rows[1][3]:.1f}x"
        )


def bench_end_to_end(quick: bool):
    h = 0.05 if quick else 0.025
    code = (
        "import time; t0=time.perf_counter(); "
        "from hjbport.benchmark import run_traveling_wave; "
        f"r = run_traveling_wave({h}); "
        "import hjbport; "
        "print(f'{hjbport.backend_name()}: {time.perf_counter()-t0:.2f}s "
        "errL2={r.err_l2:.4e}')"
    )
    print(f"\nend-to-end traveling-wave solve (h={h}, includes import):", flush=True)
    for env_val in ("0", "1"):
        env = dict(os.environ, HJBPORT_PURE_PYTHON=env_val)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true")
    args = parser.parse_args()
    bench_primitives(args.quick)
    bench_end_to_end(args.quick)
