"""Compiled versus NumPy kernels.

Run ``python benchmarks/bench_kernels.py``.  Prints the median time per call
of each hot kernel under both backends and the speed ratio, followed by
the cost of one desk-scale solver step with each backend.
"""

import argparse
import timeit

import numpy as np

from slt import _kernels_py

try:
    from slt import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def cases(rng, n):
    shape = (1, n, n // 2 + 1)
    c = lambda: rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    r = lambda: rng.standard_normal((1, n, n))
    a, b = (rng.random((n, n // 2 + 1)) + 1j * rng.random((n, n // 2 + 1)) for _ in range(2))
    counts = np.repeat(rng.integers(2, 6, size=(64, 50)), 10, axis=1)
    return {
        "cn_update": (c(), c(), c(), a, b),
        "advect": (r(), r(), r(), r()),
        "crps_terms": (rng.standard_normal(128 * n), rng.standard_normal((8, 128 * n))),
        "jet_mask": (rng.standard_normal((500, n)),),
        "first_change": (counts, -1, 3),
    }


def median_call(fn, args, repeat):
    t = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(t))


def solver_step(backend, n, steps):
    import os
    import subprocess
    import sys

    code = (
        "import time; from slt import solver as sv\n"
        f"s = sv.BetaPlaneSolver(sv.SolverConfig(N={n}, beta=30.0, k_f=8.0, mu=0.04, epsilon=0.03, dt=1e-2))\n"
        "st = s.initial_state(1, seed=0); s.advance(st, 10)\n"
        f"t = time.perf_counter(); s.advance(st, {steps}); print((time.perf_counter() - t) / {steps})"
    )
    env = dict(os.environ, SLT_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=64, help="grid size")
    p.add_argument("--repeat", type=int, default=50)
    p.add_argument("--steps", type=int, default=2000)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numpy [us]':>12}{'compiled [us]':>15}{'ratio':>8}")
    for name, fargs in cases(rng, args.n).items():
        py = median_call(getattr(_kernels_py, name), fargs, args.repeat)
        if _compiled is None:
            print(f"{name:<14}{py * 1e6:>12.1f}{'n/a':>15}{'':>8}")
            continue
        cc = median_call(getattr(_compiled, name), fargs, args.repeat)
        print(f"{name:<14}{py * 1e6:>12.1f}{cc * 1e6:>15.1f}{py / cc:>8.2f}")
    py = solver_step("python", args.n, args.steps)
    cc = solver_step("compiled", args.n, args.steps)
    print(f"{'solver step':<14}{py * 1e6:>12.1f}{cc * 1e6:>15.1f}{py / cc:>8.2f}")


if __name__ == "__main__":
    main()
