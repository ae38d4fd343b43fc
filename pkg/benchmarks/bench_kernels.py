"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Numba timings exclude the first (compiling) call. With
NBEST_SLU_DISABLE_NUMBA=1 the ``*_numba`` names run as plain Python loops,
which is what the fallback would cost without the vectorized variant.
"""

import argparse
import json
import time

import numpy as np

from nbest_slu import kernels


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for a in args:
            fn(*a)
        times.append(time.perf_counter() - t0)
    return min(times)


def edit_cases(rng, count, length):
    return [(rng.integers(0, 50, size=length), rng.integers(0, 50, size=length + int(rng.integers(-3, 4))))
            for _ in range(count)]


def roc_cases(rng, count, size):
    return [(rng.integers(0, 101, size=size) / 100.0, rng.integers(0, 2, size=size)) for _ in range(count)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    suites = [
        ("edit_distance short (2000 x len 8)", kernels.edit_distance_numpy, kernels.edit_distance_numba,
         edit_cases(rng, 2000, 8)),
        ("edit_distance long (50 x len 400)", kernels.edit_distance_numpy, kernels.edit_distance_numba,
         edit_cases(rng, 50, 400)),
        ("roc_counts (200 x 2000 scores)", kernels.roc_counts_numpy, kernels.roc_counts_numba,
         roc_cases(rng, 200, 2000)),
    ]
    rows = []
    print(f"numba enabled: {kernels.NUMBA_ENABLED}")
    print(f"{'case':<38} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, np_fn, nb_fn, cases in suites:
        nb_fn(*cases[0])  # compile
        t_np = best_of(np_fn, cases, args.repeat)
        t_nb = best_of(nb_fn, cases, args.repeat)
        rows.append({"case": name, "numpy_s": t_np, "numba_s": t_nb})
        print(f"{name:<38} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba_enabled": kernels.NUMBA_ENABLED, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
