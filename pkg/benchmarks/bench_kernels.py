"""Time the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time for each backend and
the speedup. Without a built extension only the Python column is shown.
"""

import argparse
import timeit

import numpy as np

from lmolab import kernels


def cases(rng):
    a64 = rng.standard_normal((64, 64))
    a12 = rng.standard_normal((6, 12))
    m = rng.standard_normal((192, 64))
    x, y = rng.random(400), rng.random(400)
    return {
        "jacobi_svd_columns 64x64": lambda k: k.jacobi_svd_columns(np.ascontiguousarray(a64.T).copy(), 64 * 2.2e-16, 100),
        "max_select 192x64 rows": lambda k: k.max_select(m, 1.0, 1),
        "sign_vector_max 6x12 beta=2": lambda k: k.sign_vector_max(a12, 2.0),
        "nondominated_mask n=400": lambda k: k.nondominated_mask(x, y),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = kernels.backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s}" + "".join(f"{name:>12s}" for name in impls) + ("     speedup" if len(impls) > 1 else ""))
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in impls.items():
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if "cython" in times and "python" in times:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
