"""Derive the per-step Newton-Schulz coefficients used by ``msign_newton_schulz``.

Each of the first ``steps - 1`` odd quintics p(x) = a x + b x^3 + c x^5 maximizes
min p over the current singular-value interval subject to p <= 1 (a linear
program on a dense log grid); the last one minimizes max |p(x) - 1|. The
starting interval is [lower, 1] for Frobenius-normalized input.

    python3 tools/derive_ns_schedule.py --lower 1e-3 --steps 5
"""

import argparse

import numpy as np
from scipy.optimize import linprog


def _solve(lo, hi, center, grid=6000):
    x = np.geomspace(lo, hi, grid)
    v = np.stack([x, x**3, x**5], axis=1)
    n = len(x)
    ones = np.ones((n, 1))
    if center:
        a_ub = np.vstack([np.hstack([v, -ones]), np.hstack([-v, -ones])])
        b_ub = np.concatenate([np.ones(n), -np.ones(n)])
        cost = [0, 0, 0, 1]
    else:
        a_ub = np.vstack([np.hstack([v, np.zeros((n, 1))]), np.hstack([-v, ones])])
        b_ub = np.concatenate([np.ones(n), np.zeros(n)])
        cost = [0, 0, 0, -1]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * 4, method="highs")
    a, b, c, _ = res.x
    xs = np.geomspace(lo, hi, 400_000)
    p = a * xs + b * xs**3 + c * xs**5
    return (a, b, c), p.min(), p.max()


def derive(lower, steps):
    lo, hi = lower, 1.0
    out = []
    for k in range(steps):
        coeffs, lo, hi = _solve(lo, hi, center=(k == steps - 1))
        out.append(coeffs)
    return out, (lo, hi)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--lower", type=float, default=1e-3)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    coeffs, interval = derive(args.lower, args.steps)
    for a, b, c in coeffs:
        print(f"    ({float(a)!r}, {float(b)!r}, {float(c)!r}),")
    print("# output singular values in", tuple(float(v) for v in interval))
