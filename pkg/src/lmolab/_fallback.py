"""Pure-Python/numpy versions of the kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built or when
``LMOLAB_PURE_PYTHON=1`` is set.
"""

import numpy as np


def jacobi_svd_columns(cols, tol, max_sweeps):
    n = cols.shape[0]
    vt = np.eye(n)
    sweep = 0
    negligible = float(np.sum(cols * cols)) * tol * tol
    rotated = True
    while rotated and sweep < max_sweeps:
        rotated = False
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = cols[p], cols[q]
                alpha = float(ap @ ap)
                beta = float(aq @ aq)
                gamma = float(ap @ aq)
                if alpha <= negligible or beta <= negligible:
                    continue
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                cols[p], cols[q] = c * ap - s * aq, s * ap + c * aq
                vp, vq = vt[p].copy(), vt[q].copy()
                vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
    return vt, sweep, not rotated


def max_select(m, radius, axis):
    a = np.abs(m)
    best = a.max(axis=axis, keepdims=True)
    hit = (a == best) & (best > 0)
    count = hit.sum(axis=axis, keepdims=True)
    share = np.where(count > 0, radius / np.maximum(count, 1), 0.0)
    return np.where(hit, np.sign(m) * share, 0.0)


def _norms(y, beta):
    if beta == 1.0:
        return np.abs(y).sum(axis=1)
    if beta == 2.0:
        return np.sqrt((y * y).sum(axis=1))
    return np.abs(y).max(axis=1)


def sign_vector_max(a, beta, chunk_bits=14):
    m, n = a.shape
    if n == 0:
        return 0.0
    free = n - 1
    best = 0.0
    # last coordinate pinned to +1: s and -s give the same norm
    base = a[:, -1]
    head = a[:, :-1]
    total = 1 << free
    chunk = 1 << min(chunk_bits, free)
    bits = np.arange(free)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        signs = 1.0 - 2.0 * ((idx[:, None] >> bits) & 1)
        y = signs @ head.T + base
        best = max(best, float(_norms(y, beta).max()))
    return best


def nondominated_mask(x, y):
    le = (x[None, :] <= x[:, None]) & (y[None, :] <= y[:, None])
    lt = (x[None, :] < x[:, None]) | (y[None, :] < y[:, None])
    dominated = le & lt
    np.fill_diagonal(dominated, False)
    return ~dominated.any(axis=1)
