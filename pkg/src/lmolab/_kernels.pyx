# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Each function has a pure-Python twin in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_svd_columns(double[:, ::1] cols, double tol, int max_sweeps):
    """One-sided Jacobi on the rows of ``cols`` (each row is a column of A).

    Rotates rows in place until they are mutually orthogonal. Rows whose
    squared norm is below ``tol**2`` times the total are treated as numerical
    zeros and left alone (they would otherwise rotate noise forever). Returns
    ``(vt, sweeps, converged)`` where row i of ``vt`` is column i of V.
    """
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t m = cols.shape[1]
    vt_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] vt = vt_arr
    cdef Py_ssize_t p, q, k
    cdef double alpha, beta, gamma, zeta, t, c, s, ap, aq
    cdef double total = 0.0, negligible
    cdef int sweep = 0
    for p in range(n):
        for k in range(m):
            total += cols[p, k] * cols[p, k]
    negligible = total * tol * tol
    cdef bint rotated = True
    while rotated and sweep < max_sweeps:
        rotated = False
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    ap = cols[p, k]
                    aq = cols[q, k]
                    alpha += ap * ap
                    beta += aq * aq
                    gamma += ap * aq
                if alpha <= negligible or beta <= negligible:
                    continue
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    ap = cols[p, k]
                    aq = cols[q, k]
                    cols[p, k] = c * ap - s * aq
                    cols[q, k] = s * ap + c * aq
                for k in range(n):
                    ap = vt[p, k]
                    aq = vt[q, k]
                    vt[p, k] = c * ap - s * aq
                    vt[q, k] = s * ap + c * aq
    return vt_arr, sweep, not rotated


def max_select(double[:, ::1] m, double radius, int axis):
    """LMO of the l1 norm applied per row (axis=1) or per column (axis=0).

    Entries tying for the largest magnitude share ``radius`` equally and
    carry the sign of ``m``; all-zero lines stay zero.
    """
    cdef Py_ssize_t rows = m.shape[0]
    cdef Py_ssize_t cols = m.shape[1]
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, count
    cdef double best, a, share
    if axis == 1:
        for i in range(rows):
            best = 0.0
            for j in range(cols):
                a = fabs(m[i, j])
                if a > best:
                    best = a
            if best == 0.0:
                continue
            count = 0
            for j in range(cols):
                if fabs(m[i, j]) == best:
                    count += 1
            share = radius / count
            for j in range(cols):
                if fabs(m[i, j]) == best:
                    out[i, j] = share if m[i, j] > 0 else -share
    else:
        for j in range(cols):
            best = 0.0
            for i in range(rows):
                a = fabs(m[i, j])
                if a > best:
                    best = a
            if best == 0.0:
                continue
            count = 0
            for i in range(rows):
                if fabs(m[i, j]) == best:
                    count += 1
            share = radius / count
            for i in range(rows):
                if fabs(m[i, j]) == best:
                    out[i, j] = share if m[i, j] > 0 else -share
    return out_arr


cdef double _vec_norm(double[::1] y, double beta) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    if beta == 1.0:
        for k in range(y.shape[0]):
            acc += fabs(y[k])
        return acc
    if beta == 2.0:
        for k in range(y.shape[0]):
            acc += y[k] * y[k]
        return sqrt(acc)
    for k in range(y.shape[0]):
        if fabs(y[k]) > acc:
            acc = fabs(y[k])
    return acc


def sign_vector_max(double[:, ::1] a, double beta):
    """max over s in {-1, 1}^n of ||A s||_beta, beta in {1, 2, inf}.

    Gray-code walk over half of the hypercube (s and -s give the same norm),
    updating A s with one column per step.
    """
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    if n == 0:
        return 0.0
    y_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] y = y_arr
    s_arr = np.ones(n, dtype=np.float64)
    cdef double[::1] s = s_arr
    cdef Py_ssize_t i, j, k
    for i in range(m):
        for j in range(n):
            y[i] += a[i, j]
    cdef double best = _vec_norm(y, beta)
    cdef double val
    cdef unsigned long long step, total, g
    total = 1ULL << (n - 1)
    for step in range(1, total):
        # index of the bit that changes between gray(step-1) and gray(step)
        g = step
        j = 0
        while (g & 1) == 0:
            g >>= 1
            j += 1
        for k in range(m):
            y[k] -= 2.0 * s[j] * a[k, j]
        s[j] = -s[j]
        val = _vec_norm(y, beta)
        if val > best:
            best = val
    return best


def nondominated_mask(double[::1] x, double[::1] y):
    """True where no other point is <= on both axes and < on at least one."""
    cdef Py_ssize_t n = x.shape[0]
    mask_arr = np.ones(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] mask = mask_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            if x[j] <= x[i] and y[j] <= y[i] and (x[j] < x[i] or y[j] < y[i]):
                mask[i] = False
                break
    return mask_arr
