"""Dense linear algebra in float64: vector norms, Jacobi SVD, matrix sign, RMS norm.

Matrices are plain 2-D ``numpy`` arrays; every function here is pure and
never mutates its inputs.
"""

from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateInput, InvalidInput, InvalidParameter, NumericFailure

EPS = np.finfo(np.float64).eps

# Per-step odd quintic coefficients (a, b, c) for X <- aX + b(XX^T)X + c(XX^T)^2 X.
# Produced by tools/derive_ns_schedule.py --lower 1e-3 --steps 5: the first four
# steps lift the smallest singular value of a Frobenius-normalized input, the
# last one centres the spectrum on 1.
NS_SCHEDULE = (
    (4.253182437939909, -12.607468413101657, 9.354285975161748),
    (4.240248546683322, -12.499034576935284, 9.258782159812153),
    (4.185195837725696, -12.044479960577645, 8.859282902251215),
    (3.9542258110135893, -10.258159282078593, 7.303932514453955),
    (3.5167273567627135, -6.082126525192604, 3.679080802105901),
)
# Fixed coefficients of the widely used Muon iteration.
NS_MUON = (3.4445, -4.7750, 2.0315)

MSIGN_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def as_matrix(a, name="matrix"):
    """Validate and convert to a finite float64 2-D array (copy only if needed)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInput(f"{name}: expected a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name}: non-finite entries")
    return arr


def vector_norm(x, p):
    """l_p norm for p in [1, inf]."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInput("vector_norm of an empty vector")
    p = float(p)
    if not p >= 1.0:
        raise InvalidParameter(f"p must be in [1, inf], got {p}")
    a = np.abs(x)
    if np.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(np.sqrt(a @ a))
    top = a.max()
    if top == 0.0:
        return 0.0
    return float(top * np.sum((a / top) ** p) ** (1.0 / p))


def _orthonormal_completion(u, keep):
    """Replace columns of ``u`` not in ``keep`` with an orthonormal complement."""
    m, r = u.shape
    good = u[:, keep]
    need = r - good.shape[1]
    if need == 0:
        return u
    q, _ = np.linalg.qr(np.hstack([good, np.eye(m)]))
    fill = q[:, good.shape[1]:good.shape[1] + need]
    out = u.copy()
    out[:, ~keep] = fill
    return out


def svd(a, matrix_id=None):
    """Thin SVD by one-sided Jacobi.

    Returns ``SvdResult(u, s, v)`` with ``u`` m x r, ``v`` n x r, r = min(m, n),
    and ``s`` non-increasing. Raises ``NumericFailure`` if the rotations have
    not converged after ``JACOBI_MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a)
    m, n = a.shape
    flip = m < n
    work = a if flip else a.T
    # rows of ``cols`` are the columns of the tall orientation
    cols = np.ascontiguousarray(work, dtype=np.float64).copy()
    tall_rows = cols.shape[1]
    tol = max(tall_rows, 1) * EPS
    vt, sweeps, converged = kernels.jacobi_svd_columns(cols, tol, JACOBI_MAX_SWEEPS)
    if not converged:
        raise NumericFailure(f"Jacobi SVD did not converge in {sweeps} sweeps", matrix_id)
    s = np.sqrt(np.einsum("ij,ij->i", cols, cols))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    u = cols[order].T
    v = np.asarray(vt)[order].T
    floor = s[0] * EPS * max(m, n) if s.size else 0.0
    keep = s > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(keep[None, :], u / np.where(keep, s, 1.0)[None, :], 0.0)
    u = _orthonormal_completion(u, keep)
    if flip:
        u, v = v, u
    return SvdResult(u=u, s=s, v=v)


def singular_values(a):
    return svd(a).s


def msign_exact(a):
    """U V^T over singular values above MSIGN_TOL * sigma_1 (polar factor / partial isometry)."""
    u, s, v = svd(a)
    if s[0] == 0.0:
        raise DegenerateInput("msign of the zero matrix")
    keep = s > MSIGN_TOL * s[0]
    return u[:, keep] @ v[:, keep].T


def _ns_coefficients(steps, coefficients):
    if coefficients == "schedule":
        sched = list(NS_SCHEDULE)
        if steps <= len(sched):
            return sched[: steps - 1] + [sched[-1]]
        return sched + [sched[-1]] * (steps - len(sched))
    if coefficients == "muon":
        return [NS_MUON] * steps
    coeffs = [tuple(map(float, c)) for c in coefficients]
    if len(coeffs) != steps:
        raise InvalidParameter(f"{len(coeffs)} coefficient triples for {steps} steps")
    return coeffs


def msign_newton_schulz(a, steps=5, coefficients="schedule"):
    """Approximate msign(a) with ``steps`` odd-quintic Newton-Schulz iterations.

    ``coefficients`` is ``"schedule"`` (per-step NS_SCHEDULE), ``"muon"``
    (fixed NS_MUON) or an explicit list of (a, b, c) triples.
    """
    if steps < 1:
        raise InvalidParameter("steps must be >= 1")
    x = as_matrix(a)
    fro = np.linalg.norm(x)
    if fro == 0.0:
        raise DegenerateInput("msign of the zero matrix")
    x = x / (fro * (1.0 + 1e-7))
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    for ca, cb, cc in _ns_coefficients(steps, coefficients):
        g = x @ x.T
        x = ca * x + (cb * g + cc * (g @ g)) @ x
    return x.T if transposed else x


def rms_norm(a):
    """||a||_F / sqrt(rows * cols)."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a) / np.sqrt(a.size))
