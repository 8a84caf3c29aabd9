import os
import subprocess
import sys

import numpy as np
import pytest

from lmolab import _fallback, kernels


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.backends()


def test_pure_python_env_forces_fallback():
    env = dict(os.environ, LMOLAB_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from lmolab import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("shape", [(3, 3), (7, 4), (12, 5)])
def test_jacobi_parity(backend, shape, rng):
    a = rng.standard_normal(shape)
    ref = a.copy()
    vt, sweeps, ok = backend.jacobi_svd_columns(np.ascontiguousarray(ref.T).copy(), 1e-15 * shape[0], 100)
    assert ok
    vt2, _, _ = _fallback.jacobi_svd_columns(np.ascontiguousarray(a.T).copy(), 1e-15 * shape[0], 100)
    np.testing.assert_allclose(np.abs(np.asarray(vt)), np.abs(vt2), atol=1e-10)


def test_jacobi_rank_deficient_converges(backend, rng):
    a = rng.standard_normal((32, 4)) @ rng.standard_normal((4, 32))
    _, _, ok = backend.jacobi_svd_columns(np.ascontiguousarray(a.T).copy(), 32 * 2.2e-16, 100)
    assert ok


@pytest.mark.parametrize("axis", [0, 1])
def test_max_select_parity(backend, axis, rng):
    m = rng.standard_normal((6, 9))
    m[2] = 0.0
    m[4, :3] = 5.0  # tie within a row
    got = np.asarray(backend.max_select(m, 2.0, axis))
    np.testing.assert_array_equal(got, _fallback.max_select(m, 2.0, axis))


def test_max_select_ties_share_radius(backend):
    m = np.array([[3.0, -3.0, 1.0]])
    np.testing.assert_allclose(backend.max_select(m, 1.0, 1), [[0.5, -0.5, 0.0]])


@pytest.mark.parametrize("beta", [1.0, 2.0, np.inf])
def test_sign_vector_max_parity(backend, beta, rng):
    a = rng.standard_normal((4, 7))
    brute = max(
        np.linalg.norm(a @ np.array(s), ord=beta)
        for s in np.array(np.meshgrid(*[[-1.0, 1.0]] * 7)).reshape(7, -1).T
    )
    assert backend.sign_vector_max(a, beta) == pytest.approx(brute, rel=1e-12)


def test_nondominated_parity(backend, rng):
    x = rng.integers(0, 5, 60).astype(float)
    y = rng.integers(0, 5, 60).astype(float)
    np.testing.assert_array_equal(np.asarray(backend.nondominated_mask(x, y), dtype=bool),
                                  _fallback.nondominated_mask(x, y))
