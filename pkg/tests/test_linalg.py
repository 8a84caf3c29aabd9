import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lmolab.errors import DegenerateInput
from lmolab.linalg import (
    msign_exact,
    msign_newton_schulz,
    rms_norm,
    singular_values,
    svd,
    vector_norm,
)


def test_svd_matches_lapack(rng):
    for shape in [(5, 5), (8, 3), (3, 8), (1, 4)]:
        a = rng.standard_normal(shape)
        s = singular_values(a)
        np.testing.assert_allclose(s, np.linalg.svd(a, compute_uv=False), rtol=1e-12, atol=1e-13)


def test_svd_reconstructs_and_is_orthonormal(rng):
    a = rng.standard_normal((7, 4))
    u, s, v = svd(a)
    np.testing.assert_allclose(u @ np.diag(s) @ v.T, a, atol=1e-12)
    np.testing.assert_allclose(u.T @ u, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(v.T @ v, np.eye(4), atol=1e-12)


def test_svd_rank_deficient_completion():
    u, s, v = svd(np.diag([2.0, 0.0]))
    np.testing.assert_allclose(s, [2.0, 0.0])
    np.testing.assert_allclose(u.T @ u, np.eye(2), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_singular_values_sorted_nonnegative(a):
    s = singular_values(a)
    assert np.all(s >= 0)
    assert np.all(np.diff(s) <= 1e-9 * max(1.0, s[0]))
    assert s[0] == pytest.approx(np.linalg.norm(a, 2), rel=1e-9, abs=1e-9)


def test_msign_exact_is_polar_factor(rng):
    a = rng.standard_normal((6, 4))
    q = msign_exact(a)
    np.testing.assert_allclose(singular_values(q), np.ones(4), atol=1e-12)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    np.testing.assert_allclose(q, u @ vt, atol=1e-12)


def test_msign_exact_zero_raises():
    with pytest.raises(DegenerateInput):
        msign_exact(np.zeros((3, 3)))


def test_msign_exact_rank_one_partial_isometry():
    a = np.outer([1.0, 2.0], [3.0, 0.0, 4.0])
    q = msign_exact(a)
    np.testing.assert_allclose(singular_values(q), [1.0, 0.0], atol=1e-12)


def test_newton_schulz_close_to_exact(rng):
    a = rng.standard_normal((8, 8))
    ns = msign_newton_schulz(a, 5)
    ex = msign_exact(a)
    assert np.sum(ns * ex) / 8 >= 0.9
    s = singular_values(ns)
    assert s.min() >= 0.3 and s.max() <= 1.3


def test_newton_schulz_orthogonal_input_scaled_copy(rng):
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    out = msign_newton_schulz(q, 5)
    c = np.sum(out * q) / 6
    assert 0.3 <= c <= 1.3
    np.testing.assert_allclose(out, c * q, atol=1e-9)


def test_newton_schulz_tall_and_wide_agree(rng):
    a = rng.standard_normal((9, 4))
    np.testing.assert_allclose(msign_newton_schulz(a), msign_newton_schulz(a.T).T, atol=1e-12)


def test_newton_schulz_muon_coefficients_available(rng):
    out = msign_newton_schulz(rng.standard_normal((8, 8)), 5, coefficients="muon")
    assert out.shape == (8, 8)


def test_vector_norm_and_rms():
    x = np.array([3.0, -4.0])
    assert vector_norm(x, 1) == 7.0
    assert vector_norm(x, 2) == 5.0
    assert vector_norm(x, np.inf) == 4.0
    assert rms_norm(np.ones((2, 3)) * 2.0) == pytest.approx(2.0)
