import math

import numpy as np
import pytest

from tma.errors import IllConditioned, NotPositiveDefinite
from tma.linalg import (
    as_hermitian,
    block_det_via_schur,
    certify_psd,
    inverse_and_logdet,
    min_max_eigenvalues,
    psd_tolerance,
)


def test_min_max_identity():
    assert min_max_eigenvalues(np.eye(2)) == (1.0, 1.0)


def test_min_max_hand_characteristic_polynomial():
    # [[1,2],[2,1]]: lambda^2 - 2 lambda - 3 = 0 -> (-1, 3)
    lo, hi = min_max_eigenvalues(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert lo == pytest.approx(-1.0, abs=1e-12)
    assert hi == pytest.approx(3.0, abs=1e-12)


def test_min_max_zero():
    assert min_max_eigenvalues(np.zeros((3, 3))) == (0.0, 0.0)


def test_inverse_and_logdet_diag():
    inv, ld = inverse_and_logdet(np.diag([2.0, 3.0]))
    assert np.allclose(inv, np.diag([0.5, 1.0 / 3.0]), atol=1e-15)
    assert ld == pytest.approx(math.log(6.0), rel=1e-14)


def test_guard_boundary():
    with pytest.raises(IllConditioned):
        inverse_and_logdet(np.diag([1.0, 1e-13]))


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        inverse_and_logdet(np.diag([1.0, -1.0]))


def test_inverse_closed_form_2x2():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    inv, ld = inverse_and_logdet(a)
    assert ld == pytest.approx(math.log(3.0), rel=1e-14)
    assert np.allclose(inv, np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0, atol=1e-14)
    n = a.shape[0]
    assert np.max(np.abs(a @ inv - np.eye(n))) <= 1e-12 * n


def test_block_determinant_property():
    rng = np.random.default_rng(5)
    for n, ks in ((2, 1), (3, 1), (4, 2), (6, 3)):
        m = rng.uniform(-1, 1, (n, n)) + 2.0 * np.eye(n)
        assert block_det_via_schur(m, ks) == pytest.approx(np.linalg.det(m), rel=1e-10)
    # Hermitian complex case
    for n, ks in ((2, 1), (4, 2)):
        b = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
        m = b + b.conj().T + 3.0 * np.eye(n)
        assert block_det_via_schur(m, ks) == pytest.approx(np.linalg.det(m).real, rel=1e-10)


def test_psd_certificates_back_quadratic_forms():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        b = rng.uniform(-1, 1, (n, n))
        a = b @ b.T  # PSD, possibly with tiny negative rounding eigenvalues
        tol = psd_tolerance(a)
        assert certify_psd(a, tol)
        for _ in range(100):
            v = rng.normal(size=n)
            v /= np.linalg.norm(v)
            assert v @ a @ v >= -2.0 * tol


def test_as_hermitian_rejects_skew():
    with pytest.raises(ValueError):
        as_hermitian(np.array([[1.0, 1.0], [0.0, 1.0]]), tol=1e-12)
    h = as_hermitian(np.array([[1.0, 2.0 + 1e-14], [2.0, 1.0]]))
    assert np.allclose(h, h.T)
