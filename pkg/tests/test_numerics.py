"""Unit tests for the dense linear algebra kernels."""

import numpy as np
import pytest

from knockagg.errors import (
    InsufficientRowsError,
    InvalidInputError,
    NotPositiveSemidefiniteError,
    SingularDesignError,
)
from knockagg.numerics import (
    factor_psd,
    least_squares,
    min_eigenvalue,
    orthonormal_complement,
)


def test_least_squares_identity_design():
    """With X = I the solution is y itself."""
    y = np.array([3.0, -1.0, 2.5, 0.0])
    b = least_squares(np.eye(4), y)
    assert np.allclose(b, y, atol=1e-12)


def test_least_squares_intercept_only():
    """A single all-ones column fits the sample mean."""
    y = np.array([1.0, 2.0, 3.0, 4.0])
    b = least_squares(np.ones((4, 1)), y)
    assert b.shape == (1,)
    assert abs(b[0] - 2.5) < 1e-12


def test_least_squares_recovers_exact_coefficients():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((40, 6))
    b_true = rng.standard_normal(6)
    b = least_squares(X, X @ b_true)
    assert np.allclose(b, b_true, atol=1e-10)


def test_least_squares_normal_equation_residual():
    """X^T(y - Xb) must vanish relative to X^T y on random problems."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        n, q = 30, 8
        X = rng.standard_normal((n, q))
        y = rng.standard_normal(n)
        b = least_squares(X, y)
        resid = np.abs(X.T @ (y - X @ b)).max()
        scale = np.abs(X.T @ y).max()
        assert resid <= 1e-8 * scale


def test_least_squares_duplicate_column_is_singular():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((20, 4))
    X[:, 3] = X[:, 0]
    with pytest.raises(SingularDesignError):
        least_squares(X, rng.standard_normal(20))


def test_least_squares_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        least_squares(np.ones((3, 5)), np.ones(3))  # underdetermined
    with pytest.raises(InvalidInputError):
        least_squares(np.ones((3, 2)), np.ones(4))  # row mismatch
    X = np.ones((4, 2))
    X[0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        least_squares(X, np.ones(4))


def test_min_eigenvalue_diagonal():
    assert min_eigenvalue(np.diag([4.0, 0.5, 2.0])) == pytest.approx(0.5, abs=1e-12)


def test_min_eigenvalue_equicorrelated_closed_form():
    """(1-rho) I + rho 11^T has smallest eigenvalue 1-rho for rho in (0,1)."""
    p = 12
    for rho in (0.1, 0.5, 0.9):
        S = (1 - rho) * np.eye(p) + rho * np.ones((p, p))
        assert min_eigenvalue(S) == pytest.approx(1 - rho, abs=1e-9)
    # negative correlation: smallest eigenvalue is 1 + (p-1) rho
    rho = -0.05
    S = (1 - rho) * np.eye(p) + rho * np.ones((p, p))
    assert min_eigenvalue(S) == pytest.approx(1 + (p - 1) * rho, abs=1e-9)


def test_min_eigenvalue_rejects_asymmetric():
    S = np.eye(3)
    S[0, 1] = 1e-3
    with pytest.raises(InvalidInputError):
        min_eigenvalue(S)


def test_orthonormal_complement_of_canonical_basis():
    """For X = first p columns of I_n the complement lives in the rest."""
    n, p = 10, 3
    X = np.eye(n)[:, :p]
    U = orthonormal_complement(X)
    assert U.shape == (n, p)
    assert np.abs(U.T @ U - np.eye(p)).max() <= 1e-10
    assert np.abs(U.T @ X).max() <= 1e-10
    assert np.abs(U[:p, :]).max() <= 1e-10


def test_orthonormal_complement_properties_random():
    rng = np.random.default_rng(21)
    for _ in range(20):
        n, p = 25, 9
        X = rng.standard_normal((n, p))
        U = orthonormal_complement(X)
        assert np.abs(U.T @ U - np.eye(p)).max() <= 1e-10
        assert np.abs(U.T @ X).max() <= 1e-10


def test_orthonormal_complement_is_deterministic():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((12, 4))
    assert np.array_equal(orthonormal_complement(X), orthonormal_complement(X))


def test_orthonormal_complement_needs_two_p_rows():
    with pytest.raises(InsufficientRowsError):
        orthonormal_complement(np.ones((5, 3)))


def test_orthonormal_complement_rank_deficient():
    X = np.zeros((10, 3))
    X[:, 0] = 1.0
    X[:, 1] = 2.0
    X[:, 2] = np.arange(10)
    with pytest.raises(SingularDesignError):
        orthonormal_complement(X)


def test_factor_psd_identity():
    C = factor_psd(np.eye(4))
    assert np.abs(C.T @ C - np.eye(4)).max() <= 1e-12


def test_factor_psd_reconstructs_random_gram():
    rng = np.random.default_rng(9)
    for _ in range(20):
        A = rng.standard_normal((15, 6))
        S = A.T @ A
        C = factor_psd(S)
        assert C.shape == (6, 6)
        assert np.abs(C.T @ C - S).max() <= 1e-8 * np.abs(S).max()


def test_factor_psd_clips_rounding_noise():
    """Eigenvalues at -1e-9 relative scale are tolerated and clipped."""
    rng = np.random.default_rng(13)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    w = np.array([-1e-9, 0.5, 1.0, 2.0, 4.0])
    S = (Q * w) @ Q.T
    C = factor_psd(S)
    assert np.abs(C.T @ C - S).max() <= 1e-7


def test_factor_psd_rejects_indefinite():
    with pytest.raises(NotPositiveSemidefiniteError):
        factor_psd(np.diag([1.0, -0.5]))


def test_factor_psd_rejects_asymmetric():
    S = np.eye(2)
    S[1, 0] = 0.01
    with pytest.raises(InvalidInputError):
        factor_psd(S)
