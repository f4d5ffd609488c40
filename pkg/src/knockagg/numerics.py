"""Dense linear algebra kernels used by the rest of the package.

All routines take and return float64 numpy arrays, validate their inputs,
and raise the typed errors from knockagg.errors instead of letting LAPACK
failures or shape mismatches escape. Solvers are backed by numpy's LAPACK
bindings; the contracts here (pivot cutoffs, symmetry and PSD tolerances)
are what the callers and tests rely on.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    InsufficientRowsError,
    InvalidInputError,
    NotPositiveSemidefiniteError,
    SingularDesignError,
)

# Relative pivot cutoff below which a triangular factor counts as rank deficient.
PIVOT_RTOL = 1e-10

# Absolute asymmetry tolerated before a matrix is rejected as non-symmetric.
SYMMETRY_ATOL = 1e-10

# Relative floor for eigenvalue clipping in factor_psd.
PSD_CLIP_RTOL = 1e-8


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return x as a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and return x as a finite 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def least_squares(X, y) -> np.ndarray:
    """Minimize ||y - X b||_2 for a full column rank X.

    Solves via a reduced QR factorization. The returned b satisfies the
    normal equations to within ~1e-8 * ||X^T y||_inf on well-conditioned
    problems, which is what downstream contracts assume.

    Raises SingularDesignError when any pivot of R falls below
    PIVOT_RTOL times the largest pivot.
    """
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    n, q = X.shape
    if y.shape[0] != n:
        raise InvalidInputError(f"y has {y.shape[0]} rows, X has {n}")
    if q == 0:
        return np.zeros(0)
    if n < q:
        raise InvalidInputError(f"underdetermined system: {n} rows < {q} columns")
    Q, R = np.linalg.qr(X)
    pivots = np.abs(np.diag(R))
    if pivots.min() < PIVOT_RTOL * pivots.max():
        raise SingularDesignError(
            f"rank deficient design: pivot ratio {pivots.min():.3e}/{pivots.max():.3e}"
        )
    # R is upper triangular and nonsingular here; a general solve is fine
    # at the sizes this package works with.
    return np.linalg.solve(R, Q.T @ y)


def min_eigenvalue(S) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    S must be symmetric to within SYMMETRY_ATOL; it is symmetrized before
    the eigenvalue computation so the result is well defined.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise InvalidInputError(f"S must be square, got shape {S.shape}")
    if S.size and np.abs(S - S.T).max() > SYMMETRY_ATOL:
        raise InvalidInputError("S is not symmetric within 1e-10")
    if S.shape[0] == 0:
        raise InvalidInputError("S is empty")
    Ssym = 0.5 * (S + S.T)
    return float(np.linalg.eigvalsh(Ssym)[0])


def orthonormal_complement(X) -> np.ndarray:
    """An n x p orthonormal basis of a subspace orthogonal to col(X).

    X must be n x p with full column rank and n >= 2p. The result U
    satisfies U^T U = I_p and U^T X = 0 to within 1e-10 in max-abs norm.
    The basis is a deterministic function of X (complete QR, first p
    complement columns).
    """
    X = as_matrix(X, "X")
    n, p = X.shape
    if p == 0:
        raise InvalidInputError("X has no columns")
    if n < 2 * p:
        raise InsufficientRowsError(f"need n >= 2p rows, got n={n}, p={p}")
    Q, R = np.linalg.qr(X, mode="complete")
    pivots = np.abs(np.diag(R[:p, :p]))
    if pivots.min() < PIVOT_RTOL * pivots.max():
        raise SingularDesignError("X is rank deficient; no unique column space")
    return Q[:, p : 2 * p].copy()


def factor_psd(S) -> np.ndarray:
    """A p x p factor C with C^T C = S for symmetric PSD S.

    Eigenvalues down to -PSD_CLIP_RTOL relative to the largest magnitude
    eigenvalue are treated as rounding noise and clipped to zero; anything
    below that raises NotPositiveSemidefiniteError.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise InvalidInputError(f"S must be square, got shape {S.shape}")
    if S.size and np.abs(S - S.T).max() > SYMMETRY_ATOL:
        raise InvalidInputError("S is not symmetric within 1e-10")
    if S.shape[0] == 0:
        raise InvalidInputError("S is empty")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(float(np.abs(w).max()), np.finfo(np.float64).tiny)
    if w[0] < -PSD_CLIP_RTOL * scale:
        raise NotPositiveSemidefiniteError(
            f"eigenvalue {w[0]:.3e} below PSD tolerance {-PSD_CLIP_RTOL * scale:.3e}"
        )
    w = np.clip(w, 0.0, None)
    return (np.sqrt(w)[:, None] * V.T).copy()
