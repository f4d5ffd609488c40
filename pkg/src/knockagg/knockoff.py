"""Per-node knockoff filter: construction and one-shot summary statistics.

A node holds a design X (n x p, unit-norm columns) and response y. It
builds a knockoff copy X~ whose Gram structure matches X exactly except
that each feature is decorrelated from its own copy, then races original
against knockoff along the lasso path. What leaves the node per feature is
a single sign bit chi_j (which copy entered first) and a nonnegative
ordering statistic W_j (how early the pair entered). For null features the
sign bit is a fair coin independent of everything else, which is what the
coordinator's binomial aggregation relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateFeatureError,
    InsufficientRowsError,
    InvalidInputError,
    SingularDesignError,
)
from .lasso import LambdaGrid, entry_times
from .numerics import as_matrix, as_vector, factor_psd, min_eigenvalue, orthonormal_complement
from .seeds import TAG_ROTATION, TAG_TIE, check_seed, child_rng, coin_sign

# Unit-norm tolerance for design columns.
COLUMN_NORM_ATOL = 1e-10

# Sigma is treated as numerically singular below this smallest eigenvalue.
SIGMA_EIG_FLOOR = 1e-10

# Orthonormality tolerance for the contrast-statistics design.
ORTHONORMAL_ATOL = 1e-8


@dataclass
class NodeData:
    """One node's design and response. Columns of X must be unit norm."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        self.y = as_vector(self.y, "y")
        n, p = self.X.shape
        if p == 0 or n == 0:
            raise InvalidInputError("X must have at least one row and column")
        if self.y.shape[0] != n:
            raise InvalidInputError(f"y has {self.y.shape[0]} rows, X has {n}")
        norms = np.linalg.norm(self.X, axis=0)
        if np.abs(norms - 1.0).max() > COLUMN_NORM_ATOL:
            raise InvalidInputError(
                "X columns must be unit norm; call normalize_columns first"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class KnockoffDesign:
    """Knockoff copy X~ and the decorrelation levels s used to build it."""

    X_tilde: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.X_tilde = as_matrix(self.X_tilde, "X_tilde")
        self.s = as_vector(self.s, "s")
        if self.s.shape[0] != self.X_tilde.shape[1]:
            raise InvalidInputError("s must have one entry per knockoff column")
        if self.s.min() < 0.0:
            raise InvalidInputError("s entries must be nonnegative")


@dataclass
class KnockoffValidation:
    """Max-abs residuals of the two Gram identities a knockoff pair must obey."""

    gram_residual: float
    cross_residual: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.gram_residual, self.cross_residual) <= self.tol


@dataclass
class NodeStatistics:
    """One node's outgoing summary: sign bits and ordering statistics."""

    chi: np.ndarray
    W: np.ndarray
    n_rows: int
    p: int = field(init=False)

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=np.int8)
        self.W = as_vector(self.W, "W")
        if self.chi.ndim != 1 or self.chi.shape[0] != self.W.shape[0]:
            raise InvalidInputError("chi and W must be 1-D with equal length")
        if not np.all(np.abs(self.chi) == 1):
            raise InvalidInputError("chi entries must be +1 or -1")
        if self.W.min() < 0.0:
            raise InvalidInputError("W entries must be nonnegative")
        if self.n_rows <= 0:
            raise InvalidInputError("n_rows must be positive")
        self.p = self.W.shape[0]


def normalize_columns(X) -> np.ndarray:
    """Scale each column of X to unit Euclidean norm."""
    X = as_matrix(X, "X")
    norms = np.linalg.norm(X, axis=0)
    floor = 1e-12 * max(float(norms.max()), np.finfo(np.float64).tiny)
    bad = np.flatnonzero(norms <= floor)
    if bad.size:
        raise DegenerateFeatureError(f"column {bad[0]} has (near-)zero norm")
    return X / norms


def construct_knockoffs(X, seed: int) -> KnockoffDesign:
    """Equicorrelated knockoffs for a unit-norm design with n >= 2p rows.

    The copy satisfies X~^T X~ = Sigma and X^T X~ = Sigma - diag(s) with
    s_j = min(2 lambda_min(Sigma), 1), the largest common decorrelation the
    construction admits. The seed fixes the residual basis freedom: the
    orthogonal-complement factor is rotated by a seeded random orthogonal
    matrix, so different seeds give different (all valid) copies.
    """
    X = as_matrix(X, "X")
    seed = check_seed(seed)
    n, p = X.shape
    if p == 0:
        raise InvalidInputError("X has no columns")
    if n < 2 * p:
        raise InsufficientRowsError(f"knockoffs need n >= 2p rows, got n={n}, p={p}")
    norms = np.linalg.norm(X, axis=0)
    if np.abs(norms - 1.0).max() > COLUMN_NORM_ATOL:
        raise InvalidInputError("X columns must be unit norm")
    sigma = X.T @ X
    lam_min = min_eigenvalue(sigma)
    if lam_min < SIGMA_EIG_FLOOR:
        raise SingularDesignError(
            f"Gram matrix numerically singular: lambda_min = {lam_min:.3e}"
        )
    s_level = min(2.0 * lam_min, 1.0)
    s = np.full(p, s_level)
    sigma_inv = np.linalg.solve(sigma, np.eye(p))
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    # C^T C = 2 diag(s) - diag(s) Sigma^-1 diag(s); PSD because s <= 2 lambda_min
    C = factor_psd(2.0 * s_level * np.eye(p) - s_level**2 * sigma_inv)
    U = orthonormal_complement(X)
    rot_rng = child_rng(seed, TAG_ROTATION)
    Q, R = np.linalg.qr(rot_rng.standard_normal((p, p)))
    Q = Q * np.sign(np.diag(R))  # fix the sign freedom of the QR factor
    X_tilde = X - s_level * (X @ sigma_inv) + (U @ Q) @ C
    return KnockoffDesign(X_tilde=X_tilde, s=s)


def validate_knockoffs(X, design: KnockoffDesign, tol: float = 1e-8) -> KnockoffValidation:
    """Residuals of the knockoff Gram identities for a (X, X~, s) triple."""
    X = as_matrix(X, "X")
    Xt = design.X_tilde
    if Xt.shape != X.shape:
        raise InvalidInputError(f"shape mismatch: X {X.shape}, X_tilde {Xt.shape}")
    sigma = X.T @ X
    gram = float(np.abs(Xt.T @ Xt - sigma).max())
    cross = float(np.abs(X.T @ Xt - (sigma - np.diag(design.s))).max())
    return KnockoffValidation(gram_residual=gram, cross_residual=cross, tol=tol)


def _signs_with_tie_coin(diffs: np.ndarray, seed: int) -> np.ndarray:
    """Sign of each difference; exact zeros get an independent fair coin."""
    chi = np.sign(diffs).astype(np.int8)
    for j in np.flatnonzero(chi == 0):
        chi[j] = coin_sign(seed, TAG_TIE, int(j))
    return chi


def node_statistics(data: NodeData, design: KnockoffDesign,
                    grid: LambdaGrid | None = None, seed: int = 0) -> NodeStatistics:
    """Race original vs knockoff columns along the lasso path.

    Z_j and Z~_j are the largest grid penalties at which feature j and its
    knockoff enter. W_j = max(Z_j, Z~_j) orders features by how early the
    pair shows up; chi_j = sign(Z_j - Z~_j) says which copy won, with exact
    ties broken by a per-feature seeded fair coin.
    """
    seed = check_seed(seed)
    if design.X_tilde.shape != data.X.shape:
        raise InvalidInputError("design does not match data dimensions")
    A = np.hstack([data.X, design.X_tilde])
    Z = entry_times(A, data.y, grid)
    p = data.p
    W = np.maximum(Z[:p], Z[p:])
    chi = _signs_with_tie_coin(Z[:p] - Z[p:], seed)
    return NodeStatistics(chi=chi, W=W, n_rows=data.n)


def ls_contrast_statistics(data: NodeData, seed: int = 0,
                           complement: np.ndarray | None = None) -> NodeStatistics:
    """Single-bit statistics for an orthonormal 2p x p design.

    The design matrix must have 2p rows and orthonormal columns. Appending
    an orthonormal complement makes the augmented regression exact:
    coefficient estimates are transpose products. chi_j is the sign of
    beta_hat_j - beta_tilde_j (seeded coin on exact ties) and W_j is the
    indicator that |beta_hat_j - beta_tilde_j| lies strictly above the
    median (midpoint convention), so W costs one bit per feature.

    Callers looping over responses on a fixed design may pass the
    precomputed orthonormal complement.
    """
    seed = check_seed(seed)
    n, p = data.X.shape
    if n != 2 * p:
        raise InvalidInputError(f"contrast statistics need n = 2p, got n={n}, p={p}")
    if np.abs(data.X.T @ data.X - np.eye(p)).max() > ORTHONORMAL_ATOL:
        raise InvalidInputError("X columns must be orthonormal for contrast statistics")
    if complement is None:
        U = orthonormal_complement(data.X)
    else:
        U = np.asarray(complement, dtype=np.float64)
        if U.shape != (n, p) or np.abs(data.X.T @ U).max() > ORTHONORMAL_ATOL:
            raise InvalidInputError("complement must be n x p and orthogonal to X")
    # [X U] is square orthogonal, so least squares on it is a transpose product
    beta_hat = data.X.T @ data.y
    beta_tilde = U.T @ data.y
    diffs = beta_hat - beta_tilde
    chi = _signs_with_tie_coin(diffs, seed)
    mags = np.abs(diffs)
    W = (mags > np.median(mags)).astype(np.float64)
    return NodeStatistics(chi=chi, W=W, n_rows=n)
