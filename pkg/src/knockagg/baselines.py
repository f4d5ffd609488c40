"""Comparison procedures: aggregated OLS z-scores with BHq, and per-node
cross-validated lasso supports combined by majority vote.

Both baselines consume the same per-node data as the knockoff pipeline but
communicate more: the OLS route ships a dense coefficient vector and a
variance vector per node, the lasso route ships a support indicator chosen
by cross-validation on the node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientRowsError, InvalidInputError, SingularDesignError
from .knockoff import NodeData
from .lasso import LambdaGrid, lasso_path, lasso_solve
from .numerics import PIVOT_RTOL, least_squares
from .seeds import TAG_FOLD, check_seed, child_rng

# grid for the cross-validated lasso; fold count and grid size are not
# dictated by the procedure itself, these are the package defaults
CV_FOLDS = 10
CV_GRID = LambdaGrid(num=100)


@dataclass
class BhqResult:
    """Step-up outcome: rejected feature indices (ascending) and the count."""

    rejected: np.ndarray
    threshold_index: int


def bhq(pvalues, q: float) -> BhqResult:
    """Benjamini-Hochberg step-up at level q.

    k* = max{k : p_(k) <= k q / p}; rejects the k* smallest p-values,
    ties broken by feature index.
    """
    P = np.asarray(pvalues, dtype=np.float64)
    if P.ndim != 1 or P.shape[0] == 0:
        raise InvalidInputError("need a nonempty 1-D p-value vector")
    if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
        raise InvalidInputError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"q must lie in (0, 1), got {q}")
    p = P.shape[0]
    order = np.argsort(P, kind="stable")
    thresholds = q * np.arange(1, p + 1) / p
    passing = np.nonzero(P[order] <= thresholds)[0]
    k_star = int(passing[-1]) + 1 if passing.size else 0
    rejected = np.sort(order[:k_star])
    return BhqResult(rejected=rejected, threshold_index=k_star)


@dataclass
class OlsNodeSummary:
    """Per-node OLS estimate and marginal variances diag((X^T X)^-1)."""

    beta_hat: np.ndarray
    theta_diag: np.ndarray

    def __post_init__(self):
        self.beta_hat = np.asarray(self.beta_hat, dtype=np.float64)
        self.theta_diag = np.asarray(self.theta_diag, dtype=np.float64)
        if self.beta_hat.shape != self.theta_diag.shape or self.beta_hat.ndim != 1:
            raise InvalidInputError("beta_hat and theta_diag must be equal-length vectors")
        if not np.all(self.theta_diag > 0.0):
            raise InvalidInputError("theta_diag entries must be strictly positive")

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]


def ols_node_summary(data: NodeData) -> OlsNodeSummary:
    """Least-squares fit plus diag((X^T X)^-1), assuming unit noise variance."""
    X, y = data.X, data.y
    if data.n < data.p:
        raise InsufficientRowsError(f"OLS needs n >= p, got n={data.n}, p={data.p}")
    beta = least_squares(X, y)
    G = X.T @ X
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("X^T X is not positive definite") from exc
    d = np.diag(L)
    if d.min() < PIVOT_RTOL * d.max():
        raise SingularDesignError("X^T X is numerically singular")
    # diag(G^-1) = squared column norms of L^-T
    K = np.linalg.solve(L, np.eye(data.p))
    theta = (K**2).sum(axis=0)
    return OlsNodeSummary(beta_hat=beta, theta_diag=theta)


def ols_aggregate_select(summaries, q: float) -> BhqResult:
    """Average node estimates, form z-scores, then BHq on two-sided p-values.

    beta_bar_j = mean_i beta_hat_j^i; Theta_j = m^-2 sum_i theta_j^i;
    z_j = beta_bar_j / sqrt(Theta_j); p_j = erfc(|z_j| / sqrt(2)).
    """
    summaries = list(summaries)
    if not summaries:
        raise InvalidInputError("need at least one OLS summary")
    p = summaries[0].p
    if any(s.p != p for s in summaries):
        raise InvalidInputError("OLS summaries disagree on feature count")
    m = len(summaries)
    beta_bar = np.mean([s.beta_hat for s in summaries], axis=0)
    theta = np.sum([s.theta_diag for s in summaries], axis=0) / m**2
    z = beta_bar / np.sqrt(theta)
    pv = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    return bhq(pv, q)


def lasso_cv_curve(data: NodeData, folds: int = CV_FOLDS,
                   grid: LambdaGrid | None = None, seed: int = 0):
    """Cross-validation curve over the penalty grid of the full data.

    Returns (lams, cv_mean, cv_se) where cv_mean is the mean held-out
    squared prediction error per penalty and cv_se its standard error
    across folds. Fold assignment is contiguous blocks of a seeded
    shuffle of the row indices.
    """
    check_seed(seed)
    if grid is None:
        grid = CV_GRID
    if not isinstance(folds, int) or isinstance(folds, bool) or folds < 2:
        raise InvalidInputError(f"folds must be an integer >= 2, got {folds!r}")
    X, y = data.X, data.y
    n = data.n
    if folds > n:
        raise InvalidInputError(f"cannot split {n} rows into {folds} folds")
    lam_max = float(np.abs(X.T @ y).max())
    if lam_max == 0.0:
        return None  # y orthogonal to every column; no curve to trace
    lams = grid.values(lam_max)
    perm = child_rng(seed, TAG_FOLD).permutation(n)
    blocks = np.array_split(perm, folds)
    errors = np.empty((folds, lams.shape[0]))
    for f, held in enumerate(blocks):
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        coefs = lasso_path(X[mask], y[mask], lams)
        resid = y[held][None, :] - coefs @ X[held].T
        errors[f] = np.mean(resid**2, axis=1)
    cv_mean = errors.mean(axis=0)
    cv_se = errors.std(axis=0, ddof=1) / math.sqrt(folds)
    return lams, cv_mean, cv_se


def lasso_cv_support(data: NodeData, folds: int = CV_FOLDS,
                     grid: LambdaGrid | None = None, seed: int = 0) -> np.ndarray:
    """Support of the lasso at the one-standard-error penalty.

    lam_1SE is the largest grid penalty whose CV error is within one
    standard error of the minimum; the fit at that penalty on the full
    data determines the support.
    """
    curve = lasso_cv_curve(data, folds, grid, seed)
    if curve is None:
        return np.array([], dtype=np.int64)
    lams, cv_mean, cv_se = curve
    best = int(np.argmin(cv_mean))
    cutoff = cv_mean[best] + cv_se[best]
    lam_1se = lams[np.nonzero(cv_mean <= cutoff)[0][0]]  # lams descend
    b = lasso_solve(data.X, data.y, float(lam_1se))
    return np.nonzero(b != 0.0)[0]


def majority_vote(supports, m: int | None = None) -> np.ndarray:
    """Feature indices present in strictly more than m/2 of the supports."""
    supports = [np.asarray(s, dtype=np.int64) for s in supports]
    if m is None:
        m = len(supports)
    if m < 1 or len(supports) != m:
        raise InvalidInputError(f"expected {m} supports, got {len(supports)}")
    counts: dict[int, int] = {}
    for s in supports:
        for j in set(s.tolist()):
            counts[j] = counts.get(j, 0) + 1
    return np.array(sorted(j for j, c in counts.items() if c > m / 2),
                    dtype=np.int64)
