"""Unit tests for knockoff construction and per-node statistics."""

import numpy as np
import pytest

from knockagg.errors import (
    DegenerateFeatureError,
    InsufficientRowsError,
    InvalidInputError,
    SingularDesignError,
)
from knockagg.knockoff import (
    NodeData,
    NodeStatistics,
    construct_knockoffs,
    ls_contrast_statistics,
    node_statistics,
    normalize_columns,
    validate_knockoffs,
)
from knockagg.lasso import LambdaGrid


def random_unit_design(rng, n, p):
    X = rng.standard_normal((n, p))
    return X / np.linalg.norm(X, axis=0)


def test_normalize_columns_unit_norms():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 5)) * 7
    Xn = normalize_columns(X)
    assert np.allclose(np.linalg.norm(Xn, axis=0), 1.0, atol=1e-12)
    # directions preserved
    for j in range(5):
        cos = X[:, j] @ Xn[:, j] / np.linalg.norm(X[:, j])
        assert cos == pytest.approx(1.0, abs=1e-12)


def test_normalize_columns_zero_column():
    X = np.ones((10, 3))
    X[:, 1] = 0.0
    with pytest.raises(DegenerateFeatureError):
        normalize_columns(X)


def test_construct_knockoffs_orthogonal_design():
    """For orthonormal X the decorrelation is full: s = 1 and X^T X~ = 0."""
    n, p = 12, 4
    X = np.eye(n)[:, :p]
    design = construct_knockoffs(X, seed=0)
    assert np.allclose(design.s, 1.0)
    assert np.abs(X.T @ design.X_tilde).max() <= 1e-10
    assert np.abs(design.X_tilde.T @ design.X_tilde - np.eye(p)).max() <= 1e-10


def test_construct_knockoffs_gram_identities_random():
    rng = np.random.default_rng(1)
    for trial in range(10):
        X = random_unit_design(rng, 60, 12)
        design = construct_knockoffs(X, seed=trial)
        check = validate_knockoffs(X, design, tol=1e-8)
        assert check.ok, (check.gram_residual, check.cross_residual)


def test_construct_knockoffs_s_level_matches_min_eigenvalue():
    rng = np.random.default_rng(2)
    X = random_unit_design(rng, 50, 10)
    design = construct_knockoffs(X, seed=0)
    lam_min = np.linalg.eigvalsh(X.T @ X)[0]
    assert np.allclose(design.s, min(2 * lam_min, 1.0), atol=1e-12)


def test_construct_knockoffs_seed_determinism_and_freedom():
    rng = np.random.default_rng(3)
    X = random_unit_design(rng, 40, 8)
    d1 = construct_knockoffs(X, seed=5)
    d2 = construct_knockoffs(X, seed=5)
    d3 = construct_knockoffs(X, seed=6)
    assert np.array_equal(d1.X_tilde, d2.X_tilde)
    assert not np.array_equal(d1.X_tilde, d3.X_tilde)
    assert validate_knockoffs(X, d3, tol=1e-8).ok


def test_construct_knockoffs_input_errors():
    rng = np.random.default_rng(4)
    with pytest.raises(InsufficientRowsError):
        construct_knockoffs(random_unit_design(rng, 15, 8), seed=0)
    X = random_unit_design(rng, 30, 5) * 2.0
    with pytest.raises(InvalidInputError):
        construct_knockoffs(X, seed=0)
    X = random_unit_design(rng, 30, 5)
    X[:, 4] = X[:, 0]
    with pytest.raises(SingularDesignError):
        construct_knockoffs(X, seed=0)
    with pytest.raises(InvalidInputError):
        construct_knockoffs(random_unit_design(rng, 30, 5), seed=-1)


def test_validate_knockoffs_flags_corruption():
    rng = np.random.default_rng(5)
    X = random_unit_design(rng, 40, 6)
    design = construct_knockoffs(X, seed=0)
    design.X_tilde[0, 0] += 1e-3
    assert not validate_knockoffs(X, design, tol=1e-8).ok


def test_node_statistics_orthogonal_signal():
    """With X = canonical basis columns, a pure signal on feature 0 must beat
    its knockoff, and idle features carry W = 0."""
    n, p = 8, 4
    X = np.eye(n)[:, :p]
    design = construct_knockoffs(X, seed=0)
    y = np.zeros(n)
    y[0] = 5.0
    stats = node_statistics(NodeData(X=X, y=y), design, seed=0)
    assert stats.chi[0] == 1
    assert stats.W[0] > 0
    # A = [X X~] has orthonormal columns here, and y sits entirely on
    # feature 0, so no other pair ever enters the path.
    assert np.all(stats.W[1:] == 0.0)
    assert stats.n_rows == n
    assert stats.p == p


def test_node_statistics_tie_coin_deterministic():
    n, p = 8, 4
    X = np.eye(n)[:, :p]
    design = construct_knockoffs(X, seed=0)
    y = np.zeros(n)
    y[0] = 5.0
    a = node_statistics(NodeData(X=X, y=y), design, seed=11)
    b = node_statistics(NodeData(X=X, y=y), design, seed=11)
    c = node_statistics(NodeData(X=X, y=y), design, seed=12)
    assert np.array_equal(a.chi, b.chi)
    # features 1..3 are exact ties; some seed pair must disagree on at least
    # one coin for these two seeds
    assert np.all(np.abs(c.chi) == 1)


def test_node_statistics_permutation_equivariance():
    """Permuting features (and their knockoffs) permutes the statistics,
    on a tie-free instance."""
    rng = np.random.default_rng(6)
    n, p = 60, 8
    X = random_unit_design(rng, n, p)
    design = construct_knockoffs(X, seed=0)
    beta = np.zeros(p)
    beta[:3] = 3.0
    y = X @ beta + 0.3 * rng.standard_normal(n)
    grid = LambdaGrid(num=60)
    stats = node_statistics(NodeData(X=X, y=y), design, grid, seed=0)
    perm = rng.permutation(p)
    from knockagg.knockoff import KnockoffDesign

    design_p = KnockoffDesign(X_tilde=design.X_tilde[:, perm], s=design.s[perm])
    stats_p = node_statistics(NodeData(X=X[:, perm], y=y), design_p, grid, seed=0)
    # precondition: no exact ties, otherwise coins are drawn per new index
    assert np.all(stats.W > 0) or np.all(stats.chi != 0)
    assert np.array_equal(stats_p.W, stats.W[perm])
    assert np.array_equal(stats_p.chi, stats.chi[perm])


def test_node_statistics_shape_mismatch():
    rng = np.random.default_rng(7)
    X = random_unit_design(rng, 30, 5)
    design = construct_knockoffs(X, seed=0)
    other = NodeData(X=random_unit_design(rng, 30, 4), y=np.zeros(30))
    with pytest.raises(InvalidInputError):
        node_statistics(other, design, seed=0)


def test_ls_contrast_noiseless_recovery():
    """Without noise the contrasts equal beta exactly: signals get W = 1,
    chi = +1; null magnitudes are 0."""
    rng = np.random.default_rng(8)
    p = 6
    Q, _ = np.linalg.qr(rng.standard_normal((2 * p, p)))
    beta = np.array([2.0, 2.0, 2.0, 0.0, 0.0, 0.0])
    y = Q @ beta
    stats = ls_contrast_statistics(NodeData(X=Q, y=y), seed=0)
    assert np.array_equal(stats.W, [1, 1, 1, 0, 0, 0])
    assert np.all(stats.chi[:3] == 1)
    assert np.all(np.abs(stats.chi[3:]) == 1)  # coin on exact zero ties


def test_ls_contrast_median_binarization():
    """|contrasts| = (1,2,3,4) must binarize to (0,0,1,1): the midpoint
    median is 2.5 and only strictly larger magnitudes get a 1."""
    p = 4
    n = 2 * p
    X = np.eye(n)[:, :p]
    # complement of the canonical basis is the remaining basis vectors, so
    # y = X a + U b gives contrasts a - b exactly
    a = np.array([1.0, 2.0, 3.0, 4.0])
    y = np.concatenate([a, np.zeros(p)])
    stats = ls_contrast_statistics(NodeData(X=X, y=y), seed=0)
    assert np.array_equal(stats.W, [0, 0, 1, 1])
    assert np.array_equal(stats.chi, [1, 1, 1, 1])


def test_ls_contrast_odd_count_above_median():
    """With p even and distinct magnitudes exactly p/2 entries are 1."""
    rng = np.random.default_rng(9)
    for trial in range(5):
        p = 10
        Q, _ = np.linalg.qr(rng.standard_normal((2 * p, p)))
        y = rng.standard_normal(2 * p)
        stats = ls_contrast_statistics(NodeData(X=Q, y=y), seed=trial)
        assert stats.W.sum() == p // 2


def test_ls_contrast_rejects_bad_designs():
    rng = np.random.default_rng(10)
    X = random_unit_design(rng, 12, 4)  # not orthonormal
    with pytest.raises(InvalidInputError):
        ls_contrast_statistics(NodeData(X=X, y=np.zeros(12)), seed=0)
    Q, _ = np.linalg.qr(rng.standard_normal((12, 4)))  # n != 2p
    with pytest.raises(InvalidInputError):
        ls_contrast_statistics(NodeData(X=Q, y=np.zeros(12)), seed=0)


def test_ls_contrast_null_signs_are_fair():
    """Under a pure-noise response the sign bits are fair coins."""
    rng = np.random.default_rng(11)
    p = 10
    Q, _ = np.linalg.qr(rng.standard_normal((2 * p, p)))
    total = np.zeros(p)
    reps = 400
    for r in range(reps):
        y = rng.standard_normal(2 * p)
        stats = ls_contrast_statistics(NodeData(X=Q, y=y), seed=r)
        total += stats.chi == 1
    freq = total / reps
    sigma = 0.5 / np.sqrt(reps)
    assert np.abs(freq - 0.5).max() <= 4 * sigma


def test_node_statistics_validation():
    with pytest.raises(InvalidInputError):
        NodeStatistics(chi=np.array([1, 0]), W=np.array([0.0, 0.0]), n_rows=4)
    with pytest.raises(InvalidInputError):
        NodeStatistics(chi=np.array([1, -1]), W=np.array([-0.5, 0.0]), n_rows=4)
    with pytest.raises(InvalidInputError):
        NodeStatistics(chi=np.array([1, -1]), W=np.array([0.5, 0.0]), n_rows=0)
