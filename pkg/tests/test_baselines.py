import numpy as np
import pytest

from knockagg import InsufficientRowsError, InvalidInputError, SingularDesignError
from knockagg.baselines import (
    BhqResult,
    OlsNodeSummary,
    bhq,
    lasso_cv_curve,
    lasso_cv_support,
    majority_vote,
    ols_aggregate_select,
    ols_node_summary,
)
from knockagg.knockoff import NodeData


def orthonormal_design(rng, n, p):
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return Q


def brute_force_bhq(P, q):
    p = len(P)
    order = sorted(range(p), key=lambda j: (P[j], j))
    k_star = 0
    for k in range(1, p + 1):
        if P[order[k - 1]] <= k * q / p:
            k_star = k
    return sorted(order[:k_star]), k_star


# --- BHq -----------------------------------------------------------------

def test_bhq_examples():
    res = bhq([0.01, 0.04, 0.03, 0.5], q=0.1)
    assert res.rejected.tolist() == [0, 1, 2]
    assert res.threshold_index == 3

    res = bhq([1.0, 1.0, 1.0], q=0.2)
    assert res.rejected.size == 0
    assert res.threshold_index == 0

    res = bhq([0.05], q=0.05)  # boundary p_(1) = q
    assert res.rejected.tolist() == [0]


def test_bhq_matches_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(400):
        p = int(rng.integers(1, 13))
        P = np.round(rng.random(p), 2)  # rounding makes ties common
        q = float(rng.uniform(0.05, 0.6))
        want_idx, want_k = brute_force_bhq(P.tolist(), q)
        got = bhq(P, q)
        assert got.rejected.tolist() == want_idx
        assert got.threshold_index == want_k


def test_bhq_monotone_in_single_pvalue():
    rng = np.random.default_rng(13)
    for _ in range(100):
        P = rng.random(8)
        before = set(bhq(P, 0.2).rejected.tolist())
        j = int(rng.integers(0, 8))
        P2 = P.copy()
        P2[j] = P[j] * rng.random()
        after = set(bhq(P2, 0.2).rejected.tolist())
        assert before - {j} <= after


def test_bhq_input_validation():
    with pytest.raises(InvalidInputError):
        bhq([0.5, 1.5], 0.1)
    with pytest.raises(InvalidInputError):
        bhq([0.5], 0.0)
    with pytest.raises(InvalidInputError):
        bhq([], 0.1)


# --- OLS baseline ---------------------------------------------------------

def test_ols_node_summary_orthogonal_identities():
    rng = np.random.default_rng(21)
    X = orthonormal_design(rng, 30, 6)
    y = rng.standard_normal(30)
    s = ols_node_summary(NodeData(X=X, y=y))
    assert np.allclose(s.beta_hat, X.T @ y, atol=1e-10)
    assert np.allclose(s.theta_diag, 1.0, atol=1e-10)


def test_ols_node_summary_theta_matches_inverse_gram():
    rng = np.random.default_rng(22)
    X = rng.standard_normal((50, 7))
    X /= np.linalg.norm(X, axis=0)
    y = rng.standard_normal(50)
    s = ols_node_summary(NodeData(X=X, y=y))
    want = np.diag(np.linalg.inv(X.T @ X))
    assert np.allclose(s.theta_diag, want, rtol=1e-8)


def test_ols_node_summary_errors():
    rng = np.random.default_rng(23)
    col = rng.standard_normal(20)
    col /= np.linalg.norm(col)
    X = np.column_stack([col, col])
    with pytest.raises(SingularDesignError):
        ols_node_summary(NodeData(X=X, y=np.zeros(20)))
    X2 = rng.standard_normal((3, 4))
    X2 /= np.linalg.norm(X2, axis=0)
    with pytest.raises(InsufficientRowsError):
        ols_node_summary(NodeData(X=X2, y=np.zeros(3)))


def test_ols_null_zscores_standard_normal_moments():
    rng = np.random.default_rng(24)
    zs = []
    for _ in range(150):
        X = rng.standard_normal((40, 5))
        X /= np.linalg.norm(X, axis=0)
        y = rng.standard_normal(40)  # global null, unit noise
        s = ols_node_summary(NodeData(X=X, y=y))
        zs.extend((s.beta_hat / np.sqrt(s.theta_diag)).tolist())
    zs = np.array(zs)
    assert abs(zs.mean()) < 4 / np.sqrt(len(zs))
    assert 0.85 < zs.var() < 1.15


def test_ols_aggregate_theta_formula_and_selection():
    # two identical nodes with unit theta: Theta_j = 2/m^2 = 0.5
    s = OlsNodeSummary(beta_hat=np.array([2.0, 0.0]), theta_diag=np.array([1.0, 1.0]))
    res = ols_aggregate_select([s, s], q=0.05)
    # z = (2, 0)/sqrt(0.5); p_1 = erfc(2) ~ 0.0047 <= 0.025
    assert res.rejected.tolist() == [0]


def test_ols_aggregate_invariant_to_node_order():
    rng = np.random.default_rng(25)
    nodes = []
    for _ in range(4):
        X = rng.standard_normal((60, 8))
        X /= np.linalg.norm(X, axis=0)
        beta = np.zeros(8)
        beta[:2] = 3.0
        y = X @ beta + rng.standard_normal(60)
        nodes.append(ols_node_summary(NodeData(X=X, y=y)))
    a = ols_aggregate_select(nodes, q=0.2)
    b = ols_aggregate_select(nodes[::-1], q=0.2)
    assert a.rejected.tolist() == b.rejected.tolist()


def test_ols_aggregate_validation():
    s1 = OlsNodeSummary(beta_hat=np.zeros(3), theta_diag=np.ones(3))
    s2 = OlsNodeSummary(beta_hat=np.zeros(2), theta_diag=np.ones(2))
    with pytest.raises(InvalidInputError):
        ols_aggregate_select([s1, s2], q=0.2)
    with pytest.raises(InvalidInputError):
        ols_aggregate_select([], q=0.2)
    with pytest.raises(InvalidInputError):
        OlsNodeSummary(beta_hat=np.zeros(2), theta_diag=np.array([1.0, 0.0]))


# --- cross-validated lasso -------------------------------------------------

def test_lasso_cv_zero_response_gives_empty_support():
    rng = np.random.default_rng(31)
    X = orthonormal_design(rng, 40, 5)
    got = lasso_cv_support(NodeData(X=X, y=np.zeros(40)))
    assert got.size == 0


def test_lasso_cv_recovers_strong_orthogonal_signal():
    rng = np.random.default_rng(32)
    X = orthonormal_design(rng, 60, 6)
    y = 8.0 * X[:, 2]  # noiseless single signal
    got = lasso_cv_support(NodeData(X=X, y=y), seed=5)
    assert 2 in got.tolist()


def test_lasso_cv_one_se_rule_is_at_least_min_penalty():
    rng = np.random.default_rng(33)
    X = rng.standard_normal((50, 8))
    X /= np.linalg.norm(X, axis=0)
    beta = np.zeros(8)
    beta[:3] = 2.0
    y = X @ beta + rng.standard_normal(50)
    lams, cv_mean, cv_se = lasso_cv_curve(NodeData(X=X, y=y), seed=7)
    best = int(np.argmin(cv_mean))
    lam_1se = lams[np.nonzero(cv_mean <= cv_mean[best] + cv_se[best])[0][0]]
    assert lam_1se >= lams[best]


def test_lasso_cv_deterministic_in_seed():
    rng = np.random.default_rng(34)
    X = rng.standard_normal((45, 6))
    X /= np.linalg.norm(X, axis=0)
    y = X[:, 0] * 3 + rng.standard_normal(45)
    data = NodeData(X=X, y=y)
    a = lasso_cv_support(data, seed=11)
    b = lasso_cv_support(data, seed=11)
    assert np.array_equal(a, b)


def test_lasso_cv_fold_validation():
    rng = np.random.default_rng(35)
    X = orthonormal_design(rng, 20, 3)
    data = NodeData(X=X, y=np.ones(20))
    with pytest.raises(InvalidInputError):
        lasso_cv_support(data, folds=1)
    with pytest.raises(InvalidInputError):
        lasso_cv_support(data, folds=21)


# --- majority vote ----------------------------------------------------------

def test_majority_vote_examples():
    got = majority_vote([[1, 2], [2, 3], [2]], m=3)
    assert got.tolist() == [2]
    assert majority_vote([[4], []], m=2).size == 0  # 1 of 2 is not a majority
    assert majority_vote([[], [], []], m=3).size == 0
    assert majority_vote([[0, 1]], m=1).tolist() == [0, 1]


def test_majority_vote_containment():
    rng = np.random.default_rng(41)
    for m in (3, 5):
        supports = [rng.choice(10, size=rng.integers(0, 6), replace=False)
                    for _ in range(m)]
        got = set(majority_vote(supports, m=m).tolist())
        union = set().union(*(set(s.tolist()) for s in supports))
        inter = set(supports[0].tolist())
        for s in supports[1:]:
            inter &= set(s.tolist())
        assert got <= union
        assert inter <= got  # m odd: intersection appears in > m/2 sets


def test_majority_vote_count_mismatch():
    with pytest.raises(InvalidInputError):
        majority_vote([[1], [2]], m=3)
