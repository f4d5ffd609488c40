"""Aggregation of node summaries and the weighted selection rule.

The coordinator receives one (chi, W) pair per node. Per feature it counts
the +1 signs, turns that count into an exact binomial upper-tail p-value,
collapses the m ordering statistics through a summary function Gamma, and
then walks the features in decreasing aggregated-W order, keeping the
longest prefix whose estimated false discovery proportion stays under the
target. Rejections carry a confidence weight Omega(P_j) in [0, 1]; the
procedure controls the Omega-weighted FDR at level q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidConfidenceError, InvalidInputError, ProtocolError

GAMMA_KINDS = ("max", "sum_top_r", "product_top_r", "weighted_sum")
OMEGA_KINDS = ("step", "linear", "poly", "tabulated")

# switch binomial tail sums from exact integer arithmetic to log-space
EXACT_BINOMIAL_MAX_M = 64


@dataclass(frozen=True)
class SummarySpec:
    """How per-node W values collapse into one aggregated W per feature.

    kind "max" takes the largest node statistic, "sum_top_r" and
    "product_top_r" combine the r largest (2 <= r <= m), and
    "weighted_sum" computes sum_i weights_i * W_j^i. For weighted_sum,
    weights default to the node row counts when built via
    aggregate_summaries; pass them explicitly otherwise.
    """

    kind: str
    r: int | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in GAMMA_KINDS:
            raise ConfigError(f"unknown summary kind {self.kind!r}")
        if self.kind in ("sum_top_r", "product_top_r"):
            if self.r is None:
                raise ConfigError(f"{self.kind} requires r")
            if not isinstance(self.r, int) or isinstance(self.r, bool) or self.r < 2:
                raise ConfigError(f"r must be an integer >= 2, got {self.r!r}")
        elif self.r is not None:
            raise ConfigError(f"r is only valid for top-r kinds, not {self.kind!r}")
        if self.weights is not None:
            if self.kind != "weighted_sum":
                raise ConfigError("weights are only valid for weighted_sum")
            w = tuple(float(v) for v in self.weights)
            if len(w) == 0 or any(not math.isfinite(v) or v <= 0 for v in w):
                raise ConfigError("weights must be positive and finite")
            object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class ConfidenceSpec:
    """Confidence function Omega: non-increasing on [0,1], Omega(0)=1, Omega(1)=0.

    Kinds: step (1 for P <= c, else 0), linear (1 - P), poly ((1 - P)^d
    with d >= 1), tabulated (piecewise-linear through given (P, Omega)
    knots). expected_value holds E Omega(U) for U uniform on [0, 1],
    computed once at construction; for the piecewise-linear kinds the
    trapezoid rule is the exact integral.
    """

    kind: str
    c: float | None = None
    d: float | None = None
    points: tuple[tuple[float, float], ...] | None = None
    expected_value: float = field(init=False)

    def __post_init__(self):
        if self.kind not in OMEGA_KINDS:
            raise InvalidConfidenceError(f"unknown confidence kind {self.kind!r}")
        if self.kind == "step":
            if self.c is None or not (0.0 < self.c < 1.0):
                raise InvalidConfidenceError(f"step needs 0 < c < 1, got {self.c!r}")
            ev = float(self.c)
        elif self.kind == "linear":
            if self.c is not None or self.d is not None:
                raise InvalidConfidenceError("linear takes no parameters")
            ev = 0.5
        elif self.kind == "poly":
            if self.d is None or not math.isfinite(self.d) or self.d < 1.0:
                raise InvalidConfidenceError(f"poly needs d >= 1, got {self.d!r}")
            ev = 1.0 / (float(self.d) + 1.0)
        else:
            if self.points is None or len(self.points) < 2:
                raise InvalidConfidenceError("tabulated needs at least two points")
            pts = tuple((float(x), float(w)) for x, w in self.points)
            xs = np.array([pt[0] for pt in pts])
            ws = np.array([pt[1] for pt in pts])
            if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
                raise InvalidConfidenceError(
                    "tabulated P knots must increase strictly from 0 to 1"
                )
            if ws[0] != 1.0 or ws[-1] != 0.0 or np.any(np.diff(ws) > 0):
                raise InvalidConfidenceError(
                    "tabulated values must fall from 1 at P=0 to 0 at P=1"
                )
            object.__setattr__(self, "points", pts)
            ev = float(np.trapezoid(ws, xs))
        if not 0.0 < ev < 1.0:
            raise InvalidConfidenceError(f"E Omega(U) = {ev} outside (0, 1)")
        object.__setattr__(self, "expected_value", ev)

    def __call__(self, pvalues) -> np.ndarray:
        P = np.asarray(pvalues, dtype=np.float64)
        if P.size and (not np.all(np.isfinite(P)) or P.min() < 0 or P.max() > 1):
            raise InvalidInputError("p-values must lie in [0, 1]")
        if self.kind == "step":
            return (P <= self.c).astype(np.float64)
        if self.kind == "linear":
            return 1.0 - P
        if self.kind == "poly":
            return (1.0 - P) ** self.d
        xs = np.array([pt[0] for pt in self.points])
        ws = np.array([pt[1] for pt in self.points])
        return np.interp(P, xs, ws)


@dataclass
class AggregateStats:
    """Per-feature aggregates: +1 counts, combined W, binomial p-values."""

    chi: np.ndarray
    W: np.ndarray
    P: np.ndarray
    m: int

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=np.int64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.P = np.asarray(self.P, dtype=np.float64)
        p = self.chi.shape[0]
        if self.chi.ndim != 1 or p == 0 or self.W.shape != (p,) or self.P.shape != (p,):
            raise InvalidInputError("chi, W, P must be 1-D vectors of equal length")
        if self.m < 1:
            raise InvalidInputError("m must be at least 1")
        if self.chi.min() < 0 or self.chi.max() > self.m:
            raise InvalidInputError("chi counts must lie in [0, m]")
        if not np.all(np.isfinite(self.W)) or self.W.min() < 0:
            raise InvalidInputError("aggregated W must be finite and nonnegative")
        if not np.all(np.isfinite(self.P)) or self.P.min() <= 0 or self.P.max() > 1:
            raise InvalidInputError("p-values must lie in (0, 1]")

    @property
    def p(self) -> int:
        return self.chi.shape[0]


@dataclass
class SelectionResult:
    """Outcome of the weighted selection scan.

    rho is the W-descending feature order (0-based indices, ties broken by
    ascending index). k_hat is the chosen prefix length, or None when no
    prefix meets the bound. omega holds the rejection weights in feature
    order; rejected is omega > 0.
    """

    rho: np.ndarray
    k_hat: int | None
    omega: np.ndarray
    rejected: np.ndarray
    q: float


def aggregate_chi(chi_vectors) -> np.ndarray:
    """Count the +1 signs per feature across nodes."""
    arr = np.asarray(chi_vectors)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("need an m x p array of signs")
    if not np.all(np.abs(arr) == 1):
        raise InvalidInputError("sign entries must be +1 or -1")
    return (arr == 1).sum(axis=0).astype(np.int64)


def aggregate_w(w_vectors, gamma: SummarySpec) -> np.ndarray:
    """Collapse the m per-node W vectors feature-wise through Gamma."""
    arr = np.asarray(w_vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError("need an m x p array of W values")
    if not np.all(np.isfinite(arr)) or arr.min() < 0:
        raise InvalidInputError("W values must be finite and nonnegative")
    m = arr.shape[0]
    if gamma.kind == "max":
        return arr.max(axis=0)
    if gamma.kind == "weighted_sum":
        if gamma.weights is None:
            raise ConfigError("weighted_sum needs weights (e.g. node row counts)")
        if len(gamma.weights) != m:
            raise ConfigError(
                f"got {len(gamma.weights)} weights for {m} nodes"
            )
        return np.asarray(gamma.weights) @ arr
    if gamma.r > m:
        raise ConfigError(f"top-r summary needs r <= m, got r={gamma.r} with m={m}")
    top = np.sort(arr, axis=0)[m - gamma.r :]
    if gamma.kind == "sum_top_r":
        return top.sum(axis=0)
    return top.prod(axis=0)


def binomial_pvalue(chi_count: int, m: int) -> float:
    """Upper-tail probability of Binomial(m, 1/2) at chi_count.

    Exact integer arithmetic up to m = 64 (the division of the two exact
    integers is correctly rounded); log-space accumulation beyond.
    """
    if m < 1:
        raise InvalidInputError(f"m must be at least 1, got {m}")
    c = int(chi_count)
    if c != chi_count or not 0 <= c <= m:
        raise InvalidInputError(f"chi count must be an integer in [0, {m}], got {chi_count!r}")
    if m <= EXACT_BINOMIAL_MAX_M:
        return sum(math.comb(m, i) for i in range(c, m + 1)) / (1 << m)
    log_terms = [
        math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1)
        for i in range(c, m + 1)
    ]
    peak = max(log_terms)
    total = peak + math.log(sum(math.exp(t - peak) for t in log_terms))
    return math.exp(total - m * math.log(2.0))


def expected_omega(omega: ConfidenceSpec) -> float:
    """E Omega(U) for U uniform on [0, 1]."""
    return omega.expected_value


def aggregate_summaries(summaries, gamma: SummarySpec) -> AggregateStats:
    """Fuse decoded node summaries into per-feature aggregate statistics.

    For weighted_sum with no explicit weights, each node's row count is
    its weight.
    """
    summaries = list(summaries)
    if not summaries:
        raise InvalidInputError("need at least one node summary")
    p = summaries[0].p
    if any(s.p != p for s in summaries):
        raise InvalidInputError("node summaries disagree on feature count")
    ids = [s.node_id for s in summaries]
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate node_id among summaries")
    if gamma.kind == "weighted_sum" and gamma.weights is None:
        gamma = SummarySpec(kind="weighted_sum",
                            weights=tuple(s.n_rows for s in summaries))
    m = len(summaries)
    chi = aggregate_chi(np.stack([s.chi for s in summaries]))
    W = aggregate_w(np.stack([s.w for s in summaries]), gamma)
    P = np.array([binomial_pvalue(c, m) for c in chi])
    return AggregateStats(chi=chi, W=W, P=P, m=m)


def knockoff_select(stats: AggregateStats, q: float,
                    omega: ConfidenceSpec) -> SelectionResult:
    """Weighted selection scan over features ranked by aggregated W.

    Keeps the longest prefix k with
    (1 + sum_{j<=k} (1 - omega_j)) / (sum_{j<=k} omega_j) <= q/E - q,
    evaluating omega_j = Omega(P) in rank order; the ratio counts as
    +inf while the denominator is zero.
    """
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"q must lie in (0, 1), got {q}")
    p = stats.p
    rho = np.lexsort((np.arange(p), -stats.W))
    om_sorted = omega(stats.P[rho])
    cum = np.cumsum(om_sorted)
    ranks = np.arange(1, p + 1, dtype=np.float64)
    ratio = np.full(p, np.inf)
    pos = cum > 0
    ratio[pos] = (1.0 + ranks[pos] - cum[pos]) / cum[pos]
    bound = q / omega.expected_value - q
    passing = np.nonzero(ratio <= bound)[0]
    k_hat = int(passing[-1]) + 1 if passing.size else None
    omega_full = np.zeros(p)
    if k_hat is not None:
        omega_full[rho[:k_hat]] = om_sorted[:k_hat]
    return SelectionResult(rho=rho, k_hat=k_hat, omega=omega_full,
                           rejected=omega_full > 0, q=q)


def wfdp(result: SelectionResult, null_mask) -> float:
    """Weighted false discovery proportion; 0 when nothing carries weight."""
    nulls = np.asarray(null_mask, dtype=bool)
    if nulls.shape != result.omega.shape:
        raise InvalidInputError("null mask length must match feature count")
    total = result.omega.sum()
    if total <= 0.0:
        return 0.0
    return float(result.omega[nulls].sum() / total)


def selection_csv(stats: AggregateStats, result: SelectionResult) -> str:
    """Render the selection as CSV text, one row per feature."""
    lines = ["feature_index,W,chi,P,omega,rejected"]
    for j in range(stats.p):
        lines.append(
            f"{j},{float(stats.W[j])!r},{int(stats.chi[j])},"
            f"{float(stats.P[j])!r},{float(result.omega[j])!r},"
            f"{int(result.rejected[j])}"
        )
    return "\n".join(lines) + "\n"
