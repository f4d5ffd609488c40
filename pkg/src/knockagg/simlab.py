"""Synthetic-data generators, metrics, and replicated experiment drivers.

An experiment fixes m node designs, draws a shared sparse coefficient
vector, then repeatedly redraws responses, runs the chosen method end to
end (node statistics, wire encode/decode, coordinator selection, or one
of the baselines), and records FDP, power, weighted FDP, support Hamming
distance, and communication cost per replicate. Everything is a pure
function of the config, seed included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import lasso_cv_support, majority_vote, ols_aggregate_select, ols_node_summary
from .coordinator import (
    ConfidenceSpec,
    SelectionResult,
    SummarySpec,
    aggregate_summaries,
    knockoff_select,
    selection_csv,
    wfdp,
)
from .errors import ConfigError, InvalidInputError
from .knockoff import (
    NodeData,
    construct_knockoffs,
    ls_contrast_statistics,
    node_statistics,
    normalize_columns,
)
from .numerics import orthonormal_complement
from .lasso import LambdaGrid
from .seeds import (
    TAG_DESIGN,
    TAG_FOLD,
    TAG_KNOCKOFF,
    TAG_NOISE,
    TAG_SIGNAL,
    TAG_TIE,
    check_seed,
    child_rng,
    derive_seed,
)
from .wire import (
    MODE_BINARY,
    MODES,
    decode_summary,
    message_bits,
    serialize_summary,
    summarize,
)

METHODS = ("knockagg", "ols_bhq", "lasso_vote")

# dense per-node baseline messages: beta_hat and theta_diag as 32-bit reals
OLS_BITS_PER_FEATURE = 2 * 32
# lasso majority vote ships one support bit per feature, byte padded
def _vote_bits(p: int) -> int:
    return 8 * math.ceil(p / 8)


def _parse_sigma_spec(spec: str, p: int):
    """Return the covariance Cholesky factor, or None for identity."""
    if spec == "identity":
        return None
    if spec == "paper_corr":
        off = -0.3 / (0.3 * (p - 2) + 1.0)
        S = np.full((p, p), off)
        np.fill_diagonal(S, 1.0)
        return np.linalg.cholesky(S)
    if spec.startswith("equicorr:"):
        try:
            rho = float(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad equicorr value in {spec!r}") from None
        if not -1.0 / (p - 1) < rho < 1.0:
            raise ConfigError(f"equicorr rho {rho} not positive definite at p={p}")
        S = np.full((p, p), rho)
        np.fill_diagonal(S, 1.0)
        return np.linalg.cholesky(S)
    raise ConfigError(f"unknown sigma_spec {spec!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell; JSON-serializable via to_dict/from_dict."""

    p: int
    n: int
    m: int
    k: int
    A: float
    q: float
    sigma_spec: str = "identity"
    gamma: SummarySpec = field(default_factory=lambda: SummarySpec("weighted_sum"))
    omega: ConfidenceSpec = field(default_factory=lambda: ConfidenceSpec("step", c=0.5))
    wire_mode: str = "raw32"
    replicates: int = 1
    seed: int = 0
    method: str = "knockagg"
    redraw_designs: bool = False
    sigma: tuple[float, ...] | float = 1.0

    def __post_init__(self):
        if self.p < 1 or self.n < 1 or self.m < 1:
            raise ConfigError("p, n, m must be positive")
        if not 0 <= self.k <= self.p:
            raise ConfigError(f"k must lie in [0, p], got {self.k}")
        if not math.isfinite(self.A) or self.A < 0:
            raise ConfigError(f"A must be nonnegative, got {self.A}")
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.wire_mode not in MODES:
            raise ConfigError(f"unknown wire_mode {self.wire_mode!r}")
        if self.method == "knockagg" and self.n < 2 * self.p:
            raise ConfigError(
                f"knockoff construction needs n >= 2p, got n={self.n}, p={self.p}"
            )
        if self.method == "ols_bhq" and self.n < self.p:
            raise ConfigError("OLS baseline needs n >= p")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        check_seed(self.seed)
        _parse_sigma_spec(self.sigma_spec, self.p)
        if isinstance(self.sigma, (int, float)) and not isinstance(self.sigma, bool):
            if not self.sigma > 0:
                raise ConfigError("sigma must be positive")
            object.__setattr__(self, "sigma", float(self.sigma))
        else:
            vals = tuple(float(s) for s in self.sigma)
            if len(vals) != self.m or any(v <= 0 for v in vals):
                raise ConfigError("per-node sigma list needs m positive entries")
            object.__setattr__(self, "sigma", vals)

    def node_sigma(self, i: int) -> float:
        return self.sigma if isinstance(self.sigma, float) else self.sigma[i]

    def to_dict(self) -> dict:
        gamma = {"kind": self.gamma.kind}
        if self.gamma.r is not None:
            gamma["r"] = self.gamma.r
        if self.gamma.weights is not None:
            gamma["weights"] = list(self.gamma.weights)
        omega = {"kind": self.omega.kind}
        if self.omega.c is not None:
            omega["c"] = self.omega.c
        if self.omega.d is not None:
            omega["d"] = self.omega.d
        if self.omega.points is not None:
            omega["points"] = [list(pt) for pt in self.omega.points]
        return {
            "p": self.p, "n": self.n, "m": self.m, "k": self.k,
            "A": self.A, "q": self.q, "sigma_spec": self.sigma_spec,
            "gamma": gamma, "omega": omega, "wire_mode": self.wire_mode,
            "replicates": self.replicates, "seed": self.seed,
            "method": self.method, "redraw_designs": self.redraw_designs,
            "sigma": list(self.sigma) if isinstance(self.sigma, tuple) else self.sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__ if f != "gamma" and f != "omega"}
        extra = set(data) - known - {"gamma", "omega"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = {k: v for k, v in data.items() if k in known}
        try:
            if "gamma" in data:
                g = dict(data["gamma"])
                if "weights" in g:
                    g["weights"] = tuple(g["weights"])
                kwargs["gamma"] = SummarySpec(**g)
            if "omega" in data:
                o = dict(data["omega"])
                if "points" in o:
                    o["points"] = tuple(tuple(pt) for pt in o["points"])
                kwargs["omega"] = ConfidenceSpec(**o)
            if "sigma" in data and isinstance(data["sigma"], list):
                kwargs["sigma"] = tuple(data["sigma"])
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass
class Metrics:
    fdp: float
    power: float
    wfdp: float
    hamming: int
    comm_bits: int


@dataclass
class OrthogonalExample:
    """Per-node orthonormal designs and a shared two-level coefficient vector."""

    designs: list[np.ndarray]
    beta: np.ndarray
    mu: float


def gen_design(n: int, p: int, sigma_spec: str, seed: int) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) per sigma_spec, then columns scaled to unit norm."""
    if n < p:
        raise InvalidInputError(f"need n >= p, got n={n}, p={p}")
    L = _parse_sigma_spec(sigma_spec, p)
    rng = child_rng(seed, TAG_DESIGN)
    Z = rng.standard_normal((n, p))
    X = Z if L is None else Z @ L.T
    return normalize_columns(X)


def gen_signal(p: int, k: int, A: float, seed: int) -> np.ndarray:
    """Exactly k coefficients set to A at uniformly chosen positions."""
    if not 0 <= k <= p:
        raise InvalidInputError(f"k must lie in [0, p], got {k}")
    beta = np.zeros(p)
    if k:
        rng = child_rng(seed, TAG_SIGNAL)
        beta[rng.choice(p, size=k, replace=False)] = A
    return beta


def gen_response(X: np.ndarray, beta: np.ndarray, seed: int,
                 sigma: float = 1.0) -> np.ndarray:
    """y = X beta + sigma * z with standard normal z from the seeded stream."""
    if X.shape[1] != beta.shape[0]:
        raise InvalidInputError("beta length must match design columns")
    rng = child_rng(seed, TAG_NOISE)
    return X @ beta + sigma * rng.standard_normal(X.shape[0])


def gen_orthogonal_example(p: int, m: int, seed: int,
                           mu_scale: float = 1.0) -> OrthogonalExample:
    """m random 2p x p orthonormal designs plus a shared {0, mu} coefficient
    vector, mu = mu_scale * sqrt(ln p / m), each entry a fair coin."""
    if p < 2 or m < 1:
        raise InvalidInputError(f"need p >= 2 and m >= 1, got p={p}, m={m}")
    designs = []
    for i in range(m):
        Z = child_rng(seed, TAG_DESIGN, i).standard_normal((2 * p, p))
        Q, _ = np.linalg.qr(Z)
        designs.append(Q)
    mu = mu_scale * math.sqrt(math.log(p) / m)
    coins = child_rng(seed, TAG_SIGNAL).integers(0, 2, size=p)
    return OrthogonalExample(designs=designs, beta=mu * coins.astype(np.float64), mu=mu)


def compute_metrics(selection, truth, comm_bits: int) -> Metrics:
    """FDP, power, weighted FDP, and support Hamming distance.

    selection is either a SelectionResult (weighted wfdp) or a boolean
    rejection vector (binary weights, so wfdp = fdp). truth marks features
    that are nonzero in at least one node's coefficients.
    """
    truth = np.asarray(truth, dtype=bool)
    if isinstance(selection, SelectionResult):
        rejected = selection.rejected
        wf = wfdp(selection, ~truth)
    else:
        rejected = np.asarray(selection, dtype=bool)
        wf = None
    if rejected.shape != truth.shape:
        raise InvalidInputError("selection and truth lengths differ")
    n_sel = int(rejected.sum())
    false_sel = int((rejected & ~truth).sum())
    fdp = false_sel / max(n_sel, 1)
    power = int((rejected & truth).sum()) / max(int(truth.sum()), 1)
    hamming = int((rejected != truth).sum())
    return Metrics(fdp=fdp, power=power, wfdp=fdp if wf is None else wf,
                   hamming=hamming, comm_bits=int(comm_bits))


CSV_HEADER = "replicate,method,p,n,m,k,A,q,fdp,power,wfdp,hamming,comm_bits"

_AGG_FIELDS = ("fdp", "power", "wfdp", "hamming", "comm_bits")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: list[Metrics]
    selections: list[str]  # per-replicate selection CSV text

    def mean(self, name: str) -> float:
        return float(np.mean([getattr(row, name) for row in self.metrics]))

    def sd(self, name: str) -> float:
        vals = [getattr(row, name) for row in self.metrics]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def to_csv(self) -> str:
        cfg = self.config
        prefix = (f"{cfg.method},{cfg.p},{cfg.n},{cfg.m},{cfg.k},"
                  f"{float(cfg.A)!r},{float(cfg.q)!r}")
        lines = [CSV_HEADER]
        for r, row in enumerate(self.metrics):
            lines.append(
                f"{r},{prefix},{row.fdp!r},{row.power!r},{row.wfdp!r},"
                f"{row.hamming},{row.comm_bits}"
            )
        means = ",".join(repr(self.mean(f)) for f in _AGG_FIELDS)
        lines.append(f"mean,{prefix},{means}")
        return "\n".join(lines) + "\n"


def _node_designs(config: ExperimentConfig, rep: int) -> list[np.ndarray]:
    keys = (lambda i: (TAG_DESIGN, i, rep)) if config.redraw_designs else (
        lambda i: (TAG_DESIGN, i))
    return [
        gen_design(config.n, config.p, config.sigma_spec,
                   derive_seed(config.seed, *keys(i)))
        for i in range(config.m)
    ]


def _responses(config: ExperimentConfig, designs, beta, rep: int):
    return [
        gen_response(designs[i], beta,
                     derive_seed(config.seed, TAG_NOISE, rep, i),
                     sigma=config.node_sigma(i))
        for i in range(config.m)
    ]


def _knockagg_replicate(config, designs, knockoffs, ys, rep, grid, bypass_wire):
    summaries = []
    for i in range(config.m):
        data = NodeData(X=designs[i], y=ys[i])
        stats = node_statistics(data, knockoffs[i], grid,
                                seed=derive_seed(config.seed, TAG_TIE, rep, i))
        summary = summarize(stats, config.wire_mode, node_id=i)
        if not bypass_wire:
            summary = decode_summary(serialize_summary(summary))
        summaries.append(summary)
    agg = aggregate_summaries(summaries, config.gamma)
    result = knockoff_select(agg, config.q, config.omega)
    comm = config.m * message_bits(config.p, config.wire_mode)
    return result, selection_csv(agg, result), comm


def run_experiment(config: ExperimentConfig, *, grid: LambdaGrid | None = None,
                   bypass_wire: bool = False) -> ExperimentResult:
    """Replicated end-to-end run of one method on one configuration.

    Designs are drawn once (unless config.redraw_designs) and responses
    are redrawn each replicate. The knockagg method always routes node
    summaries through the wire encoding unless bypass_wire is set, which
    skips the byte round trip but keeps the same summary objects.
    """
    beta = gen_signal(config.p, config.k, config.A, config.seed)
    truth = beta != 0.0
    designs = None
    knockoffs = None
    metrics: list[Metrics] = []
    selections: list[str] = []
    for rep in range(config.replicates):
        if designs is None or config.redraw_designs:
            designs = _node_designs(config, rep)
            if config.method == "knockagg":
                knockoffs = [
                    construct_knockoffs(designs[i],
                                        derive_seed(config.seed, TAG_KNOCKOFF, i))
                    for i in range(config.m)
                ]
        ys = _responses(config, designs, beta, rep)
        if config.method == "knockagg":
            result, csv_text, comm = _knockagg_replicate(
                config, designs, knockoffs, ys, rep, grid, bypass_wire)
            metrics.append(compute_metrics(result, truth, comm))
            selections.append(csv_text)
        elif config.method == "ols_bhq":
            nodes = [ols_node_summary(NodeData(X=designs[i], y=ys[i]))
                     for i in range(config.m)]
            res = ols_aggregate_select(nodes, config.q)
            rejected = np.zeros(config.p, dtype=bool)
            rejected[res.rejected] = True
            comm = config.m * config.p * OLS_BITS_PER_FEATURE
            metrics.append(compute_metrics(rejected, truth, comm))
            selections.append("")
        else:
            supports = [
                lasso_cv_support(NodeData(X=designs[i], y=ys[i]),
                                 seed=derive_seed(config.seed, TAG_FOLD, rep, i))
                for i in range(config.m)
            ]
            voted = majority_vote(supports, config.m)
            rejected = np.zeros(config.p, dtype=bool)
            rejected[voted] = True
            comm = config.m * _vote_bits(config.p)
            metrics.append(compute_metrics(rejected, truth, comm))
            selections.append("")
    return ExperimentResult(config=config, metrics=metrics, selections=selections)


def run_sweep(base: ExperimentConfig, k_values, m_values) -> list[ExperimentResult]:
    """Cross sparsity and node-count lists over a shared base config.

    The base seed is reused so designs and noise are paired across cells:
    the first node's data at m = 1 equals the first node's data at m = 5.
    """
    results = []
    for k in k_values:
        for m in m_values:
            sigma = base.sigma
            if isinstance(sigma, tuple):
                raise ConfigError("per-node sigma lists do not combine with sweeps")
            results.append(run_experiment(replace(base, k=int(k), m=int(m))))
    return results


@dataclass
class Section4Row:
    m: int
    q_used: float
    hamming_fracs: np.ndarray
    fdps: np.ndarray
    powers: np.ndarray
    comm_bits: int

    @property
    def hamming_frac_mean(self) -> float:
        return float(self.hamming_fracs.mean())

    @property
    def fdp_mean(self) -> float:
        return float(self.fdps.mean())

    @property
    def power_mean(self) -> float:
        return float(self.powers.mean())


def run_section4_recovery(p: int, m_list, q: float = 0.2, seed: int = 0,
                          replicates: int = 20, mu_scale: float = 1.0,
                          q_schedule: str | None = None,
                          noise_sigma: float = 1.0) -> list[Section4Row]:
    """Support recovery on orthonormal designs as the node count grows.

    Per node: exact least-squares contrasts, median-binarized W, sign chi;
    one binary-median message each. The coordinator sums the binary W
    across nodes and selects with a step(0.5) confidence function.

    q_schedule None keeps q fixed for every m; "inv_sqrt" uses q / sqrt(m),
    a slowly vanishing level in the node count. noise_sigma = 0 gives the
    noiseless sanity variant where every signal is recovered.
    """
    check_seed(seed)
    if p < 50:
        raise InvalidInputError(f"need p >= 50, got {p}")
    if not (np.isfinite(noise_sigma) and noise_sigma >= 0.0):
        raise InvalidInputError(f"noise_sigma must be >= 0, got {noise_sigma}")
    m_list = [int(m) for m in m_list]
    if any(m < 2 for m in m_list):
        raise InvalidInputError("each m must be at least 2")
    if q_schedule not in (None, "inv_sqrt"):
        raise ConfigError(f"unknown q_schedule {q_schedule!r}")
    omega = ConfidenceSpec("step", c=0.5)
    rows = []
    for m in m_list:
        q_m = q / math.sqrt(m) if q_schedule == "inv_sqrt" else q
        if not 0.0 < q_m < 1.0:
            raise ConfigError(f"scheduled q at m={m} is {q_m}, outside (0, 1)")
        example = gen_orthogonal_example(p, m, seed, mu_scale=mu_scale)
        complements = [orthonormal_complement(X) for X in example.designs]
        truth = example.beta != 0.0
        gamma = SummarySpec("sum_top_r", r=m)
        hams = np.empty(replicates)
        fdps = np.empty(replicates)
        powers = np.empty(replicates)
        for rep in range(replicates):
            summaries = []
            for i in range(m):
                y = gen_response(example.designs[i], example.beta,
                                 derive_seed(seed, TAG_NOISE, m, rep, i),
                                 sigma=noise_sigma)
                stats = ls_contrast_statistics(
                    NodeData(X=example.designs[i], y=y),
                    seed=derive_seed(seed, TAG_TIE, m, rep, i),
                    complement=complements[i])
                summaries.append(decode_summary(serialize_summary(
                    summarize(stats, MODE_BINARY, node_id=i))))
            agg = aggregate_summaries(summaries, gamma)
            result = knockoff_select(agg, q_m, omega)
            met = compute_metrics(result, truth, m * message_bits(p, MODE_BINARY))
            hams[rep] = met.hamming / p
            fdps[rep] = met.fdp
            powers[rep] = met.power
        rows.append(Section4Row(m=m, q_used=q_m, hamming_fracs=hams,
                                fdps=fdps, powers=powers,
                                comm_bits=m * message_bits(p, MODE_BINARY)))
    return rows


def write_plot_data(path, rows) -> None:
    """Plain-text (x, mean, sd) triples, one per line, gnuplot friendly."""
    lines = ["# x mean sd"]
    for x, mean, sd in rows:
        lines.append(f"{x} {float(mean)!r} {float(sd)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
