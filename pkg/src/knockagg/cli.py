"""Command line frontend for the file-based pipeline.

Subcommands mirror the one-shot protocol: `node` turns one design/response
pair into a single encoded summary message, `aggregate` turns m such files
into a selection CSV, `baseline` runs the reference methods on the same
file pairs, `experiment` drives seeded simulations from a JSON config, and
`validate-knockoffs` checks the Gram identities on a design file.

Exit codes: 0 success, 1 validation error (bad flags, bad files, bad
config), 2 runtime error. The environment variable KNOCKAGG_SEED overrides
config seeds; an explicit --seed flag overrides both.
"""

import argparse
import json
import os
import struct
import sys
import tempfile
from importlib import resources

import numpy as np

from .baselines import lasso_cv_support, majority_vote, ols_aggregate_select, ols_node_summary
from .coordinator import (
    ConfidenceSpec,
    SummarySpec,
    aggregate_summaries,
    knockoff_select,
    selection_csv,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    InvalidInputError,
    KnockaggError,
)
from .knockoff import (
    COLUMN_NORM_ATOL,
    NodeData,
    construct_knockoffs,
    node_statistics,
    normalize_columns,
    validate_knockoffs,
)
from .seeds import TAG_FOLD, TAG_KNOCKOFF, TAG_TIE, check_seed, derive_seed
from .simlab import (
    CSV_HEADER,
    ExperimentConfig,
    run_experiment,
    run_section4_recovery,
    run_sweep,
    write_plot_data,
)
from .wire import (
    MODE_RAW32,
    MODES,
    read_summary_file,
    serialize_summary,
    summarize,
)

SEED_ENV = "KNOCKAGG_SEED"

SECTION4_KEYS = {"study", "p", "m", "q", "seed", "replicates", "mu_scale",
                 "q_schedule", "noise_sigma"}


class _UsageError(ConfigError):
    """Bad flags or arguments; printed with usage and mapped to exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _atomic_write(path, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".knockagg.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def read_matrix(path, name: str = "matrix") -> np.ndarray:
    """Parse a whitespace- or comma-separated numeric matrix.

    Blank lines and #-comments are skipped. Errors name the offending
    row and column so a bad cell in a big file is findable.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {name} file {path}: {exc}") from exc
    rows = []
    width = None
    row_no = 0
    for raw in raw_lines:
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        row_no += 1
        vals = []
        for col_no, token in enumerate(text.replace(",", " ").split(), start=1):
            try:
                vals.append(float(token))
            except ValueError:
                raise InvalidInputError(
                    f"{name} file {path}: row {row_no}, column {col_no}: "
                    f"cannot parse {token!r} as a number"
                ) from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise InvalidInputError(
                f"{name} file {path}: row {row_no} has {len(vals)} fields, "
                f"expected {width}"
            )
        rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{name} file {path} has no data rows")
    return np.asarray(rows, dtype=np.float64)


def read_response(path) -> np.ndarray:
    """A response vector: one column, or a single row of values."""
    arr = read_matrix(path, name="response")
    if arr.shape[1] == 1 or arr.shape[0] == 1:
        return arr.ravel()
    raise InvalidInputError(
        f"response file {path} must be a single column or row, "
        f"got shape {arr.shape[0]}x{arr.shape[1]}"
    )


def _prepared_design(X: np.ndarray) -> np.ndarray:
    """Columns are rescaled to unit norm unless they already are, so files
    produced from pre-normalized designs pass through bit-identically."""
    norms = np.linalg.norm(X, axis=0)
    if norms.size and np.abs(norms - 1.0).max() <= COLUMN_NORM_ATOL:
        return X
    return normalize_columns(X)


def parse_gamma(text: str) -> SummarySpec:
    """Summary-function flag: max | sum_top_r:R | product_top_r:R |
    weighted_sum (weights default to the node sample sizes)."""
    kind, _, arg = text.partition(":")
    if kind in ("sum_top_r", "product_top_r"):
        if not arg:
            raise ConfigError(f"gamma {kind} needs a rank, e.g. {kind}:3")
        try:
            r = int(arg)
        except ValueError:
            raise ConfigError(f"gamma {kind}: rank {arg!r} is not an integer") from None
        return SummarySpec(kind, r=r)
    if arg:
        raise ConfigError(f"gamma kind {kind!r} takes no argument")
    return SummarySpec(kind)


def parse_omega(text: str) -> ConfidenceSpec:
    """Confidence-function flag: step[:c] | linear | poly[:d]."""
    kind, _, arg = text.partition(":")
    if kind == "step":
        try:
            c = float(arg) if arg else 0.5
        except ValueError:
            raise ConfigError(f"omega step: cutoff {arg!r} is not a number") from None
        return ConfidenceSpec("step", c=c)
    if kind == "poly":
        try:
            d = int(arg) if arg else 1
        except ValueError:
            raise ConfigError(f"omega poly: degree {arg!r} is not an integer") from None
        return ConfidenceSpec("poly", d=d)
    if kind == "linear":
        if arg:
            raise ConfigError("omega linear takes no argument")
        return ConfidenceSpec("linear")
    raise ConfigError(f"unknown omega kind {kind!r} (step, linear, poly)")


def _resolve_seed(flag_seed, fallback: int) -> int:
    if flag_seed is not None:
        return check_seed(flag_seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return check_seed(int(env))
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not a valid seed") from None
    return check_seed(fallback)


def _node_pairs(args) -> list[NodeData]:
    nodes = []
    for design_path, response_path in args.node:
        X = _prepared_design(read_matrix(design_path, name="design"))
        y = read_response(response_path)
        nodes.append(NodeData(X=X, y=y))
    if len({d.p for d in nodes}) > 1:
        raise InvalidInputError("all node designs must share the feature count p")
    return nodes


# --- subcommands ---------------------------------------------------------

def cmd_node(args) -> int:
    seed = _resolve_seed(args.seed, 0)
    X = _prepared_design(read_matrix(args.design, name="design"))
    y = read_response(args.response)
    data = NodeData(X=X, y=y)
    design = construct_knockoffs(data.X, derive_seed(seed, TAG_KNOCKOFF, args.node_id))
    stats = node_statistics(data, design,
                            seed=derive_seed(seed, TAG_TIE, 0, args.node_id))
    message = serialize_summary(summarize(stats, args.mode, node_id=args.node_id))
    _atomic_write(args.out, struct.pack("<I", len(message)) + message)
    print(f"wrote {args.out} ({len(message)} message bytes, mode {args.mode})")
    return 0


def cmd_aggregate(args) -> int:
    summaries = []
    for path in args.summaries:
        try:
            summaries.extend(read_summary_file(path))
        except OSError as exc:
            raise InvalidInputError(f"cannot read summary file {path}: {exc}") from exc
    if not summaries:
        raise InvalidInputError("no summaries found in the given files")
    if len({s.mode for s in summaries}) > 1:
        raise InvalidInputError("summary files mix wire modes")
    gamma = parse_gamma(args.gamma)
    omega = parse_omega(args.omega)
    agg = aggregate_summaries(summaries, gamma)
    result = knockoff_select(agg, args.q, omega)
    _atomic_write_text(args.out, selection_csv(agg, result))
    n_rej = int(result.rejected.sum())
    print(f"wrote {args.out}: {n_rej} of {agg.p} features rejected "
          f"(m={agg.m}, q={args.q})")
    return 0


def cmd_baseline(args) -> int:
    if not args.node:
        raise _UsageError("baseline: at least one --node DESIGN RESPONSE pair required")
    if not 0.0 < args.q < 1.0:
        raise ConfigError(f"q must lie in (0, 1), got {args.q}")
    seed = _resolve_seed(args.seed, 0)
    nodes = _node_pairs(args)
    p = nodes[0].p
    if args.method == "ols_bhq":
        res = ols_aggregate_select([ols_node_summary(d) for d in nodes], args.q)
        chosen = res.rejected
    else:
        supports = [
            lasso_cv_support(d, seed=derive_seed(seed, TAG_FOLD, 0, i))
            for i, d in enumerate(nodes)
        ]
        chosen = majority_vote(supports, len(nodes))
    rejected = np.zeros(p, dtype=bool)
    rejected[chosen] = True
    lines = ["feature_index,rejected"]
    lines.extend(f"{j},{int(rejected[j])}" for j in range(p))
    _atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(chosen)} of {p} features rejected "
          f"({args.method}, m={len(nodes)}, q={args.q})")
    return 0


def cmd_validate_knockoffs(args) -> int:
    seed = _resolve_seed(args.seed, 0)
    X = _prepared_design(read_matrix(args.design, name="design"))
    design = construct_knockoffs(X, derive_seed(seed, TAG_KNOCKOFF, 0))
    report = validate_knockoffs(X, design, tol=args.tol)
    print(f"gram residual  {report.gram_residual:.3e}")
    print(f"cross residual {report.cross_residual:.3e}")
    print(f"tolerance      {report.tol:.3e}")
    if report.ok:
        print("OK")
        return 0
    print("FAILED", file=sys.stderr)
    return 1


def _load_config_text(spec: str) -> str:
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            return fh.read()
    name = spec if spec.endswith(".json") else spec + ".json"
    bundle = resources.files("knockagg").joinpath("configs", name)
    if bundle.is_file():
        return bundle.read_text(encoding="utf-8")
    bundled = sorted(
        entry.name.removesuffix(".json")
        for entry in resources.files("knockagg").joinpath("configs").iterdir()
        if entry.name.endswith(".json")
    )
    raise ConfigError(
        f"no config file {spec!r}; bundled configs: {', '.join(bundled)}"
    )


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def _as_int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def _as_float(value, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def _run_section4_config(data: dict, out_dir: str) -> int:
    unknown = set(data) - SECTION4_KEYS
    if unknown:
        raise ConfigError(f"unknown section4 config keys: {sorted(unknown)}")
    for key in ("p", "m"):
        if key not in data:
            raise ConfigError(f"section4 config needs {key!r}")
    rows = run_section4_recovery(
        _as_int(data["p"], "p"),
        [_as_int(m, "m") for m in _as_list(data["m"])],
        q=_as_float(data.get("q", 0.2), "q"),
        seed=_as_int(data.get("seed", 0), "seed"),
        replicates=_as_int(data.get("replicates", 20), "replicates"),
        mu_scale=_as_float(data.get("mu_scale", 1.0), "mu_scale"),
        q_schedule=data.get("q_schedule"),
        noise_sigma=_as_float(data.get("noise_sigma", 1.0), "noise_sigma"),
    )
    lines = ["m,q_used,hamming_frac_mean,fdp_mean,power_mean,comm_bits"]
    for r in rows:
        lines.append(
            f"{r.m},{r.q_used!r},{r.hamming_frac_mean!r},"
            f"{r.fdp_mean!r},{r.power_mean!r},{r.comm_bits}"
        )
    csv_path = os.path.join(out_dir, "recovery.csv")
    _atomic_write_text(csv_path, "\n".join(lines) + "\n")
    plot_path = os.path.join(out_dir, "hamming_vs_m.dat")
    write_plot_data(plot_path, [
        (r.m, r.hamming_frac_mean, float(r.hamming_fracs.std(ddof=1)))
        for r in rows
    ])
    for r in rows:
        print(f"m={r.m}: hamming/p {r.hamming_frac_mean:.4f}, "
              f"fdp {r.fdp_mean:.4f}, power {r.power_mean:.4f}, "
              f"q {r.q_used:.4f}, comm {r.comm_bits} bits")
    print(f"wrote {csv_path} and {plot_path}")
    return 0


def cmd_experiment(args) -> int:
    text = _load_config_text(args.config)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None or os.environ.get(SEED_ENV) is not None:
        data["seed"] = _resolve_seed(args.seed, _as_int(data.get("seed", 0), "seed"))
    os.makedirs(args.out_dir, exist_ok=True)

    study = data.pop("study", "sweep")
    if study == "section4":
        return _run_section4_config(data, args.out_dir)
    if study != "sweep":
        raise ConfigError(f"unknown study {study!r} (sweep, section4)")

    if "k" not in data or "m" not in data:
        raise ConfigError("config needs k and m (scalars or lists)")
    k_values = [_as_int(k, "k") for k in _as_list(data.pop("k"))]
    m_values = [_as_int(m, "m") for m in _as_list(data.pop("m"))]
    methods = [str(x) for x in _as_list(data.pop("method", "knockagg"))]
    if not k_values or not m_values or not methods:
        raise ConfigError("k, m, and method lists must be nonempty")

    results = []
    for method in methods:
        base = ExperimentConfig.from_dict(
            {**data, "k": k_values[0], "m": m_values[0], "method": method})
        results.extend(run_sweep(base, k_values, m_values))

    lines = [CSV_HEADER]
    for res in results:
        lines.extend(res.to_csv().strip().split("\n")[1:])
    csv_path = os.path.join(args.out_dir, "metrics.csv")
    _atomic_write_text(csv_path, "\n".join(lines) + "\n")

    for res in results:
        cfg = res.config
        print(f"{cfg.method} k={cfg.k} m={cfg.m}: "
              f"fdp {res.mean('fdp'):.4f} (sd {res.sd('fdp'):.4f}), "
              f"power {res.mean('power'):.4f} (sd {res.sd('power'):.4f}), "
              f"wfdp {res.mean('wfdp'):.4f}, "
              f"comm {int(res.mean('comm_bits'))} bits")

    plot_paths = []
    if len(k_values) > 1:
        for method in methods:
            for m in m_values:
                cells = [r for r in results
                         if r.config.method == method and r.config.m == m]
                cells.sort(key=lambda r: r.config.k)
                for metric in ("power", "fdp"):
                    path = os.path.join(args.out_dir, f"{metric}_{method}_m{m}.dat")
                    write_plot_data(path, [
                        (r.config.k, r.mean(metric), r.sd(metric)) for r in cells
                    ])
                    plot_paths.append(path)
    print(f"wrote {csv_path}" + (f" and {len(plot_paths)} plot files"
                                 if plot_paths else ""))
    return 0


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knockagg",
                     description="One-shot knockoff aggregation pipeline")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="print tracebacks on runtime errors")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    node = sub.add_parser("node", help="encode one node's summary message")
    node.add_argument("design", help="design matrix file (rows x features)")
    node.add_argument("response", help="response vector file")
    node.add_argument("--out", required=True, help="output summary file")
    node.add_argument("--mode", default=MODE_RAW32, choices=MODES,
                      help="wire encoding for the ordering statistics")
    node.add_argument("--seed", type=int, default=None)
    node.add_argument("--node-id", type=int, default=0)
    node.set_defaults(func=cmd_node)

    agg = sub.add_parser("aggregate", help="select features from summary files")
    agg.add_argument("summaries", nargs="+", help="summary files from `node`")
    agg.add_argument("--out", required=True, help="output selection CSV")
    agg.add_argument("--q", type=float, default=0.2, help="nominal FDR level")
    agg.add_argument("--gamma", default="weighted_sum",
                     help="summary function: max | sum_top_r:R | "
                          "product_top_r:R | weighted_sum")
    agg.add_argument("--omega", default="step:0.5",
                     help="confidence function: step[:c] | linear | poly[:d]")
    agg.set_defaults(func=cmd_aggregate)

    base = sub.add_parser("baseline", help="run a reference method on node files")
    base.add_argument("--method", required=True, choices=("ols_bhq", "lasso_vote"))
    base.add_argument("--node", nargs=2, action="append",
                      metavar=("DESIGN", "RESPONSE"), default=[],
                      help="one design/response pair per node; repeatable")
    base.add_argument("--out", required=True, help="output rejection CSV")
    base.add_argument("--q", type=float, default=0.2)
    base.add_argument("--seed", type=int, default=None)
    base.set_defaults(func=cmd_baseline)

    exp = sub.add_parser("experiment", help="run a simulation from a JSON config")
    exp.add_argument("config",
                     help="config file path or bundled config name")
    exp.add_argument("--out-dir", default=".", help="directory for output files")
    exp.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    exp.set_defaults(func=cmd_experiment)

    val = sub.add_parser("validate-knockoffs",
                         help="check the knockoff Gram identities on a design")
    val.add_argument("design", help="design matrix file")
    val.add_argument("--tol", type=float, default=1e-8)
    val.add_argument("--seed", type=int, default=None)
    val.set_defaults(func=cmd_validate_knockoffs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KnockaggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        if args.verbose:
            raise
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
