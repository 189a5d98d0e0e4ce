"""Command-line front end.

Configuration comes from a JSON file (--config) overridden by explicit
flags; flags always win. Exit codes: 0 success, 2 validation failure,
3 I/O failure, 4 numerical/estimation failure. Failures print a
machine-readable JSON object to stderr. The KVM_SEED environment variable
(comma-separated integers) overrides the built-in default seed list.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, ValidationError
from .eviction import (
    BUDGET_MODES,
    allocate_head_budgets,
    budget,
    compress_cache,
    retention_from_scores,
)
from .experiments import (
    DEFAULT_SEEDS,
    compare_methods,
    dilution_sweep,
    paired_ttest,
    run_retention,
    separation_test,
    window_ablation,
)
from .manifold import estimate_dimensions
from .report import Report, config_hash
from .scorers import METHODS, ScorerSpec, compute_scores
from .synth import (
    SCENARIO_KINDS,
    Scenario,
    gen_cluster_mixture,
    gen_collision_scenario,
    gen_radial_failure,
    gen_subspace_scenario,
    load_sidecar,
    save_sidecar,
)
from .tensor import KeyTensor, load_kvt, save_kvt

COMMANDS = (
    "score",
    "compress",
    "gen",
    "dilution",
    "ablation",
    "dim-estimate",
    "collision-demo",
    "separation",
    "compare",
    "ttest",
)

_JSON_ALIASES = {"lambda": "hybrid_lambda"}

# Filled while the parser is built: command -> {dest: default}.
_DEFAULTS: dict = {}


@dataclass
class RunConfig:
    command: str
    options: dict


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _fmt(prog):
    return argparse.HelpFormatter(prog, width=96)


def _seed_list_default() -> list:
    env = os.environ.get("KVM_SEED")
    if not env:
        return list(DEFAULT_SEEDS)
    return _int_list(env, "KVM_SEED")


def _int_list(value, name: str) -> list:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(tok) for tok in str(value).split(",") if tok != ""]
    except ValueError as exc:
        raise ValidationError(f"{name}: expected comma-separated integers, got {value!r}") from exc


def _float_list(value, name: str) -> list:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(tok) for tok in str(value).split(",") if tok != ""]
    except ValueError as exc:
        raise ValidationError(f"{name}: expected comma-separated numbers, got {value!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(
        prog="kvgeom",
        description="Geometric KV-cache compression toolkit: scorers, eviction, "
        "dimension estimators, and synthetic retention experiments.",
        formatter_class=_fmt,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_fmt)
        defaults = {}
        _DEFAULTS[name] = defaults

        def opt(flag, *, dest=None, default=None, required=False, help="", **kwargs):
            d = dest or flag.lstrip("-").replace("-", "_")
            if required:
                note = " (required)"
            elif default is not None:
                note = f" (default: {default})"
            else:
                note = ""
            p.add_argument(flag, dest=d, default=None, help=help + note, **kwargs)
            defaults[d] = default
            return d

        opt("--config", help="JSON config file; explicit flags override its values")
        return p, opt

    scorer_help = {
        "method": f"scoring method, one of: {', '.join(METHODS)}",
        "window": "window size in tokens (windowed method)",
        "lambda": "mixing weight in [0, 1] (hybrid method)",
        "obs_window": "number of trailing queries to observe (obs_attention method)",
    }

    def scorer_opts(opt, default_method=None):
        opt("--method", default=default_method, required=default_method is None,
            help=scorer_help["method"])
        opt("--window", type=int, help=scorer_help["window"])
        opt("--lambda", dest="hybrid_lambda", type=float, metavar="LAMBDA",
            help=scorer_help["lambda"])
        opt("--obs-window", type=int, help=scorer_help["obs_window"])
        opt("--queries", help="KVT1 query tensor (obs_attention method)")

    # score
    p, opt = command("score", "Score a KVT1 key tensor and write per-token scores as CSV.")
    opt("--input", required=True, help="KVT1 key tensor to score")
    scorer_opts(opt)
    opt("--out", required=True, help="output CSV (columns batch,head,token,score)")
    opt("--out-kvt", help="also write scores as a KVT1 tensor with head_dim=1")

    # compress
    p, opt = command("compress", "Score, evict, and write the compressed cache.")
    opt("--keys", required=True, help="KVT1 key tensor")
    opt("--values", required=True, help="KVT1 value tensor")
    scorer_opts(opt, default_method="manifold")
    opt("--rho", type=float, default=0.2, help="compression ratio in [0, 1)")
    opt("--mode", default="uniform", help=f"budget allocation, one of: {', '.join(BUDGET_MODES)}")
    opt("--out-keys", required=True, help="compressed keys (KVT1)")
    opt("--out-values", required=True, help="compressed values (KVT1)")
    opt("--out-mask", required=True, help="validity mask sidecar (JSON)")
    opt("--out-retained", help="retained-index rows (JSON)")

    # gen
    p, opt = command("gen", "Generate a synthetic scenario: keys (KVT1) plus a JSON sidecar.")
    opt("--kind", help=f"scenario kind, one of: {', '.join(SCENARIO_KINDS)}")
    opt("--from-sidecar", help="regenerate from an existing sidecar instead of --kind")
    opt("--n", type=int, default=1024, help="token count")
    opt("--d", type=int, default=64, help="head dimension")
    opt("--seed", type=int, default=0, help="scenario seed")
    opt("--k", type=int, default=9, help="subspace dimension (subspace kind)")
    opt("--sigma", type=float, default=1.0, help="in-plane spread (subspace kind)")
    opt("--n-out", type=int, default=8, help="needle count (subspace kind)")
    opt("--epsilon", type=float,
        help="outlier offset / jitter; defaults to 10.0 for subspace, 0.1 otherwise")
    opt("--strict-separation", action="store_true",
        help="shrink the common cloud until epsilon > 3 * diam (subspace kind)")
    opt("--center-scale", type=float, default=10.0,
        help="cloud center offset in sigmas (subspace kind)")
    opt("--alpha", type=float, default=100.0, help="outlier magnitude (radial kind)")
    opt("--k-clusters", type=int, default=4, help="cluster count (clusters kind)")
    opt("--spread", type=float, default=1.0, help="cluster radius (clusters kind)")
    opt("--separation", type=float, default=10.0, help="cluster center radius (clusters kind)")
    opt("--shuffle", action="store_true", help="interleave cluster layout (clusters kind)")
    opt("--magnitudes", default="2,5,10", help="needle magnitudes (collision kind)")
    opt("--out-keys", required=True, help="output keys (KVT1)")
    opt("--out-meta", required=True, help="output sidecar (JSON)")

    # dilution
    p, opt = command("dilution", "Sweep cluster diversity: global vs windowed retention.")
    opt("--k-grid", default="1,4,16,32", help="cluster counts to sweep")
    opt("--n", type=int, default=16384, help="token count")
    opt("--d", type=int, default=128, help="head dimension")
    opt("--rho", type=float, default=0.25, help="compression ratio in [0, 1)")
    opt("--window", type=int, help="window size in tokens; defaults to n / K per grid point")
    opt("--spread", type=float, default=1.0, help="cluster radius")
    opt("--separation", type=float, default=10.0, help="cluster center radius")
    opt("--seeds", default=",".join(map(str, DEFAULT_SEEDS)), help="seed list")
    opt("--jobs", type=int, default=1, help="parallel sweep workers")
    opt("--out", required=True, help="output report path")
    opt("--format", default="csv", help="report format: csv or json")

    # ablation
    p, opt = command("ablation", "Sweep window sizes on a cluster mixture.")
    opt("--w-grid", help="window sizes to sweep; defaults to C/2,C,2C,4C,n for C = n/K")
    opt("--n", type=int, default=8192, help="token count")
    opt("--d", type=int, default=128, help="head dimension")
    opt("--k-clusters", type=int, default=16, help="cluster count")
    opt("--rho", type=float, default=0.25, help="compression ratio in [0, 1)")
    opt("--spread", type=float, default=1.0, help="cluster radius")
    opt("--separation", type=float, default=10.0, help="cluster center radius")
    opt("--seeds", default=",".join(map(str, DEFAULT_SEEDS)), help="seed list")
    opt("--jobs", type=int, default=1, help="parallel sweep workers")
    opt("--out", required=True, help="output report path")
    opt("--format", default="csv", help="report format: csv or json")

    # dim-estimate
    p, opt = command("dim-estimate", "Estimate intrinsic dimension of a KVT1 key tensor.")
    opt("--input", required=True, help="KVT1 key tensor")
    opt("--pooled", action="store_true",
        help="pool all (batch, head) slices into one point cloud instead of per-head reports")
    opt("--threshold", type=float, default=0.95, help="PCA explained-variance threshold")
    opt("--k-neighbors", type=int, default=10, help="neighbor count for the MLE estimator")
    opt("--out", required=True, help="output report path")
    opt("--format", default="csv", help="report format: csv or json")

    # collision-demo
    p, opt = command("collision-demo",
                     "Plant same-direction needles of different magnitudes and compare scorers.")
    opt("--magnitudes", default="2,5,10", help="needle magnitudes")
    opt("--epsilon", type=float, default=0.1, help="angular jitter of common tokens")
    opt("--n", type=int, default=256, help="token count")
    opt("--d", type=int, default=8, help="head dimension")
    opt("--rho", type=float, default=0.5, help="compression ratio in [0, 1)")
    opt("--seed", type=int, default=0, help="scenario seed")
    opt("--out", help="optional report path")
    opt("--format", default="csv", help="report format: csv or json")

    # separation
    p, opt = command("separation", "Retention at budget M = n_out across sample sizes.")
    opt("--k", type=int, default=9, help="subspace dimension")
    opt("--d", type=int, default=128, help="head dimension")
    opt("--sigma", type=float, default=1.0, help="in-plane spread")
    opt("--epsilon", type=float, default=1.0, help="outlier offset")
    opt("--n-grid", default="512,1024,2048,4096", help="sample sizes to sweep")
    opt("--n-out", type=int, default=16, help="needle count and retention budget")
    opt("--kind", default="subspace", help="scenario flavor: subspace or radial")
    opt("--alpha", type=float, default=100.0, help="outlier magnitude (radial kind)")
    scorer_opts(opt, default_method="manifold")
    opt("--seeds", default=",".join(map(str, DEFAULT_SEEDS)), help="seed list")
    opt("--jobs", type=int, default=1, help="parallel sweep workers")
    opt("--out", required=True, help="output report path")
    opt("--format", default="csv", help="report format: csv or json")

    # compare
    p, opt = command("compare", "Pairwise score agreement and per-method retention.")
    opt("--input", help="KVT1 key tensor to compare on")
    opt("--sidecar", help="scenario sidecar to regenerate and compare on")
    opt("--methods", default="manifold,keydiff", help="comma-separated scoring methods")
    opt("--window", type=int, help=scorer_help["window"])
    opt("--lambda", dest="hybrid_lambda", type=float, metavar="LAMBDA",
            help=scorer_help["lambda"])
    opt("--obs-window", type=int, default=16, help=scorer_help["obs_window"])
    opt("--queries", help="KVT1 query tensor (obs_attention method)")
    opt("--rho", type=float, default=0.2, help="compression ratio in [0, 1)")
    opt("--out", required=True, help="output report path")
    opt("--format", default="csv", help="report format: csv or json")

    # ttest
    p, opt = command("ttest", "Paired two-sided t-test between two report columns.")
    opt("--a", required=True, help="first CSV file")
    opt("--b", required=True, help="second CSV file")
    opt("--col", default="score", help="numeric column name (used when a file has several)")
    opt("--out", help="optional report path")
    opt("--format", default="csv", help="report format: csv or json")

    return parser


def _load_json_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"config root must be an object, got {type(obj).__name__}")
    return {_JSON_ALIASES.get(k, k): v for k, v in obj.items()}


def parse_config(argv) -> RunConfig:
    """argv -> validated RunConfig. Precedence: flags > JSON config > defaults."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise ValidationError("no command given; see --help")
    command = ns.command
    flag_values = {k: v for k, v in vars(ns).items() if k != "command" and v is not None}

    options = dict(_DEFAULTS[command])
    if "seeds" in options:
        options["seeds"] = ",".join(map(str, _seed_list_default()))
    elif "seed" in options and os.environ.get("KVM_SEED"):
        options["seed"] = _seed_list_default()[0]

    config_path = flag_values.pop("config", None)
    if config_path is not None:
        loaded = _load_json_config(config_path)
        unknown = set(loaded) - set(options)
        if unknown:
            raise ValidationError(
                f"unknown config key(s) for {command}: {', '.join(sorted(unknown))}"
            )
        options.update(loaded)
    options.update(flag_values)
    _validate(command, options)
    return RunConfig(command=command, options=options)


def _require(opts, command, *names):
    for name in names:
        if opts.get(name) is None:
            raise ValidationError(f"{command}: --{name.replace('_', '-')} is required")


def _check_choice(opts, name, choices):
    if opts.get(name) is not None and opts[name] not in choices:
        raise ValidationError(
            f"--{name.replace('_', '-')} must be one of {', '.join(choices)}, got {opts[name]!r}"
        )


def _check_rho(opts):
    rho = opts.get("rho")
    if rho is not None and not 0.0 <= float(rho) < 1.0:
        raise ValidationError(f"--rho must be in [0, 1), got {rho}")
    if rho is not None:
        opts["rho"] = float(rho)


def _validate(command: str, opts: dict) -> None:
    required = {
        "score": ("input", "method", "out"),
        "compress": ("keys", "values", "out_keys", "out_values", "out_mask"),
        "gen": ("out_keys", "out_meta"),
        "dilution": ("out",),
        "ablation": ("out",),
        "dim-estimate": ("input", "out"),
        "collision-demo": (),
        "separation": ("out",),
        "compare": ("out",),
        "ttest": ("a", "b"),
    }
    _require(opts, command, *required[command])
    _check_choice(opts, "format", ("csv", "json"))
    _check_rho(opts)
    if "seeds" in opts:
        opts["seeds"] = _int_list(opts["seeds"], "--seeds")
        if not opts["seeds"]:
            raise ValidationError("--seeds must list at least one seed")
    if "jobs" in opts and int(opts["jobs"]) < 1:
        raise ValidationError(f"--jobs must be >= 1, got {opts['jobs']}")

    if command in ("score", "compress", "separation"):
        _check_choice(opts, "method", METHODS)
    if command == "compress":
        _check_choice(opts, "mode", BUDGET_MODES)
    if command == "gen":
        if opts.get("from_sidecar") is None and opts.get("kind") is None:
            raise ValidationError("gen: either --kind or --from-sidecar is required")
        _check_choice(opts, "kind", SCENARIO_KINDS)
        opts["magnitudes"] = _float_list(opts["magnitudes"], "--magnitudes")
    if command == "dilution":
        opts["k_grid"] = _int_list(opts["k_grid"], "--k-grid")
    if command == "ablation" and opts.get("w_grid") is not None:
        opts["w_grid"] = _int_list(opts["w_grid"], "--w-grid")
    if command == "separation":
        opts["n_grid"] = _int_list(opts["n_grid"], "--n-grid")
        _check_choice(opts, "kind", ("subspace", "radial"))
    if command == "collision-demo":
        opts["magnitudes"] = _float_list(opts["magnitudes"], "--magnitudes")
    if command == "compare":
        if opts.get("input") is None and opts.get("sidecar") is None:
            raise ValidationError("compare: either --input or --sidecar is required")
        methods = [m.strip() for m in str(opts["methods"]).split(",") if m.strip()]
        if len(methods) < 2:
            raise ValidationError("compare: --methods needs at least two methods")
        for m in methods:
            if m not in METHODS:
                raise ValidationError(f"--methods: unknown method {m!r}")
        opts["methods"] = methods


def _scorer_spec(opts) -> ScorerSpec:
    method = opts["method"]
    if method == "windowed" and opts.get("window") is None:
        raise ValidationError("--method windowed requires --window")
    if method == "hybrid" and opts.get("hybrid_lambda") is None:
        raise ValidationError("--method hybrid requires --lambda")
    if method == "obs_attention" and opts.get("obs_window") is None:
        raise ValidationError("--method obs_attention requires --obs-window")
    return ScorerSpec(
        method=method,
        window_size=opts.get("window") if method == "windowed" else None,
        hybrid_lambda=opts.get("hybrid_lambda") if method == "hybrid" else None,
        obs_window=opts.get("obs_window") if method == "obs_attention" else None,
    )


def _load_queries(opts) -> KeyTensor | None:
    path = opts.get("queries")
    if path is None:
        if opts.get("method") == "obs_attention":
            raise ValidationError("--method obs_attention requires --queries")
        return None
    return load_kvt(path)


def _cmd_score(opts) -> int:
    keys = load_kvt(opts["input"])
    spec = _scorer_spec(opts)
    scores = compute_scores(spec, keys, queries=_load_queries(opts))
    rows = [
        {"batch": b, "head": h, "token": t, "score": s} for b, h, t, s in scores.rows()
    ]
    params = {"input": opts["input"], "scorer": spec.to_dict()}
    report = Report(
        name="score",
        columns=["batch", "head", "token", "score"],
        rows=rows,
        metadata={"method": spec.label(), "config_hash": config_hash(params)},
    )
    report.write(opts["out"], "csv")
    if opts.get("out_kvt"):
        save_kvt(scores.to_key_tensor(), opts["out_kvt"])
    print(f"score: wrote {opts['out']} ({len(rows)} rows, method={spec.label()})")
    return 0


def _cmd_compress(opts) -> int:
    keys = load_kvt(opts["keys"])
    values = load_kvt(opts["values"])
    spec = _scorer_spec(opts)
    scores = compute_scores(spec, keys, queries=_load_queries(opts))
    plan = allocate_head_budgets(scores, opts["rho"], opts["mode"])
    retained = retention_from_scores(scores, plan)
    compressed = compress_cache(keys, values, retained)
    save_kvt(compressed.keys, opts["out_keys"])
    save_kvt(compressed.values, opts["out_values"])
    with open(opts["out_mask"], "w", encoding="utf-8") as fh:
        json.dump(compressed.mask_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if opts.get("out_retained"):
        with open(opts["out_retained"], "w", encoding="utf-8") as fh:
            json.dump(retained.to_json_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(
        f"compress: {keys.seq_len} -> {compressed.keys.seq_len} tokens/head "
        f"(rho={opts['rho']}, mode={opts['mode']}, method={spec.label()})"
    )
    return 0


def _gen_scenario(opts) -> Scenario:
    if opts.get("from_sidecar"):
        return load_sidecar(opts["from_sidecar"])
    kind = opts["kind"]
    epsilon = opts.get("epsilon")
    if epsilon is None:
        epsilon = 10.0 if kind == "subspace" else 0.1
    if kind == "subspace":
        return gen_subspace_scenario(
            n=opts["n"], d=opts["d"], k=opts["k"], sigma=opts["sigma"],
            n_out=opts["n_out"], epsilon=epsilon, seed=opts["seed"],
            strict_separation=bool(opts.get("strict_separation")),
            center_scale=opts["center_scale"],
        )
    if kind == "radial":
        return gen_radial_failure(
            alpha=opts["alpha"], epsilon=epsilon, n=opts["n"], d=opts["d"],
            seed=opts["seed"],
        )
    if kind == "clusters":
        return gen_cluster_mixture(
            n=opts["n"], d=opts["d"], k_clusters=opts["k_clusters"],
            spread=opts["spread"], separation=opts["separation"],
            seed=opts["seed"], shuffle=bool(opts.get("shuffle")),
        )
    return gen_collision_scenario(
        magnitudes=opts["magnitudes"], epsilon=epsilon, n=opts["n"], d=opts["d"],
        seed=opts["seed"],
    )


def _cmd_gen(opts) -> int:
    scenario = _gen_scenario(opts)
    save_kvt(scenario.keys, opts["out_keys"])
    save_sidecar(scenario, opts["out_meta"])
    print(
        f"gen: {scenario.kind} scenario with {scenario.seq_len} tokens, "
        f"{len(scenario.needles)} needles -> {opts['out_keys']}"
    )
    return 0


def _cmd_dilution(opts) -> int:
    report = dilution_sweep(
        k_grid=opts["k_grid"], n=opts["n"], d=opts["d"], rho=opts["rho"],
        window=opts.get("window"), seeds=opts["seeds"], spread=opts["spread"],
        separation=opts["separation"], jobs=opts["jobs"],
    )
    report.write(opts["out"], opts["format"])
    means = [r for r in report.rows if r["row"] == "mean"]
    worst = max(means, key=lambda r: r["gap"])
    print(
        f"dilution: wrote {opts['out']} ({len(report.rows)} rows); "
        f"max windowed-global gap {worst['gap']:.3f} at K={worst['k_clusters']}"
    )
    return 0


def _cmd_ablation(opts) -> int:
    w_grid = opts.get("w_grid")
    if w_grid is None:
        extent = max(1, opts["n"] // opts["k_clusters"])
        w_grid = sorted({max(1, extent // 2), extent, 2 * extent, 4 * extent, opts["n"]})
    report = window_ablation(
        w_grid=w_grid, n=opts["n"], d=opts["d"], k_clusters=opts["k_clusters"],
        rho=opts["rho"], seeds=opts["seeds"], spread=opts["spread"],
        separation=opts["separation"], jobs=opts["jobs"],
    )
    report.write(opts["out"], opts["format"])
    print(
        f"ablation: wrote {opts['out']} ({len(report.rows)} rows); "
        f"best window {report.metadata['best_window']}"
    )
    return 0


def _cmd_dim_estimate(opts) -> int:
    keys = load_kvt(opts["input"])
    rows = []
    if opts.get("pooled"):
        points = keys.data.reshape(-1, keys.head_dim).astype(np.float64)
        rep = estimate_dimensions(points, opts["threshold"], opts["k_neighbors"])
        rows.append({"row": "pooled", "batch": -1, "head": -1, **rep.to_dict()})
    else:
        for b in range(keys.batch):
            for h in range(keys.heads):
                rep = estimate_dimensions(keys.matrix(b, h), opts["threshold"], opts["k_neighbors"])
                rows.append({"row": "per_head", "batch": b, "head": h, **rep.to_dict()})
    params = {"input": opts["input"], "threshold": opts["threshold"],
              "k_neighbors": opts["k_neighbors"], "pooled": bool(opts.get("pooled"))}
    report = Report(
        name="dim-estimate",
        columns=["row", "batch", "head", "pca_d95", "twonn", "mle", "pca_ratio",
                 "n_points", "ambient_dim", "discarded_pairs"],
        rows=rows,
        metadata={**params, "config_hash": config_hash(params)},
    )
    report.write(opts["out"], opts["format"])
    first = rows[0]
    print(
        f"dim-estimate: wrote {opts['out']} ({len(rows)} reports); "
        f"first: pca_d95={first['pca_d95']} twonn={first['twonn']:.2f} mle={first['mle']:.2f}"
    )
    return 0


def _cmd_collision_demo(opts) -> int:
    scenario = gen_collision_scenario(
        magnitudes=opts["magnitudes"], epsilon=opts["epsilon"], n=opts["n"],
        d=opts["d"], seed=opts["seed"],
    )
    rows = []
    for method in ("manifold", "keydiff"):
        result = run_retention(scenario, ScorerSpec(method), opts["rho"])
        rows.append({
            "method": method,
            "retained_needles": result.retained_needles,
            "total_needles": result.total_needles,
            "retention": result.retention_rate,
        })
        print(
            f"collision-demo: {method} retained {result.retained_needles}/"
            f"{result.total_needles} needles at rho={opts['rho']} "
            f"(budget={budget(scenario.seq_len, opts['rho'])})"
        )
    if opts.get("out"):
        params = {k: opts[k] for k in ("magnitudes", "epsilon", "n", "d", "rho", "seed")}
        Report(
            name="collision-demo",
            columns=["method", "retained_needles", "total_needles", "retention"],
            rows=rows,
            metadata={**params, "config_hash": config_hash(params)},
        ).write(opts["out"], opts["format"])
        print(f"collision-demo: wrote {opts['out']}")
    return 0


def _cmd_separation(opts) -> int:
    report = separation_test(
        k=opts["k"], d=opts["d"], sigma=opts["sigma"], epsilon=opts["epsilon"],
        n_grid=opts["n_grid"], n_out=opts["n_out"], seeds=opts["seeds"],
        spec=_scorer_spec(opts), kind=opts["kind"], alpha=opts["alpha"],
        jobs=opts["jobs"],
    )
    report.write(opts["out"], opts["format"])
    means = [r for r in report.rows if r["row"] == "mean"]
    tail = means[-1]
    print(
        f"separation: wrote {opts['out']} ({len(report.rows)} rows); "
        f"success fraction {tail['success']:.2f} at n={tail['n']}"
    )
    return 0


def _cmd_compare(opts) -> int:
    if opts.get("sidecar"):
        scenario = load_sidecar(opts["sidecar"])
    else:
        keys = load_kvt(opts["input"])
        scenario = Scenario(kind="file", keys=keys, needles=(),
                            params={"seed": 0, "path": str(opts["input"])})
    specs = []
    for method in opts["methods"]:
        specs.append(_scorer_spec({**opts, "method": method}))
    queries = load_kvt(opts["queries"]) if opts.get("queries") else None
    report = compare_methods(scenario, specs, opts["rho"], queries=queries)
    report.write(opts["out"], opts["format"])
    print(f"compare: wrote {opts['out']} ({len(report.rows)} rows)")
    return 0


def _read_csv_column(path, col: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        body = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(body)))
    if reader.fieldnames is None:
        raise ValidationError(f"{path}: empty CSV")
    name = col if col in reader.fieldnames else (
        reader.fieldnames[0] if len(reader.fieldnames) == 1 else None
    )
    if name is None:
        raise ValidationError(f"{path}: column {col!r} not found in {reader.fieldnames}")
    try:
        return [float(row[name]) for row in reader]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: non-numeric value in column {name!r}") from exc


def _cmd_ttest(opts) -> int:
    a = _read_csv_column(opts["a"], opts["col"])
    b = _read_csv_column(opts["b"], opts["col"])
    result = paired_ttest(a, b)
    print(
        f"ttest: n={result.n} mean_diff={result.mean_diff:.6g} "
        f"se={result.std_err:.6g} t={result.t_stat:.6g} p={result.p_value:.6g} "
        f"df={result.df}{' (degenerate)' if result.degenerate else ''}"
    )
    if opts.get("out"):
        params = {"a": opts["a"], "b": opts["b"], "col": opts["col"]}
        Report(
            name="ttest",
            columns=["n", "mean_diff", "std_err", "t_stat", "p_value", "df", "degenerate"],
            rows=[{
                "n": result.n, "mean_diff": result.mean_diff, "std_err": result.std_err,
                "t_stat": result.t_stat, "p_value": result.p_value, "df": result.df,
                "degenerate": result.degenerate,
            }],
            metadata={**params, "config_hash": config_hash(params)},
        ).write(opts["out"], opts["format"])
        print(f"ttest: wrote {opts['out']}")
    return 0


_HANDLERS = {
    "score": _cmd_score,
    "compress": _cmd_compress,
    "gen": _cmd_gen,
    "dilution": _cmd_dilution,
    "ablation": _cmd_ablation,
    "dim-estimate": _cmd_dim_estimate,
    "collision-demo": _cmd_collision_demo,
    "separation": _cmd_separation,
    "compare": _cmd_compare,
    "ttest": _cmd_ttest,
}


def run(config: RunConfig) -> int:
    """Execute a validated RunConfig; returns the process exit status."""
    return _HANDLERS[config.command](config.options)


def _emit_error(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_config(argv)
        return run(config)
    except ValidationError as exc:
        return _emit_error(2, exc)
    except OSError as exc:
        return _emit_error(3, exc)
    except (EstimationError, ArithmeticError) as exc:
        return _emit_error(4, exc)


if __name__ == "__main__":
    sys.exit(main())
