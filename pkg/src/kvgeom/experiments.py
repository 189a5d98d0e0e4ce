"""Experiment harness: retention metrics, sweeps, and the paired t-test.

Retention rate (needle recall after eviction) is the desk-scale quality
proxy throughout: every sweep generates seeded scenarios, scores them,
evicts down to a budget, and reports the fraction of planted needles that
survive. Sweep rows are pure functions of (params, seed); grid points may
run in parallel and the row order never depends on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import ValidationError
from .eviction import budget, retention_from_scores
from .report import Report, config_hash
from .scorers import ScorerSpec, compute_scores
from .synth import Scenario, gen_cluster_mixture, gen_queries, gen_radial_failure, gen_subspace_scenario
from .tensor import KeyTensor

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

# Offset keeping auto-generated query streams disjoint from scenario streams.
_QUERY_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class RetentionResult:
    method: str
    rho: float
    retained_needles: int
    total_needles: int
    retention_rate: float
    preservation_error: float | None
    seed: int | None


@dataclass(frozen=True)
class TTestResult:
    n: int
    mean_diff: float
    std_err: float
    t_stat: float
    p_value: float
    df: int
    degenerate: bool = False


def _count_needle_hits(retained, needles) -> tuple[int, int]:
    """(retained needle count, total needle slots) over all (batch, head) pairs."""
    needle_arr = np.asarray(list(needles), dtype=np.int64)
    if needle_arr.size == 0:
        raise ValidationError("needles must be non-empty")
    hits = 0
    pairs = 0
    for b in range(retained.batch):
        for h in range(retained.heads):
            hits += int(np.isin(needle_arr, retained.indices[b][h]).sum())
            pairs += 1
    return hits, needle_arr.size * pairs


def retention_rate(retained, needles) -> float:
    """|retained ∩ needles| / |needles|, averaged over (batch, head) pairs."""
    hits, total = _count_needle_hits(retained, needles)
    return hits / total


def _auto_queries(scenario: Scenario, spec: ScorerSpec) -> KeyTensor | None:
    if spec.method != "obs_attention":
        return None
    mode = "needle_probing" if scenario.needles else "random"
    return gen_queries(
        n_queries=spec.obs_window,
        d=scenario.keys.head_dim,
        mode=mode,
        scenario=scenario,
        seed=int(scenario.params["seed"]) + _QUERY_SEED_OFFSET,
    )


def run_retention(
    scenario: Scenario,
    spec: ScorerSpec,
    rho: float,
    queries: KeyTensor | None = None,
    values: KeyTensor | None = None,
) -> RetentionResult:
    """Score -> budget -> top-k -> needle retention for one scenario.

    With a value tensor supplied, the attention preservation error of the
    eviction is computed as well (against `queries`, or auto-generated
    needle-probing queries when none are given).
    """
    if not scenario.needles:
        raise ValidationError("scenario has no needles to retain")
    if queries is None:
        queries = _auto_queries(scenario, spec)
    scores = compute_scores(spec, scenario.keys, queries=queries)
    m = budget(scenario.seq_len, rho)
    retained = retention_from_scores(scores, m)
    hits, total = _count_needle_hits(retained, scenario.needles)
    pres_err = None
    if values is not None:
        from .attention import preservation_error

        q = queries
        if q is None:
            q = gen_queries(
                n_queries=8,
                d=scenario.keys.head_dim,
                mode="needle_probing",
                scenario=scenario,
                seed=int(scenario.params["seed"]) + _QUERY_SEED_OFFSET,
            )
        pres_err = preservation_error(q, scenario.keys, values, retained)
    return RetentionResult(
        method=spec.label(),
        rho=rho,
        retained_needles=hits,
        total_needles=total,
        retention_rate=hits / total,
        preservation_error=pres_err,
        seed=scenario.params.get("seed"),
    )


def _map_jobs(jobs: int, fn, args_list):
    if jobs <= 1:
        return [fn(*args) for args in args_list]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda args: fn(*args), args_list))


def _mean(values) -> float:
    return float(np.mean(values))


def separation_test(
    k: int,
    d: int,
    sigma: float,
    epsilon: float,
    n_grid,
    n_out: int,
    seeds=DEFAULT_SEEDS,
    spec: ScorerSpec | None = None,
    kind: str = "subspace",
    alpha: float = 100.0,
    jobs: int = 1,
) -> Report:
    """Needle retention at budget M = n_out across sample sizes.

    kind="subspace" runs strict-separation subspace scenarios; kind="radial"
    runs the radial-outlier construction (n_out is forced to 1 there). The
    per-n success fraction counts seeds with perfect retention.
    """
    spec = spec or ScorerSpec("manifold")
    n_grid = [int(n) for n in n_grid]
    seeds = [int(s) for s in seeds]
    if kind not in ("subspace", "radial"):
        raise ValidationError(f"kind must be 'subspace' or 'radial', got {kind!r}")
    if kind == "radial":
        n_out = 1
    if n_out < 1:
        raise ValidationError(f"n_out must be >= 1, got {n_out}")
    for n in n_grid:
        if n <= n_out:
            raise ValidationError(f"grid n={n} must exceed n_out={n_out}")

    def job(n: int, seed: int) -> dict:
        if kind == "subspace":
            scenario = gen_subspace_scenario(
                n=n, d=d, k=k, sigma=sigma, n_out=n_out, epsilon=epsilon,
                seed=seed, strict_separation=True,
            )
        else:
            scenario = gen_radial_failure(alpha=alpha, epsilon=epsilon, n=n, d=d, seed=seed)
        queries = _auto_queries(scenario, spec)
        scores = compute_scores(spec, scenario.keys, queries=queries)
        retained = retention_from_scores(scores, n_out)
        rate = retention_rate(retained, scenario.needles)
        return {"row": "run", "n": n, "seed": seed, "retention": rate,
                "success": rate == 1.0}

    rows = _map_jobs(jobs, job, [(n, s) for n in n_grid for s in seeds])
    out = []
    for n in n_grid:
        chunk = [r for r in rows if r["n"] == n]
        out.extend(chunk)
        out.append({
            "row": "mean", "n": n, "seed": "",
            "retention": _mean([r["retention"] for r in chunk]),
            "success": _mean([1.0 if r["success"] else 0.0 for r in chunk]),
        })
    params = {"k": k, "d": d, "sigma": sigma, "epsilon": epsilon, "n_grid": n_grid,
              "n_out": n_out, "seeds": seeds, "method": spec.label(), "kind": kind}
    return Report(
        name="separation",
        columns=["row", "n", "seed", "retention", "success"],
        rows=out,
        metadata={**params, "config_hash": config_hash(params)},
        group_by="n",
    )


def dilution_sweep(
    k_grid,
    n: int,
    d: int,
    rho: float,
    window: int | None = None,
    seeds=DEFAULT_SEEDS,
    spread: float = 1.0,
    separation: float = 10.0,
    jobs: int = 1,
) -> Report:
    """Global vs windowed centroid-L2 retention as cluster diversity grows.

    For each cluster count K the window defaults to n // K (one window per
    topic block). The gap column is windowed minus global retention: the
    dilution signature grows with K.
    """
    k_grid = [int(k) for k in k_grid]
    seeds = [int(s) for s in seeds]
    if not k_grid:
        raise ValidationError("k_grid must be non-empty")

    def job(k_clusters: int, seed: int) -> dict:
        w = window if window is not None else max(1, n // k_clusters)
        scenario = gen_cluster_mixture(
            n=n, d=d, k_clusters=k_clusters, spread=spread,
            separation=separation, seed=seed,
        )
        g = run_retention(scenario, ScorerSpec("manifold"), rho).retention_rate
        wr = run_retention(scenario, ScorerSpec("windowed", window_size=w), rho).retention_rate
        kd = run_retention(scenario, ScorerSpec("keydiff"), rho).retention_rate
        return {"row": "run", "k_clusters": k_clusters, "window": w, "seed": seed,
                "global_retention": g, "windowed_retention": wr,
                "keydiff_retention": kd, "gap": wr - g}

    rows = _map_jobs(jobs, job, [(k, s) for k in k_grid for s in seeds])
    out = []
    for k in k_grid:
        chunk = [r for r in rows if r["k_clusters"] == k]
        out.extend(chunk)
        out.append({
            "row": "mean", "k_clusters": k, "window": chunk[0]["window"], "seed": "",
            "global_retention": _mean([r["global_retention"] for r in chunk]),
            "windowed_retention": _mean([r["windowed_retention"] for r in chunk]),
            "keydiff_retention": _mean([r["keydiff_retention"] for r in chunk]),
            "gap": _mean([r["gap"] for r in chunk]),
        })
    params = {"k_grid": k_grid, "n": n, "d": d, "rho": rho, "window": window,
              "seeds": seeds, "spread": spread, "separation": separation}
    return Report(
        name="dilution",
        columns=["row", "k_clusters", "window", "seed", "global_retention",
                 "windowed_retention", "keydiff_retention", "gap"],
        rows=out,
        metadata={**params, "config_hash": config_hash(params)},
        group_by="k_clusters",
    )


def window_ablation(
    w_grid,
    n: int,
    d: int,
    k_clusters: int,
    rho: float,
    seeds=DEFAULT_SEEDS,
    spread: float = 1.0,
    separation: float = 10.0,
    jobs: int = 1,
) -> Report:
    """Windowed retention across window sizes on one cluster-mixture family.

    The best window (highest seed-mean retention, ties resolved toward the
    larger window, which costs fewer centroid computations) is flagged in
    the report metadata.
    """
    w_grid = [int(w) for w in w_grid]
    seeds = [int(s) for s in seeds]
    if not w_grid or any(w < 1 for w in w_grid):
        raise ValidationError("w_grid must be non-empty positive window sizes")

    def job(w: int, seed: int) -> dict:
        scenario = gen_cluster_mixture(
            n=n, d=d, k_clusters=k_clusters, spread=spread,
            separation=separation, seed=seed,
        )
        wr = run_retention(scenario, ScorerSpec("windowed", window_size=w), rho).retention_rate
        g = run_retention(scenario, ScorerSpec("manifold"), rho).retention_rate
        return {"row": "run", "window": w, "seed": seed,
                "windowed_retention": wr, "global_retention": g}

    rows = _map_jobs(jobs, job, [(w, s) for w in w_grid for s in seeds])
    out = []
    means = {}
    for w in w_grid:
        chunk = [r for r in rows if r["window"] == w]
        out.extend(chunk)
        means[w] = _mean([r["windowed_retention"] for r in chunk])
        out.append({
            "row": "mean", "window": w, "seed": "",
            "windowed_retention": means[w],
            "global_retention": _mean([r["global_retention"] for r in chunk]),
        })
    best = max(sorted(means), key=lambda w: (means[w], w))
    params = {"w_grid": w_grid, "n": n, "d": d, "k_clusters": k_clusters, "rho": rho,
              "seeds": seeds, "spread": spread, "separation": separation}
    return Report(
        name="ablation",
        columns=["row", "window", "seed", "windowed_retention", "global_retention"],
        rows=out,
        metadata={**params, "best_window": best, "config_hash": config_hash(params)},
        group_by="window",
    )


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test via the regularized incomplete beta function.

    Degenerate zero-variance inputs are flagged: identical samples give
    t = 0, p = 1; a constant nonzero difference gives p = 0.
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError(f"need at least 2 pairs, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("samples contain NaN or Inf")
    diff = x - y
    n = diff.size
    df = n - 1
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    se = sd / math.sqrt(n)
    if se == 0.0:
        if mean == 0.0:
            return TTestResult(n, 0.0, 0.0, 0.0, 1.0, df, degenerate=True)
        return TTestResult(n, mean, 0.0, math.copysign(math.inf, mean), 0.0, df,
                           degenerate=True)
    t = mean / se
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(n, mean, se, t, p, df)


def compare_methods(
    scenario: Scenario,
    specs,
    rho: float,
    queries: KeyTensor | None = None,
) -> Report:
    """Pairwise score agreement (pearson/spearman/overlap) plus per-method retention."""
    from .attention import pearson as _pearson, selection_overlap, spearman as _spearman

    specs = list(specs)
    if len(specs) < 2:
        raise ValidationError("need at least 2 scorer specs to compare")
    m = budget(scenario.seq_len, rho)
    scored = []
    for spec in specs:
        q = queries if queries is not None else _auto_queries(scenario, spec)
        scores = compute_scores(spec, scenario.keys, queries=q)
        scored.append((spec.label(), scores, retention_from_scores(scores, m)))

    rows = []
    for i in range(len(scored)):
        for j in range(i + 1, len(scored)):
            la, sa, ra = scored[i]
            lb, sb, rb = scored[j]
            rows.append({
                "row": "pair", "method_a": la, "method_b": lb,
                "pearson": _pearson(sa.data.ravel(), sb.data.ravel()),
                "spearman": _spearman(sa.data.ravel(), sb.data.ravel()),
                "overlap": selection_overlap(ra, rb),
            })
    if scenario.needles:
        for label, _, retained in scored:
            rows.append({
                "row": "retention", "method_a": label, "method_b": "",
                "retention": retention_rate(retained, scenario.needles),
            })
    params = {"kind": scenario.kind, "scenario": scenario.params,
              "methods": [s.label() for s in specs], "rho": rho}
    return Report(
        name="compare",
        columns=["row", "method_a", "method_b", "pearson", "spearman", "overlap", "retention"],
        rows=rows,
        metadata={"config_hash": config_hash(params), "rho": rho,
                  "kind": scenario.kind, "methods": ",".join(s.label() for s in specs)},
    )
