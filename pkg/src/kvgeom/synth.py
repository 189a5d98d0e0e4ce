"""Seeded scenario generators for needle-retention experiments.

Each generator plants ground-truth "needle" tokens inside a synthetic key
cloud and records their positions. Randomness comes from numpy's Philox
counter-based bit generator keyed by the scenario seed, so regenerating with
the same parameters and seed is bit-identical within one numpy version.
Needle positions are drawn uniformly at random but never land on the first
or last token, keeping them clear of the top-k tie-break rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor import KeyTensor

SCENARIO_KINDS = ("subspace", "radial", "clusters", "collision")
QUERY_MODES = ("random", "needle_probing")


@dataclass(frozen=True)
class Scenario:
    """Generated keys plus ground truth: kind, needle indices, echoed params."""

    kind: str
    keys: KeyTensor
    needles: tuple
    params: dict

    @property
    def seq_len(self) -> int:
        return self.keys.seq_len

    def sidecar_obj(self) -> dict:
        return {"kind": self.kind, "params": self.params, "needles": list(self.needles)}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return v / norm


def _orthonormal_pair(rng: np.random.Generator, d: int, axis: np.ndarray):
    """Two orthonormal vectors spanning a random plane orthogonal to `axis`."""
    p = rng.normal(size=d)
    p -= axis * (axis @ p)
    p = _unit(p)
    q = rng.normal(size=d)
    q -= axis * (axis @ q)
    q -= p * (p @ q)
    return p, _unit(q)


def _balanced_units(rng: np.random.Generator, count: int, d: int, axis: np.ndarray) -> np.ndarray:
    """Random unit vectors orthogonal to `axis` that sum to (near-)zero.

    Antithetic pairs (v, -v) cancel exactly; an odd leftover is covered by a
    120-degree triple in a random orthogonal plane when d >= 3. The zero-sum
    layout keeps empirical centroids and normalized-mean anchors pinned to
    the construction axis, so radial-blindness statements hold exactly
    instead of up to O(1/sqrt(n)) sampling drift.
    """
    if count < 1:
        return np.empty((0, d))
    out = np.empty((count, d))
    pos = 0
    if count % 2 == 1 and count >= 3 and d >= 3:
        p, q = _orthonormal_pair(rng, d, axis)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        for j in range(3):
            angle = phase + j * 2.0 * np.pi / 3.0
            out[pos] = np.cos(angle) * p + np.sin(angle) * q
            pos += 1
    while pos < count - 1:
        v = rng.normal(size=d)
        v -= axis * (axis @ v)
        v = _unit(v)
        out[pos] = v
        out[pos + 1] = -v
        pos += 2
    if pos < count:  # single leftover (count == 1, or odd count with d == 2)
        v = rng.normal(size=d)
        v -= axis * (axis @ v)
        out[pos] = _unit(v)
    return out


def _needle_positions(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    if count > n - 2:
        raise ValidationError(
            f"cannot place {count} needles in interior positions of {n} tokens"
        )
    return rng.permutation(np.arange(1, n - 1))[:count]


def _as_scenario(kind: str, keys: np.ndarray, needles, params: dict) -> Scenario:
    tensor = KeyTensor(keys.astype(np.float32)[None, None, :, :])
    return Scenario(
        kind=kind,
        keys=tensor,
        needles=tuple(int(i) for i in sorted(needles)),
        params=params,
    )


def gen_subspace_scenario(
    n: int,
    d: int,
    k: int,
    sigma: float,
    n_out: int,
    epsilon: float,
    seed: int,
    strict_separation: bool = False,
    center_scale: float = 10.0,
) -> Scenario:
    """Common tokens inside a random k-dim subspace, needles epsilon off it.

    The common cloud is centered at center_scale * sigma along an in-plane
    direction (an off-center cloud keeps direction-based scorers
    non-degenerate). Each needle is a common-like in-plane point plus a
    component of length epsilon orthogonal to the subspace. With
    strict_separation the common deviations are shrunk until
    epsilon > 3 * diam(common cloud), the regime in which every needle must
    outscore every common token under centroid-L2 scoring.
    """
    if not 1 <= k < d:
        raise ValidationError(f"need 1 <= k < d, got k={k}, d={d}")
    if n < 2:
        raise ValidationError(f"n must be >= 2, got {n}")
    if not 0 <= n_out < n:
        raise ValidationError(f"need 0 <= n_out < n, got n_out={n_out}, n={n}")
    if epsilon <= 0 or sigma <= 0:
        raise ValidationError("sigma and epsilon must be positive")
    rng = _rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(d, k)))
    center = center_scale * sigma * basis[:, 0]
    n_common = n - n_out
    common = center + rng.normal(0.0, sigma, size=(n_common, k)) @ basis.T
    applied_scale = 1.0
    if strict_separation and n_common >= 2:
        mean = common.mean(axis=0)
        radius = float(np.linalg.norm(common - mean, axis=1).max())
        # diam <= 2 * radius, so 6.3 * radius < epsilon forces epsilon > 3 * diam
        limit = epsilon / 6.3
        if radius > limit and radius > 0.0:
            applied_scale = limit / radius
            common = mean + (common - mean) * applied_scale

    keys = np.empty((n, d))
    needles = np.empty(0, dtype=np.int64)
    if n_out > 0:
        inplane = center + applied_scale * (
            rng.normal(0.0, sigma, size=(n_out, k)) @ basis.T
        )
        offsets = np.empty((n_out, d))
        for j in range(n_out):
            u = rng.normal(size=d)
            u -= basis @ (basis.T @ u)
            offsets[j] = _unit(u)
        needles = _needle_positions(rng, n_out, n)
        mask = np.ones(n, dtype=bool)
        mask[needles] = False
        keys[mask] = common
        keys[needles] = inplane + epsilon * offsets
    else:
        keys[:] = common

    params = {
        "n": n,
        "d": d,
        "k": k,
        "sigma": sigma,
        "n_out": n_out,
        "epsilon": epsilon,
        "seed": seed,
        "strict_separation": strict_separation,
        "center_scale": center_scale,
        "separation_scale": applied_scale,
        "basis": basis.tolist(),
    }
    return _as_scenario("subspace", keys, needles, params)


def gen_radial_failure(alpha: float, epsilon: float, n: int, d: int, seed: int) -> Scenario:
    """One radial outlier among common tokens spread around the first axis.

    Commons are e1 + epsilon * v with v balanced unit vectors orthogonal to
    e1; the single needle is alpha * e1: same direction as every common
    token, extreme magnitude. Direction-only scorers rank it as maximally
    typical while centroid-L2 ranks it as the top outlier.
    """
    if alpha <= 1.0:
        raise ValidationError(f"alpha must be > 1, got {alpha}")
    if n < 3:
        raise ValidationError(f"n must be >= 3, got {n}")
    if d < 2:
        raise ValidationError(f"d must be >= 2, got {d}")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    rng = _rng(seed)
    axis = np.zeros(d)
    axis[0] = 1.0
    jitter = _balanced_units(rng, n - 1, d, axis)
    pos = int(rng.integers(1, n - 1))
    keys = np.empty((n, d))
    mask = np.ones(n, dtype=bool)
    mask[pos] = False
    keys[mask] = axis + epsilon * jitter
    keys[pos] = alpha * axis
    params = {"alpha": alpha, "epsilon": epsilon, "n": n, "d": d, "seed": seed}
    return _as_scenario("radial", keys, [pos], params)


def gen_cluster_mixture(
    n: int,
    d: int,
    k_clusters: int,
    spread: float,
    separation: float,
    seed: int,
    shuffle: bool = False,
) -> Scenario:
    """Topically-local cluster mixture with one local needle per cluster.

    Cluster means sit at radius `separation` along orthonormal random
    directions. Each cluster's tokens deviate by Gaussian noise with total
    RMS radius `spread` (per-coordinate sigma = spread / sqrt(d)), laid out
    cluster-contiguously so that token block i*n/K .. (i+1)*n/K shares
    cluster i. One needle per cluster sits 3x-4x `spread` from its cluster
    mean, displaced toward the global grand mean: a clear local outlier
    whose global centroid-L2 score drops below ordinary tokens once several
    clusters dilute the centroid. `shuffle` permutes the sequence layout for
    the adversarial interleaved variant.
    """
    if k_clusters < 1:
        raise ValidationError(f"k_clusters must be >= 1, got {k_clusters}")
    if k_clusters > d:
        raise ValidationError(
            f"need k_clusters <= d for orthonormal cluster directions, got {k_clusters} > {d}"
        )
    if n < 4 * k_clusters:
        raise ValidationError(f"n must be >= 4 * k_clusters, got n={n}, k={k_clusters}")
    if spread <= 0 or separation <= 0:
        raise ValidationError("spread and separation must be positive")
    rng = _rng(seed)
    dirs, _ = np.linalg.qr(rng.normal(size=(d, k_clusters)))
    dirs = dirs.T  # (K, d) orthonormal rows
    means = separation * dirs
    block = n // k_clusters
    remainder = n % k_clusters
    bounds = []
    start = 0
    for i in range(k_clusters):
        size = block + (1 if i < remainder else 0)
        bounds.append((start, start + size))
        start += size

    keys = np.empty((n, d))
    needles = []
    per_coord = spread / np.sqrt(d)
    for i, (lo, hi) in enumerate(bounds):
        keys[lo:hi] = means[i] + rng.normal(0.0, per_coord, size=(hi - lo, d))
        radius = rng.uniform(3.0, 4.0) * spread
        pos_lo = max(lo, 1)
        pos_hi = min(hi, n - 1)
        pos = int(rng.integers(pos_lo, pos_hi))
        keys[pos] = means[i] - radius * dirs[i]
        needles.append(pos)

    if shuffle:
        perm = rng.permutation(n)
        keys = keys[perm]
        inverse = np.empty(n, dtype=np.int64)
        inverse[perm] = np.arange(n)
        needles = [int(inverse[p]) for p in needles]

    params = {
        "n": n,
        "d": d,
        "k_clusters": k_clusters,
        "spread": spread,
        "separation": separation,
        "seed": seed,
        "shuffle": shuffle,
        "block_bounds": [[lo, hi] for lo, hi in bounds],
        "cluster_means": means.tolist(),
    }
    return _as_scenario("clusters", keys, needles, params)


def gen_collision_scenario(
    magnitudes, epsilon: float, n: int, d: int, seed: int
) -> Scenario:
    """Several needles sharing one direction with distinct magnitudes.

    Commons are unit vectors with balanced angular jitter epsilon around a
    random unit direction u; each needle is m * u exactly for one magnitude
    m. All needles are indistinguishable (and maximally typical) to
    direction-only scorers, while centroid-L2 separates them by magnitude.
    """
    mags = [float(m) for m in magnitudes]
    if not mags:
        raise ValidationError("magnitudes must be non-empty")
    if any(m <= 1.0 for m in mags):
        raise ValidationError(f"all magnitudes must be > 1, got {mags}")
    if n <= len(mags) + 2:
        raise ValidationError(f"n must exceed len(magnitudes) + 2, got n={n}")
    if d < 2:
        raise ValidationError(f"d must be >= 2, got {d}")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    rng = _rng(seed)
    direction = _unit(rng.normal(size=d))
    n_common = n - len(mags)
    jitter = _balanced_units(rng, n_common, d, direction)
    commons = (direction + epsilon * jitter) / np.sqrt(1.0 + epsilon**2)
    positions = _needle_positions(rng, len(mags), n)
    keys = np.empty((n, d))
    mask = np.ones(n, dtype=bool)
    mask[positions] = False
    keys[mask] = commons
    for m, pos in zip(mags, positions):
        keys[pos] = m * direction
    params = {
        "magnitudes": mags,
        "epsilon": epsilon,
        "n": n,
        "d": d,
        "seed": seed,
        "direction": direction.tolist(),
        "needle_positions": [int(p) for p in positions],
    }
    return _as_scenario("collision", keys, positions, params)


def gen_queries(
    n_queries: int,
    d: int,
    mode: str,
    scenario: Scenario,
    seed: int,
    noise: float = 0.0,
) -> KeyTensor:
    """Query tensor for attention-based scoring against a scenario.

    random: ambient Gaussian queries. needle_probing: queries cycle through
    the scenario's needle keys plus Gaussian noise of scale `noise`, so
    attention concentrates on the needles (a retrieval-style workload).
    """
    if n_queries < 1:
        raise ValidationError(f"n_queries must be >= 1, got {n_queries}")
    if mode not in QUERY_MODES:
        raise ValidationError(f"mode must be one of {QUERY_MODES}, got {mode!r}")
    if d != scenario.keys.head_dim:
        raise ValidationError(
            f"query dim {d} does not match scenario dim {scenario.keys.head_dim}"
        )
    rng = _rng(seed)
    if mode == "random":
        q = rng.normal(size=(n_queries, d))
    else:
        if not scenario.needles:
            raise ValidationError("needle_probing requires a scenario with needles")
        base = scenario.keys.data[0, 0, list(scenario.needles)].astype(np.float64)
        reps = np.resize(np.arange(len(scenario.needles)), n_queries)
        q = base[reps]
        if noise > 0.0:
            q = q + noise * rng.normal(size=(n_queries, d))
    return KeyTensor(q.astype(np.float32)[None, None, :, :])


_GENERATORS = {
    "subspace": (
        gen_subspace_scenario,
        ("n", "d", "k", "sigma", "n_out", "epsilon", "seed", "strict_separation", "center_scale"),
    ),
    "radial": (gen_radial_failure, ("alpha", "epsilon", "n", "d", "seed")),
    "clusters": (
        gen_cluster_mixture,
        ("n", "d", "k_clusters", "spread", "separation", "seed", "shuffle"),
    ),
    "collision": (gen_collision_scenario, ("magnitudes", "epsilon", "n", "d", "seed")),
}


def regenerate(kind: str, params: dict) -> Scenario:
    """Rebuild a scenario from its kind and echoed input params."""
    if kind not in _GENERATORS:
        raise ValidationError(f"unknown scenario kind {kind!r}")
    fn, arg_names = _GENERATORS[kind]
    missing = [a for a in arg_names if a not in params]
    if missing:
        raise ValidationError(f"scenario params missing {missing} for kind {kind!r}")
    return fn(**{a: params[a] for a in arg_names})


def save_sidecar(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.sidecar_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_sidecar(path) -> Scenario:
    """Regenerate a scenario from its JSON sidecar alone."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed sidecar JSON: {exc}") from exc
    for key in ("kind", "params", "needles"):
        if key not in obj:
            raise ValidationError(f"sidecar missing {key!r}")
    scenario = regenerate(obj["kind"], obj["params"])
    if list(scenario.needles) != [int(i) for i in obj["needles"]]:
        raise ValidationError("sidecar needles do not match regenerated scenario")
    return scenario
