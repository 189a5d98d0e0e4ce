"""Acceptance suite: one test per claim, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Every tolerance is fixed here; nothing is calibrated at runtime.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from kvgeom import (
    KeyTensor,
    ScorerSpec,
    ScoreTensor,
    attention,
    budget,
    compress_cache,
    centroid,
    dilution_sweep,
    gen_collision_scenario,
    gen_radial_failure,
    gen_subspace_scenario,
    keydiff_score,
    l2_from_anchor,
    manifold_score,
    paired_ttest,
    retention_from_scores,
    retention_rate,
    run_retention,
    topk_select,
    windowed_manifold_score,
)
from kvgeom.cli import main as cli_main

from conftest import random_tensor, rng

SEEDS = (0, 1, 2, 3, 4)


def ok(num, text):
    print(f"[acceptance {num:02d}] PASS - {text}")


class TestAcceptance:
    def test_c01_cosine_failure_reproduction(self):
        # radial outlier: direction scoring evicts it, centroid-L2 keeps it
        for seed in SEEDS:
            scenario = gen_radial_failure(alpha=100.0, epsilon=0.1, n=64, d=8, seed=seed)
            pos = scenario.needles[0]
            man = run_retention(scenario, ScorerSpec("manifold"), rho=0.5)
            kd = run_retention(scenario, ScorerSpec("keydiff"), rho=0.5)
            assert man.retention_rate == 1.0
            assert kd.retention_rate == 0.0
            # score values against the construction anchor e1: the needle at
            # alpha*e1 sits 99 away, every common token epsilon away
            anchor = np.zeros(8)
            anchor[0] = 1.0
            anchored = l2_from_anchor(scenario.keys.matrix(0, 0), anchor)
            assert 98.0 <= anchored[pos] <= 100.0
            assert keydiff_score(scenario.keys).data[0, 0, pos] <= 1e-6
        ok(1, "radial outlier: keydiff retention 0, manifold retention 1, "
              "needle score 99 vs anchor, keydiff score <= 1e-6")

    def test_c02_strict_separation_retention(self):
        for seed in SEEDS:
            scenario = gen_subspace_scenario(
                n=4096, d=128, k=9, sigma=1.0, n_out=16, epsilon=1.0,
                seed=seed, strict_separation=True,
            )
            scores = manifold_score(scenario.keys)
            retained = retention_from_scores(scores, 16)
            assert retention_rate(retained, scenario.needles) == 1.0
            vec = scores.data[0, 0]
            needles = list(scenario.needles)
            common = np.delete(vec, needles)
            assert vec[needles].min() > common.max()
        ok(2, "strict-separation subspace: retention 1.0 on 5/5 seeds at M=16, "
              "min needle score > max common score on every seed")

    def test_c03_decomposition_identity(self):
        checked = 0
        for seed in range(10):
            t = random_tensor(seed, seq=100, dim=16)
            keys = t.matrix(0, 0)
            mu = centroid(keys)
            lhs = l2_from_anchor(keys, mu) ** 2
            r = np.linalg.norm(keys, axis=1)
            mu_norm = np.linalg.norm(mu)
            cos = keys @ mu / np.maximum(r * mu_norm, 1e-300)
            rhs = r**2 + mu_norm**2 - 2.0 * r * mu_norm * cos
            rel = np.abs(lhs - rhs) / np.maximum.reduce(
                [np.abs(lhs), np.abs(rhs), np.full_like(lhs, 1e-30)]
            )
            assert rel.max() < 1e-5
            checked += len(lhs)
        assert checked == 1000
        ok(3, "squared centroid distance decomposition within 1e-5 relative "
              "on 1000 keys across 10 tensors")

    def test_c04_windowed_degeneracy(self):
        for seed in range(100):
            g = rng(seed)
            shape = (int(g.integers(1, 3)), int(g.integers(1, 3)),
                     int(g.integers(1, 41)), int(g.integers(1, 17)))
            t = KeyTensor(g.normal(size=shape))
            w = int(g.integers(t.seq_len, 2 * t.seq_len + 1))
            assert np.array_equal(
                windowed_manifold_score(t, w).data, manifold_score(t).data
            )
            assert np.array_equal(
                windowed_manifold_score(t, 1).data, np.zeros(shape[:3])
            )
        ok(4, "window >= N bit-exact with global scoring on 100 random tensors; "
              "window 1 gives all-zero scores")

    def test_c05_dilution_trend(self):
        report = dilution_sweep(
            k_grid=[1, 4, 16, 32], n=16384, d=128, rho=0.25, seeds=SEEDS,
        )
        means = {r["k_clusters"]: r for r in report.rows if r["row"] == "mean"}
        assert means[32]["gap"] >= 0.2
        assert means[1]["gap"] <= 0.05
        monotone_seeds = 0
        for seed in SEEDS:
            runs = {
                r["k_clusters"]: r["global_retention"]
                for r in report.rows
                if r["row"] == "run" and r["seed"] == seed
            }
            if runs[4] >= runs[16] >= runs[32]:
                monotone_seeds += 1
        assert monotone_seeds >= 4
        ok(5, f"dilution: windowed-global gap {means[32]['gap']:.2f} at K=32, "
              f"{means[1]['gap']:.2f} at K=1; global retention non-increasing "
              f"beyond K=2 on {monotone_seeds}/5 seeds")

    def test_c06_directional_collision(self):
        for seed in SEEDS:
            scenario = gen_collision_scenario(
                magnitudes=(2.0, 5.0, 10.0), epsilon=0.1, n=256, d=8, seed=seed,
            )
            man = run_retention(scenario, ScorerSpec("manifold"), rho=0.5)
            kd = run_retention(scenario, ScorerSpec("keydiff"), rho=0.5)
            assert man.retained_needles == 3
            assert kd.retained_needles <= 1
        ok(6, "collision: manifold retains all 3 same-direction needles, "
              "keydiff at most 1, on 5/5 seeds")

    def test_c07_twonn_calibration(self):
        for k in (1, 2, 5, 9):
            estimates = []
            for seed in SEEDS:
                g = rng(10_000 + 17 * k + seed)
                basis, _ = np.linalg.qr(g.normal(size=(128, k)))
                points = g.uniform(size=(4096, k)) @ basis.T
                from kvgeom import twonn_dim

                estimates.append(twonn_dim(points))
            mean = float(np.mean(estimates))
            assert abs(mean - k) <= max(1.0, 0.25 * k), (k, mean)
            if k == 9:
                assert 7.0 <= mean <= 11.0
        ok(7, "Two-NN on planted k-dim manifolds (k=1,2,5,9; n=4096, d=128) "
              "within k +- max(1, 0.25k); k=9 estimate in [7, 11]")

    def test_c08_topk_oracle_equivalence(self):
        for seed in range(1000):
            g = rng(seed)
            n = int(g.integers(1, 64))
            scores = np.round(g.normal(size=n), 1)  # coarse grid forces ties
            m = int(g.integers(1, n + 1))
            oracle = sorted(sorted(range(n), key=lambda i: (-scores[i], i))[:m])
            assert np.array_equal(topk_select(scores, m), oracle)
        ok(8, "top-k matches the full-sort oracle exactly on 1000 random "
              "instances including ties")

    def test_c09_paired_ttest_correctness(self):
        for seed in range(100):
            g = rng(seed)
            n = int(g.integers(2, 50))
            a = g.normal(size=n)
            b = a + g.normal(scale=0.3, size=n)
            res = paired_ttest(a, b)
            oracle = scipy.stats.ttest_rel(a, b)
            assert abs(res.t_stat - oracle.statistic) <= 1e-10
            assert abs(res.p_value - oracle.pvalue) <= 1e-10
        same = paired_ttest([1.0, 2.0], [1.0, 2.0])
        assert same.t_stat == 0.0 and same.p_value == 1.0 and same.degenerate
        shifted = paired_ttest([2.0, 3.0], [1.0, 2.0])
        assert shifted.p_value == 0.0 and shifted.degenerate
        ok(9, "paired t-test matches the closed-form oracle to 1e-10 on 100 "
              "instances; zero-variance branches behave as specified")

    def test_c10_keydiff_scale_invariance(self):
        scenario = gen_radial_failure(alpha=100.0, epsilon=0.1, n=64, d=8, seed=0)
        base = scenario.keys.matrix(0, 0)
        kd_before = keydiff_score(scenario.keys).data[0, 0]
        man_before = manifold_score(scenario.keys).data[0, 0]
        norms = np.linalg.norm(base, axis=1)
        for alpha in (0.1, 10.0, 100.0):
            for i in range(base.shape[0]):
                scaled = base.copy()
                scaled[i] *= alpha
                t = KeyTensor(scaled[None, None, :, :])
                kd_after = keydiff_score(t).data[0, 0]
                assert np.abs(kd_after - kd_before).max() <= 1e-6
                man_after = manifold_score(t).data[0, 0]
                assert abs(man_after[i] - man_before[i]) >= abs(alpha - 1) * 0.5 * norms[i]
        ok(10, "scaling any single key by 0.1/10/100 moves no keydiff score "
               "beyond 1e-6 while the token's manifold score moves by >= "
               "|alpha-1| * 0.5 * |k|")

    def test_c11_budget_and_eviction_formalism(self):
        cases = 0
        for n in (1, 2, 3, 5, 8, 10, 16, 17, 64, 100, 128, 1000, 4096, 10000,
                  16384, 20000, 31, 77, 250, 999):
            for rho in (0.0, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.75, 0.8, 0.9):
                exact = math.floor((1 - Fraction(str(rho))) * n)
                assert budget(n, rho) == max(1, exact), (n, rho)
                cases += 1
        assert cases == 200

        for seed in range(10):
            g = rng(seed)
            n = int(g.integers(2, 17))
            m = int(g.integers(1, n + 1))
            k = random_tensor(seed + 50, heads=2, seq=n, dim=4)
            v = random_tensor(seed + 150, heads=2, seq=n, dim=4)
            q = random_tensor(seed + 250, heads=2, seq=3, dim=4)
            scores = ScoreTensor(g.normal(size=(1, 2, n)))
            retained = retention_from_scores(scores, m)
            out = compress_cache(k, v, retained)
            via_cache = attention(q, out.keys, out.values).values
            for h in range(2):
                idx = retained.indices[0][h]
                kf = KeyTensor(k.data[:, h : h + 1, idx, :])
                vf = KeyTensor(v.data[:, h : h + 1, idx, :])
                qf = KeyTensor(q.data[:, h : h + 1])
                oracle = attention(qf, kf, vf).values[0, 0]
                assert np.abs(via_cache[0, h] - oracle).max() <= 1e-5
        ok(11, "budget floor matches exact arithmetic on a 200-case grid; "
               "compressed-cache attention equals filtered attention within 1e-5")

    def test_c12_cli_determinism(self, tmp_path, capsys):
        args = ["dilution", "--k-grid", "1,4", "--n", "512", "--d", "32",
                "--rho", "0.25", "--seeds", "0,1"]
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        assert cli_main(args + ["--out", str(out_a)]) == 0
        assert cli_main(args + ["--out", str(out_b)]) == 0
        capsys.readouterr()
        assert out_a.read_bytes() == out_b.read_bytes()
        text = out_a.read_text()
        assert "config_hash=" in text
        ok(12, "identical dilution configs produce byte-identical CSV output")
