"""End-to-end acceptance checks, one test per criterion.

Each test prints a single verdict line through the acceptance_report
fixture; the conftest summary hook echoes all lines after the run.  These
are deliberately heavier than the unit tests (the full file takes roughly
three quarters of an hour on one core).
"""

import time

import numpy as np
import pytest

from vcbart.archive import archive_hash, save_draws_atomic
from vcbart.config import default_hyperparameters
from vcbart.correlation import CompoundSymmetry
from vcbart.evaluation import (benchmark_recovery, finite_model_check,
                               geweke_check, run_selection_experiment,
                               score_fit)
from vcbart.sampler import fit_posterior, sigma_acceptance_prob
from vcbart.synthetic import gen_panel, split_subjects, subset_panel

from conftest import make_panel


def test_1_sampler_joint_distribution_validity(acceptance_report):
    t0 = time.perf_counter()
    honest = geweke_check(n_samples=200_000, rng=0)
    broken = geweke_check(n_samples=20_000, rng=0, break_sigma=True)
    elapsed = time.perf_counter() - t0
    ok = (len(honest.names) >= 8
          and honest.max_abs_z < 4.0
          and broken.max_abs_z > 6.0
          and elapsed <= 600.0)
    line = acceptance_report(
        1, ok,
        f"joint-distribution check: honest max|z|={honest.max_abs_z:.2f} "
        f"over {len(honest.names)} functionals at 200000 samples "
        f"(threshold 4); corrupted-update control max|z|="
        f"{broken.max_abs_z:.1f} (threshold 6); {elapsed:.0f}s")
    assert ok, line


def test_2_exact_finite_model_equilibrium(acceptance_report):
    t0 = time.perf_counter()
    res = finite_model_check(n_steps=1_000_000, rng=0)
    elapsed = time.perf_counter() - t0
    ok = res.tv_distance <= 0.02 and elapsed <= 300.0
    line = acceptance_report(
        2, ok,
        f"two-state tree chain vs analytic posterior: TV="
        f"{res.tv_distance:.5f} (threshold 0.02) after {res.n_steps} steps "
        f"(split prob {res.empirical_split_prob:.5f} vs "
        f"{res.analytic_split_prob:.5f}); {elapsed:.0f}s")
    assert ok, line


def test_3_equicorrelation_algebra_against_dense_oracles(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    rho_grid = np.concatenate([[0.0], np.linspace(0.05, 0.95, 19)])
    worst = 0.0
    for rho in rho_grid:
        cs = CompoundSymmetry(float(rho))
        for n in range(1, 13):
            corr = cs.correlation_matrix(n)
            u = rng.standard_normal(n)
            v = rng.standard_normal(n)
            dense_quad = float(u @ np.linalg.solve(corr, v))
            worst = max(worst, abs(cs.quad_form(u, v) - dense_quad))
            dense_logdet = -float(np.linalg.slogdet(corr)[1])
            worst = max(worst, abs(cs.log_det_precision(n) - dense_logdet))

    # linear cost in subject size: same total rows, double the block size
    cs = CompoundSymmetry(0.5)
    small = [rng.standard_normal(6) for _ in range(400)]
    large = [rng.standard_normal(12) for _ in range(200)]

    def clock(blocks):
        best = np.inf
        for _ in range(5):
            start = time.perf_counter()
            for u in blocks:
                cs.quad_form(u, u)
            best = min(best, time.perf_counter() - start)
        return best

    ratio = clock(large) / clock(small)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and ratio <= 2.5 and elapsed <= 60.0
    line = acceptance_report(
        3, ok,
        f"closed-form quadratic form and log-determinant vs dense inversion: "
        f"max abs err {worst:.2e} (threshold 1e-10) over 20 rho values x "
        f"n_i 1..12; doubling block size costs {ratio:.2f}x "
        f"(threshold 2.5); {elapsed:.1f}s")
    assert ok, line


def test_4_recovery_beats_linear_floor_with_calibrated_bands(
        acceptance_report):
    seconds = []
    t0 = time.perf_counter()
    result = benchmark_recovery(
        n_replicates=25, n_train=75, n_test=25,
        progress=lambda info: seconds.append(info["seconds"]))
    elapsed = time.perf_counter() - t0

    vc = result.pooled("vcbart", "beta_mse_pooled")
    lin = result.pooled("linear", "beta_mse_pooled")
    wins = int((vc < lin).sum())
    beta_cov = float(result.pooled("vcbart", "beta_coverage_pooled").mean())
    pred_cov = float(result.pooled("vcbart", "predictive_coverage").mean())
    ok = (wins >= 23
          and beta_cov >= 0.75
          and 0.85 <= pred_cov <= 0.99
          and max(seconds) <= 600.0
          and elapsed <= 3 * 3600.0)
    line = acceptance_report(
        4, ok,
        f"25-replicate 75/25 subject benchmark: coefficient MSE below the "
        f"linear floor in {wins}/25 (need >=23); mean coefficient band "
        f"coverage {beta_cov:.3f} (need >=0.75); mean predictive coverage "
        f"{pred_cov:.3f} (need 0.85..0.99); slowest replicate "
        f"{max(seconds):.0f}s, total {elapsed / 60:.0f} min")
    assert ok, line


def test_5_modifier_selection_on_the_full_panel(acceptance_report):
    t0 = time.perf_counter()
    report, probs = run_selection_experiment()
    elapsed = time.perf_counter() - t0
    ok = report.accuracy >= 0.85 and report.sensitivity >= 0.60
    line = acceptance_report(
        5, ok,
        f"median-probability selection on the 500x4 panel: accuracy "
        f"{report.accuracy:.3f} (need >=0.85), sensitivity "
        f"{report.sensitivity:.3f} (need >=0.60), specificity "
        f"{report.specificity:.3f}, precision {report.precision:.3f}; "
        f"{elapsed / 60:.1f} min")
    assert ok, line


def test_6_noise_scale_acceptance_identities(acceptance_report):
    cases = [
        (1.7, 1.7, 3.0, 1.0),
        (1.0, 2.0, 3.0, 1.0),
        (2.0, 1.0, 3.0, 49.0 / 128.0),
    ]
    worst = max(abs(sigma_acceptance_prob(s, q, df) - expected)
                for s, q, df, expected in cases)
    ok = worst <= 1e-12
    line = acceptance_report(
        6, ok,
        f"noise-scale move acceptance vs closed form on 3 pinned cases: "
        f"max abs err {worst:.2e} (threshold 1e-12)")
    assert ok, line


def test_7_jump_scale_sweep_coverage_direction(acceptance_report):
    t0 = time.perf_counter()
    data, truth = gen_panel(rng=np.random.default_rng(
        np.random.SeedSequence(77)))
    train_ids, test_ids = split_subjects(data.n_subjects, 75, 25,
                                         np.random.default_rng(78))
    train, _ = subset_panel(data, truth, train_ids)
    test, beta_truth = subset_panel(data, truth, test_ids,
                                    standardize_y=False)
    coverage = {}
    for scale in (0.25, 1.0, 4.0):
        hyper = default_hyperparameters(5, 20, jump_sd_scale=scale, seed=79)
        draws = fit_posterior(train, hyper)
        coverage[scale] = score_fit(draws, test, beta_truth).pooled_coverage
    elapsed = time.perf_counter() - t0
    ok = coverage[0.25] >= coverage[4.0] - 0.03
    line = acceptance_report(
        7, ok,
        f"coefficient band coverage across jump-scale multipliers "
        f"{{0.25: {coverage[0.25]:.3f}, 1: {coverage[1.0]:.3f}, "
        f"4: {coverage[4.0]:.3f}}}; need coverage(0.25) >= coverage(4) - "
        f"0.03; {elapsed / 60:.1f} min")
    assert ok, line


def test_8_identical_seeds_reproduce_archive_bytes(acceptance_report,
                                                   tmp_path):
    data = make_panel(n_subjects=20, n_i=3)
    hyper = default_hyperparameters(2, 3, n_trees=10, n_iter=120, n_burn=40,
                                    seed=123)
    paths = []
    for name in ("first.jsonl.gz", "second.jsonl.gz"):
        draws = fit_posterior(data, hyper)
        path = tmp_path / name
        save_draws_atomic(draws, path)
        paths.append(path)
    digests = [archive_hash(p) for p in paths]
    ok = digests[0] == digests[1]
    line = acceptance_report(
        8, ok,
        f"two same-seed fits archive to identical bytes: sha256 "
        f"{digests[0][:16]}... == {digests[1][:16]}...")
    assert ok, line
