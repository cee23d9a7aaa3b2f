"""Acceptance suite: end-to-end behavioral guarantees of the pipeline.

The simulation-backed criteria run large Monte Carlo studies that are
disk-cached under tests/_cache (see conftest.cached_study); the first run
takes several hours on one core, later runs are instant. The STUDIES table
below is also consumed by a warm-up script so the cache can be populated
out of band.
"""

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from medsel.cli import cli
from medsel.data import ResidualizedData
from medsel.estimator import WeightVector, fit, fit_alpha, fit_weighted_lasso
from medsel.inference import perturb_fit
from medsel.solver import cd_solve

from conftest import cached_study, random_residuals
from test_solver import grid_minimize_2d

STUDIES = {
    "small_lll_1000": dict(
        spec=dict(confounding="LLL", coef_regime="Small", n=1000, p=10),
        methods=("PRD", "ADP"), reps=200, boot_b=0, seed=101,
    ),
    "large_lll_500": dict(
        spec=dict(confounding="LLL", coef_regime="Large", n=500, p=10),
        methods=("PRD", "ADP"), reps=200, boot_b=0, seed=102,
    ),
    "large_lll_2000": dict(
        spec=dict(confounding="LLL", coef_regime="Large", n=2000, p=10),
        methods=("PRD", "ADP"), reps=200, boot_b=0, seed=103,
    ),
    "large_lnn_2000_boot": dict(
        spec=dict(confounding="LNN", coef_regime="Large", n=2000, p=10),
        methods=("PRD", "ORACLE"), reps=200, boot_b=200, seed=104,
    ),
    "small_lnn_2000_boot": dict(
        spec=dict(confounding="LNN", coef_regime="Small", n=2000, p=10),
        methods=("PRD", "ADP"), reps=200, boot_b=200, seed=105,
    ),
    "large_nnn_2000": dict(
        spec=dict(confounding="NNN", coef_regime="Large", n=2000, p=10),
        methods=("LM", "ORACLE"), reps=200, boot_b=0, seed=106,
    ),
    "large_lll_2000_wide": dict(
        spec=dict(confounding="LLL", coef_regime="Large", n=2000, p=10),
        methods=("PRD", "LM", "ORACLE"), reps=500, boot_b=0, seed=107,
    ),
}


def metrics_row(result, method):
    return result.metrics.set_index("method").loc[method]


def boot_nie_coverage(result, method):
    sub = result.coverage
    row = sub[(sub.method == method) & (sub.ci == "boot") & (sub.estimand == "NIE")]
    return float(row["coverage"].iloc[0])


class TestSelectionSmallCoefficients:
    """Product weights keep the weak true mediator moderately often and drop
    the outcome-only decoy; plain adaptive weights do the reverse."""

    @pytest.fixture(scope="class")
    def study(self):
        return cached_study(**STUDIES["small_lll_1000"])

    def test_product_weights_selection(self, study):
        row = metrics_row(study, "PRD")
        assert 0.45 <= row["PC"] <= 0.65
        assert row["MN"] == 0.0

    def test_adaptive_weights_selection(self, study):
        row = metrics_row(study, "ADP")
        assert 0.05 <= row["PC"] <= 0.25
        assert row["MN"] == 1.0


class TestSelectionLargeCoefficients:
    """Fixed (non-local) signals are always fully recovered."""

    @pytest.mark.parametrize("key", ["large_lll_500", "large_lll_2000"])
    def test_perfect_capture(self, key):
        study = cached_study(**STUDIES[key])
        for method in ("PRD", "ADP"):
            assert metrics_row(study, method)["PC"] == 1.0


class TestBootstrapCoverage:
    def test_nominal_coverage_under_nonlinear_confounding(self):
        study = cached_study(**STUDIES["large_lnn_2000_boot"])
        for method in ("PRD", "ORACLE"):
            assert 0.91 <= boot_nie_coverage(study, method) <= 0.99

    def test_adaptive_weights_undercover_on_local_signals(self):
        study = cached_study(**STUDIES["small_lnn_2000_boot"])
        prd = boot_nie_coverage(study, "PRD")
        adp = boot_nie_coverage(study, "ADP")
        assert adp < prd - 0.05
        assert adp <= 0.90


class TestConfoundingBias:
    def test_linear_residualization_biased_under_nonlinearity(self):
        study = cached_study(**STUDIES["large_nnn_2000"])
        lm = abs(metrics_row(study, "LM")["bias_nie"])
        oracle = abs(metrics_row(study, "ORACLE")["bias_nie"])
        assert lm > 3.0 * oracle

    def test_linear_residualization_unbiased_when_truth_is_linear(self):
        study = cached_study(**STUDIES["large_lll_2000_wide"])
        row = metrics_row(study, "LM")
        mc_se = row["sd_nie"] / np.sqrt(row["reps"])
        assert abs(row["bias_nie"]) <= 2.0 * mc_se


class TestSolverOracle:
    def test_matches_fine_grid_on_random_orthogonalized_instances(self):
        for seed in range(100):
            rng = np.random.default_rng(50_000 + seed)
            raw = rng.normal(size=(40, 2))
            q, _ = np.linalg.qr(raw)
            z = q * np.sqrt(40) @ np.diag(rng.uniform(0.5, 1.5, size=2))
            y = z @ rng.uniform(-1.5, 1.5, size=2) + 0.3 * rng.normal(size=40)
            C, b = z.T @ z, z.T @ y
            pen = rng.uniform(0.0, 4.0, size=2) * 40 / 2
            theta = cd_solve(C, b, pen)
            oracle = grid_minimize_2d(C, b, pen)
            np.testing.assert_allclose(theta, oracle, atol=2e-3)

    def test_zero_penalty_equals_least_squares(self):
        for seed in range(20):
            rng = np.random.default_rng(60_000 + seed)
            res = random_residuals(rng, n=50, p=3)
            wv = WeightVector(np.zeros(4), "NONE", 1.0)
            theta = fit_weighted_lasso(res, wv, 0.0)
            ls, *_ = np.linalg.lstsq(res.rz, res.ry, rcond=None)
            np.testing.assert_allclose(theta, ls, atol=1e-8)


class TestTreatmentMediatorOracle:
    def test_matches_normal_equations(self):
        for seed in range(100):
            rng = np.random.default_rng(70_000 + seed)
            rd = rng.normal(size=60)
            rm = rng.normal(size=(60, 4))
            res = ResidualizedData(ry=np.zeros(60), rd=rd, rm=rm)
            oracle = rd @ rm / (rd @ rd)
            np.testing.assert_allclose(fit_alpha(res), oracle, atol=1e-10)


class TestPerturbationIdentity:
    def test_unit_weights_reproduce_the_fit(self):
        rng = np.random.default_rng(80_000)
        for _ in range(5):
            res = random_residuals(rng, n=150, p=5)
            mfit = fit(res, "PRD", seed=1)
            alpha_b, theta_b = perturb_fit(res, np.ones(res.n), mfit.lam, mfit.kappa, "PRD")
            np.testing.assert_allclose(alpha_b, mfit.alpha_hat, atol=1e-10)
            np.testing.assert_allclose(theta_b, mfit.theta_hat, atol=1e-10)


class TestVarianceCalibration:
    def test_delta_se_tracks_monte_carlo_sd(self):
        study = cached_study(**STUDIES["large_lll_2000_wide"])
        row = metrics_row(study, "PRD")
        assert abs(row["mean_delta_se_nie"] - row["sd_nie"]) <= 0.15 * row["sd_nie"]


class TestThreadDeterminism:
    def test_aggregated_csvs_identical_across_thread_budgets(self, tmp_path):
        args = [
            "simulate", "--scenario", "LLL", "--regime", "Large",
            "--n", "300", "--p", "8", "--reps", "4", "--boot-b", "0",
            "--methods", "PRD,ADP", "--k-folds", "3", "--cv-folds", "4",
            "--seed", "42",
        ]
        outs = []
        for threads in ("1", "3"):
            out = tmp_path / f"t{threads}"
            result = CliRunner().invoke(cli, args + ["--out-dir", str(out), "--threads", threads])
            assert result.exit_code == 0, result.output
            outs.append(out)
        for name in ("aggregate.csv", "coverage.csv", "metrics.csv", "replications.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
