"""End-to-end tests for the command-line interface."""

import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from medsel.cli import cli
from medsel.config import ConfigError, RunConfig, load_overrides
from medsel.sim import ScenarioSpec, generate


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    data, _ = generate(ScenarioSpec("LLL", "Large", n=150, p=5), seed=7)
    path = tmp_path_factory.mktemp("data") / "study.csv"
    frame = pd.DataFrame(
        {
            "treat": data.d.astype(int),
            "resp": data.y,
            **{f"m{j}": data.m[:, j - 1] for j in range(1, 6)},
            **{f"x{j}": data.x[:, j - 1] for j in range(1, 4)},
        }
    )
    frame.to_csv(path, index=False)
    return path


ANALYZE_ARGS = [
    "analyze",
    "--treatment", "treat",
    "--outcome", "resp",
    "--mediators", "m1,m2,m3,m4,m5",
    "--confounders", "x1,x2,x3",
    "--k-folds", "3",
    "--cv-folds", "4",
    "--boot-b", "120",
    "--seed", "3",
]


class TestAnalyze:
    def test_writes_reports(self, data_csv, tmp_path):
        out = tmp_path / "run1"
        result = CliRunner().invoke(
            cli, ANALYZE_ARGS + ["--data", str(data_csv), "--out-dir", str(out)]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "report.json").read_text())
        assert payload["config"]["command"] == "analyze"
        assert {"nde", "nie", "selected", "per_mediator"} <= set(payload["report"])
        assert "perturbation-bootstrap" in payload["report"]["nie"]
        targets = set(payload["ensemble_weights"])
        assert {"y", "d"} <= targets
        assert any(t.startswith("m") for t in targets)
        text = (out / "report.txt").read_text()
        assert "NDE" in text and "NIE" in text

    def test_mediator_names_propagate(self, data_csv, tmp_path):
        out = tmp_path / "run2"
        CliRunner().invoke(
            cli,
            ANALYZE_ARGS
            + ["--data", str(data_csv), "--out-dir", str(out), "--boot-b", "0"],
        )
        payload = json.loads((out / "report.json").read_text())
        names = {row["name"] for row in payload["report"]["per_mediator"]}
        assert names == {"m1", "m2", "m3", "m4", "m5"}

    def test_config_file_overrides_defaults_not_flags(self, data_csv, tmp_path):
        cfg_path = tmp_path / "overrides.json"
        cfg_path.write_text(json.dumps({"seed": 99, "boot_b": 0, "cv_folds": 3}))
        out = tmp_path / "run3"
        result = CliRunner().invoke(
            cli,
            [
                "analyze",
                "--data", str(data_csv),
                "--treatment", "treat",
                "--outcome", "resp",
                "--mediators", "m1,m2,m3,m4,m5",
                "--confounders", "x1,x2,x3",
                "--k-folds", "3",
                "--seed", "3",  # explicit flag must beat the config file
                "--config", str(cfg_path),
                "--out-dir", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        params = json.loads((out / "report.json").read_text())["config"]["params"]
        assert params["seed"] == 3
        assert params["boot_b"] == 0 and params["cv_folds"] == 3

    def test_unknown_config_key_rejected(self, data_csv, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"bootstrap": 5}))
        result = CliRunner().invoke(
            cli,
            ANALYZE_ARGS + ["--data", str(data_csv), "--config", str(cfg_path)],
        )
        assert result.exit_code != 0
        assert isinstance(result.exception, ConfigError)


SIM_ARGS = [
    "simulate",
    "--scenario", "LLL",
    "--regime", "Large",
    "--n", "150",
    "--p", "6",
    "--reps", "2",
    "--boot-b", "0",
    "--methods", "PRD",
    "--k-folds", "3",
    "--cv-folds", "4",
    "--seed", "11",
]


class TestSimulate:
    def test_writes_all_csvs(self, tmp_path):
        out = tmp_path / "sim1"
        result = CliRunner().invoke(cli, SIM_ARGS + ["--out-dir", str(out)])
        assert result.exit_code == 0, result.output
        for name in ("replications.csv", "aggregate.csv", "coverage.csv", "metrics.csv"):
            assert (out / name).exists()
        agg = pd.read_csv(out / "aggregate.csv")
        assert list(agg.columns) == [
            "coefficients", "n", "weight_version", "scenario", "PC", "MN",
        ]
        covg = pd.read_csv(out / "coverage.csv")
        assert list(covg.columns) == ["estimand", "method", "ci", "n", "coverage"]
        cfg = RunConfig.from_json((out / "config.json").read_text())
        assert cfg.command == "simulate" and cfg.params["seed"] == 11

    def test_byte_identical_across_thread_budgets(self, tmp_path):
        outs = []
        for threads in ("1", "2"):
            out = tmp_path / f"sim_t{threads}"
            result = CliRunner().invoke(
                cli, SIM_ARGS + ["--out-dir", str(out), "--threads", threads]
            )
            assert result.exit_code == 0, result.output
            outs.append(out)
        for name in ("replications.csv", "aggregate.csv", "coverage.csv", "metrics.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestReport:
    def test_renders_markdown(self, tmp_path):
        out = tmp_path / "sim"
        CliRunner().invoke(cli, SIM_ARGS + ["--out-dir", str(out)])
        md = tmp_path / "tables.md"
        result = CliRunner().invoke(
            cli, ["report", "--results-dir", str(out), "--out-file", str(md)]
        )
        assert result.exit_code == 0, result.output
        text = md.read_text()
        assert "## Selection performance" in text and "## Coverage" in text

    def test_missing_results_dir_fails(self, tmp_path):
        result = CliRunner().invoke(cli, ["report", "--results-dir", str(tmp_path)])
        assert result.exit_code != 0


class TestExitCodes:
    def _run(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "medsel.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_usage_error_is_one(self):
        proc = self._run("analyze", "--treatment", "treat")
        assert proc.returncode == 1
        assert "usage error" in proc.stderr

    def test_pipeline_error_is_two_with_json(self, tmp_path):
        proc = self._run(
            "analyze",
            "--data", str(tmp_path / "missing.csv"),
            "--treatment", "t",
            "--outcome", "y",
            "--mediators", "m1",
        )
        assert proc.returncode == 2
        err = json.loads(proc.stderr.strip().splitlines()[-1])
        assert "error" in err and "type" in err

    def test_success_is_zero(self, tmp_path):
        out = tmp_path / "sim"
        proc = self._run(*SIM_ARGS, "--out-dir", str(out))
        assert proc.returncode == 0


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig("simulate", {"seed": 4, "n": 100})
        assert RunConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_command(self):
        with pytest.raises(ConfigError, match="command"):
            RunConfig("frobnicate", {})

    def test_unserializable_params(self):
        with pytest.raises(ConfigError, match="JSON"):
            RunConfig("analyze", {"x": object()})

    def test_load_overrides_validates(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_overrides(path)
        with pytest.raises(ConfigError, match="not found"):
            load_overrides(tmp_path / "nope.json")
