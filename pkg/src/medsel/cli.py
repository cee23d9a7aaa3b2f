"""Command-line front-end: analyze a CSV, run simulation studies, render tables.

Exit codes: 0 success, 1 usage error, 2 pipeline error. Pipeline errors emit
machine-readable JSON on stderr. Every output directory receives the exact
resolved configuration used.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import estimator, inference, learners, sim
from .config import ConfigError, RunConfig, load_overrides
from .data import load_csv, residualize
from .effects import build_report
from .learners import default_library

__all__ = ["main", "cli"]


def _apply_config(ctx: click.Context, config_path: str | None, params: dict) -> dict:
    """Precedence: command-line flags > config file > defaults."""
    resolved = dict(params)
    if config_path:
        overrides = load_overrides(config_path)
        unknown = [k for k in overrides if k not in resolved]
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, value in overrides.items():
            src = ctx.get_parameter_source(key)
            if src is None or src.name == "DEFAULT":
                resolved[key] = value
    return resolved


def _split_csv_list(value: str | None) -> list[str]:
    if not value:
        return []
    return [v.strip() for v in value.split(",") if v.strip()]


@click.group()
def cli() -> None:
    """Mediator selection and natural effect estimation."""


@cli.command()
@click.option("--data", required=True, help="CSV file with header row.")
@click.option("--treatment", required=True, help="Binary treatment column.")
@click.option("--outcome", required=True, help="Outcome column.")
@click.option("--mediators", required=True, help="Comma-separated mediator columns.")
@click.option("--confounders", default="", help="Comma-separated confounder columns.")
@click.option("--weights", default="PRD", type=click.Choice(["PRD", "ADP", "NONE"]))
@click.option("--k-folds", default=5, show_default=True, help="Cross-fitting folds.")
@click.option("--cv-folds", default=10, show_default=True, help="Tuning CV folds.")
@click.option("--boot-b", default=1000, show_default=True, help="Bootstrap replications (0 disables).")
@click.option("--g-dist", default="exponential", type=click.Choice(["exponential", "two-point"]))
@click.option("--selection-rule", default="one-se", type=click.Choice(["one-se", "min-cv-error"]), show_default=True)
@click.option("--se-factor", default=0.16, show_default=True, help="Width of the one-SE admissible band.")
@click.option("--level", default=0.95, show_default=True)
@click.option("--clip-eps", default=0.01, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", default=".", show_default=True)
@click.option("--config", "config_path", default=None, help="JSON file of option overrides.")
def analyze(config_path, **params) -> None:
    """Run the full pipeline on a CSV dataset and write report.json/report.txt."""
    ctx = click.get_current_context()
    params = _apply_config(ctx, config_path, params)
    run_cfg = RunConfig("analyze", params)

    data = load_csv(
        params["data"],
        {
            "treatment": params["treatment"],
            "outcome": params["outcome"],
            "mediators": _split_csv_list(params["mediators"]),
            "confounders": _split_csv_list(params["confounders"]),
        },
    )
    nfit = learners.crossfit(
        data,
        default_library(),
        K=int(params["k_folds"]),
        clip_eps=float(params["clip_eps"]),
        seed=int(params["seed"]),
    )
    res = residualize(data, nfit)
    cfg = estimator.TuningConfig(
        lambda_grid=estimator.default_lambda_grid(data.n),
        cv_folds=int(params["cv_folds"]),
        selection_rule=params["selection_rule"],
        se_factor=float(params["se_factor"]),
    )
    mfit = estimator.fit(res, params["weights"], cfg=cfg, seed=int(params["seed"]) + 1)

    cov = inference.sandwich(res, mfit, mfit.selected)
    intervals = {"delta-method": inference.delta_ci(mfit, cov, float(params["level"]))}
    if int(params["boot_b"]) > 0 and params["weights"] != "NONE":
        scheme = inference.PerturbationScheme(
            distribution=params["g_dist"], B=int(params["boot_b"]), seed=int(params["seed"]) + 2
        )
        intervals["perturbation-bootstrap"] = inference.bootstrap_cis(
            res, mfit, scheme, float(params["level"])
        )
    report = build_report(mfit, intervals, names=data.m_names)

    out = Path(params["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    member_labels = [s.label() for s in default_library()]
    payload = {
        "config": run_cfg.to_dict(),
        "report": report.as_dict(),
        "ensemble_weights": {
            target: dict(zip(member_labels, np.round(ew.weights, 10).tolist()))
            for target, ew in nfit.per_target_ensemble.items()
        },
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(report.to_text() + "\n")
    click.echo(f"wrote {out / 'report.json'} and {out / 'report.txt'}")


@cli.command()
@click.option("--scenario", default="LLL", help="Three letters L/N for (propensity, mediator, outcome).")
@click.option("--regime", default="Large", type=click.Choice(["Large", "Small", "SmallAlpha"]))
@click.option("--n", default=1000, show_default=True)
@click.option("--p", default=10, show_default=True)
@click.option("--reps", default=200, show_default=True)
@click.option("--boot-b", default=200, show_default=True)
@click.option("--methods", default="PRD,ADP", show_default=True)
@click.option("--k-folds", default=5, show_default=True)
@click.option("--cv-folds", default=10, show_default=True)
@click.option("--selection-rule", default="one-se", type=click.Choice(["one-se", "min-cv-error"]), show_default=True)
@click.option("--se-factor", default=0.16, show_default=True, help="Width of the one-SE admissible band.")
@click.option("--level", default=0.95, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--threads", default=1, show_default=True)
@click.option("--out-dir", default=".", show_default=True)
@click.option("--config", "config_path", default=None, help="JSON file of option overrides.")
def simulate(config_path, **params) -> None:
    """Run a Monte Carlo study and write per-replication and aggregated CSVs."""
    ctx = click.get_current_context()
    params = _apply_config(ctx, config_path, params)
    run_cfg = RunConfig("simulate", params)

    spec = sim.ScenarioSpec(
        confounding=params["scenario"],
        coef_regime=params["regime"],
        n=int(params["n"]),
        p=int(params["p"]),
    )
    result = sim.run_study(
        spec,
        methods=tuple(_split_csv_list(params["methods"])),
        reps=int(params["reps"]),
        boot_b=int(params["boot_b"]),
        seed=int(params["seed"]),
        level=float(params["level"]),
        K=int(params["k_folds"]),
        cv_folds=int(params["cv_folds"]),
        selection_rule=params["selection_rule"],
        se_factor=float(params["se_factor"]),
        n_jobs=int(params["threads"]),
    )
    out = Path(params["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    result.records.to_csv(out / "replications.csv", index=False)
    result.table1.to_csv(out / "aggregate.csv", index=False)
    result.coverage.to_csv(out / "coverage.csv", index=False)
    result.metrics.to_csv(out / "metrics.csv", index=False)
    run_cfg.write(out / "config.json")
    click.echo(f"wrote replications/aggregate/coverage/metrics CSVs to {out}")


def _markdown_table(frame: pd.DataFrame, decimals: int) -> str:
    cells = [
        [f"{v:.{decimals}f}" if isinstance(v, float) else str(v) for v in row]
        for row in frame.itertuples(index=False)
    ]
    headers = [str(c) for c in frame.columns]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    def fmt(row):
        return "| " + " | ".join(v.ljust(w) for v, w in zip(row, widths)) + " |"
    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([fmt(headers), rule, *(fmt(r) for r in cells)])


@cli.command()
@click.option("--results-dir", required=True, help="Directory written by `simulate`.")
@click.option("--out-file", default=None, help="Optional markdown output path.")
def report(results_dir, out_file) -> None:
    """Render markdown tables from simulation result CSVs."""
    results = Path(results_dir)
    expected = [results / "aggregate.csv", results / "coverage.csv"]
    missing = [str(p) for p in expected if not p.exists()]
    if missing:
        raise click.ClickException(f"missing result files: {missing}")

    lines = ["# Simulation results", "", "## Selection performance", ""]
    agg = pd.read_csv(expected[0])
    lines.append(_markdown_table(agg, decimals=2))
    lines += ["", "## Coverage", ""]
    covg = pd.read_csv(expected[1])
    lines.append(_markdown_table(covg, decimals=3))
    text = "\n".join(lines) + "\n"
    if out_file:
        Path(out_file).write_text(text)
        click.echo(f"wrote {out_file}")
    else:
        click.echo(text)


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        print(json.dumps({"error": exc.format_message(), "type": type(exc).__name__}), file=sys.stderr)
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001 -- CLI boundary
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        sys.exit(2)


if __name__ == "__main__":
    main()
