"""Monte Carlo study: scenario generators, replication orchestration, metrics.

Scenarios combine a confounding pattern (linear or nonlinear forms for the
propensity, mediator, and outcome confounding functions, coded e.g. LNN), a
coefficient regime (Large: fixed in n; Small: every true mediator contributes
4/sqrt(n) to the indirect effect, with shrinking per-coordinate rates), and a
sample size. Metrics follow the selection/coverage/bias summaries used
throughout: PC (proportion of replications whose selected set contains the
true mediators), MN (median number of selected non-mediators), empirical CI
coverage, and bias against the attached ground truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from .data import Dataset, MediatorSet, residualize
from .effects import effects
from .estimator import MediationFit, TuningConfig, default_lambda_grid, fit
from .inference import PerturbationScheme, bootstrap_cis, delta_ci, sandwich
from .learners import LearnerSpec, NuisanceFit, crossfit, default_library

__all__ = [
    "SimError",
    "ScenarioSpec",
    "LocalCoefficientSchedule",
    "GroundTruth",
    "SimulationResult",
    "coefficient_schedule",
    "generate",
    "run_study",
    "nuisance_diagnostics",
]

METHODS = ("PRD", "ADP", "FULL", "ORACLE", "LM")
_WEIGHT_LABEL = {"PRD": "product", "ADP": "adaptive"}


class SimError(RuntimeError):
    """Simulation study could not be completed."""


def _sub_seed(seed: int, *coords: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(coords)).generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell: confounding pattern, coefficient regime, size."""

    confounding: str = "LLL"
    coef_regime: str = "Large"
    n: int = 1000
    p: int = 10
    q: int = 3
    true_set: tuple[int, ...] = (1, 2, 3)
    noise_sd_eps: float = 1.0
    noise_sd_eta: float = 1.0

    def __post_init__(self) -> None:
        if len(self.confounding) != 3 or any(c not in "LN" for c in self.confounding):
            raise SimError(f"confounding must be three of L/N, got '{self.confounding}'")
        if self.coef_regime not in ("Large", "Small", "SmallAlpha"):
            raise SimError(f"unknown coefficient regime '{self.coef_regime}'")
        if self.q != 3:
            raise SimError("confounding functions are defined for q=3")
        ts = tuple(sorted(set(self.true_set)))
        if not ts or min(ts) < 1 or max(ts) > self.p:
            raise SimError("true_set must be a nonempty subset of 1..p")
        if len(ts) > self.p - 2:
            raise SimError("true_set leaves no room for the decoy coordinates")
        object.__setattr__(self, "true_set", ts)

    def label(self) -> str:
        return f"{self.coef_regime}/{self.confounding}/n={self.n}/p={self.p}"


@dataclass(frozen=True)
class LocalCoefficientSchedule:
    """True coefficient vectors, possibly drifting with n."""

    alpha0n: np.ndarray
    beta0n: np.ndarray
    gamma0n: float
    c1: np.ndarray
    c2: np.ndarray
    m_noise_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.m_noise_scale is None:
            object.__setattr__(self, "m_noise_scale", np.ones_like(self.alpha0n))
        scheduled = (self.c1 > 0) | (self.c2 > 0)
        if np.any(self.c1 < 0) or np.any(self.c2 < 0):
            raise SimError("rate exponents must be nonnegative")
        total = self.c1 + self.c2
        if np.any(total[scheduled] > 0.5 + 1e-12):
            raise SimError("rate exponents must satisfy c1 + c2 <= 1/2")


def coefficient_schedule(spec: ScenarioSpec) -> LocalCoefficientSchedule:
    """Coefficient table for a scenario.

    True mediators: in the Large regime both slopes are 1; in the Small
    regime the three patterns (4/sqrt(n), 1), (8 n^-1/4, n^-1/4 / 2) and
    (4, 1/sqrt(n)) are cycled so every true coordinate contributes exactly
    4/sqrt(n) to the indirect effect. Decoys: the first free coordinate is outcome-only
    (0, b) with b = 1 in the Large regime and 0.32 (with mediator noise sd
    0.25, i.e. effective standardized slope 0.08) otherwise, the second
    treatment-only (a, 0) with a = 1 in the Large regime and 0.5 otherwise;
    all remaining coordinates are pure noise.
    SmallAlpha mirrors Small with the two roles swapped.
    """
    p, n = spec.p, spec.n
    alpha = np.zeros(p)
    beta = np.zeros(p)
    c1 = np.zeros(p)
    c2 = np.zeros(p)
    small_patterns = [
        (4.0 * n**-0.5, 1.0, 0.5, 0.0, 1.0),
        (8.0 * n**-0.25, 0.5 * n**-0.25, 0.25, 0.25, 1.0),
        (4.0, n**-0.5, 0.0, 0.5, 1.0),
    ]
    noise_scale = np.ones(p)
    for pos, j in enumerate(spec.true_set):
        i = j - 1
        if spec.coef_regime == "Large":
            alpha[i], beta[i] = 1.0, 1.0
        else:
            a, b, ca, cb, s = small_patterns[pos % 3]
            if spec.coef_regime == "SmallAlpha":
                a, b, ca, cb = b, a, cb, ca
            alpha[i], beta[i], c1[i], c2[i] = a, b, ca, cb
            noise_scale[i] = s
    decoys = [j for j in range(1, p + 1) if j not in spec.true_set][:2]
    decoy_b = 1.0 if spec.coef_regime == "Large" else 0.32
    decoy_a = 1.0 if spec.coef_regime == "Large" else 0.5
    if len(decoys) >= 1:
        i = decoys[0] - 1  # outcome-only coordinate
        alpha[i], beta[i] = (decoy_b, 0.0) if spec.coef_regime == "SmallAlpha" else (0.0, decoy_b)
        if spec.coef_regime != "Large":
            noise_scale[i] = 0.25
    if len(decoys) >= 2:
        i = decoys[1] - 1  # treatment-only coordinate
        alpha[i], beta[i] = (0.0, decoy_a) if spec.coef_regime == "SmallAlpha" else (decoy_a, 0.0)
    sched = LocalCoefficientSchedule(
        alpha0n=alpha, beta0n=beta, gamma0n=1.0, c1=c1, c2=c2, m_noise_scale=noise_scale
    )
    if spec.coef_regime != "Large":
        prods = alpha[[j - 1 for j in spec.true_set]] * beta[[j - 1 for j in spec.true_set]]
        if not np.allclose(prods, 4.0 * n**-0.5, rtol=1e-12):
            raise SimError("small-regime contributions must equal 4/sqrt(n)")
    return sched


def _mu_d_fn(code: str) -> Callable[[np.ndarray], np.ndarray]:
    if code == "L":
        return lambda x: expit(0.8 * (x[:, 0] + x[:, 1]))
    return lambda x: expit(0.8 * (x[:, 0] * x[:, 1] + x[:, 1]))


def _psi_m_fn(code: str) -> Callable[[np.ndarray], np.ndarray]:
    if code == "L":
        return lambda x: x[:, 0] + x[:, 1] - x[:, 2]
    return lambda x: x[:, 0] ** 2 + x[:, 1] - x[:, 2]


def _psi_y_fn(code: str) -> Callable[[np.ndarray], np.ndarray]:
    if code == "L":
        return lambda x: 2.0 * (x[:, 0] - 0.5) + x[:, 1] + 2.0 * x[:, 2]
    return lambda x: 2.0 * (x[:, 0] - 0.5) ** 2 + x[:, 1] + 2.0 * x[:, 2]


@dataclass(frozen=True)
class GroundTruth:
    """True effects, mediator set, and nuisance functions for one scenario."""

    nde: float
    nie: float
    true_set: MediatorSet
    schedule: LocalCoefficientSchedule
    mu_d0: Callable[[np.ndarray], np.ndarray]
    mu_m0: Callable[[np.ndarray], np.ndarray]
    mu_y0: Callable[[np.ndarray], np.ndarray]


def generate(spec: ScenarioSpec, seed: int = 0) -> tuple[Dataset, GroundTruth]:
    """Draw one dataset from the scenario's data-generating process.

    Confounders are independent Uniform(0,1); treatment is Bernoulli at the
    scenario propensity; each mediator column receives the same confounding
    shift plus independent noise; the outcome is linear in treatment and
    mediators plus its own confounding shift and noise.
    """
    sched = coefficient_schedule(spec)
    mu_d = _mu_d_fn(spec.confounding[0])
    psi_m = _psi_m_fn(spec.confounding[1])
    psi_y = _psi_y_fn(spec.confounding[2])
    alpha, beta, gamma = sched.alpha0n, sched.beta0n, sched.gamma0n

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.uniform(size=(spec.n, spec.q))
    prop = mu_d(x)
    d = rng.binomial(1, prop).astype(np.float64)
    eta = rng.normal(0.0, spec.noise_sd_eta, size=(spec.n, spec.p))
    eta *= sched.m_noise_scale[None, :]
    m = d[:, None] * alpha + psi_m(x)[:, None] + eta
    eps = rng.normal(0.0, spec.noise_sd_eps, size=spec.n)
    y = gamma * d + m @ beta + psi_y(x) + eps

    true_ms = MediatorSet(spec.true_set, spec.p)
    nie_full = float(alpha @ beta)
    nie_restricted = float(alpha[true_ms.m_cols()] @ beta[true_ms.m_cols()])
    if abs(nie_full - nie_restricted) > 1e-10 * (1 + abs(nie_full)):
        raise SimError("indirect-effect products outside the true set must vanish")

    def mu_m0(xx: np.ndarray) -> np.ndarray:
        return mu_d(xx)[:, None] * alpha + psi_m(xx)[:, None]

    def mu_y0(xx: np.ndarray) -> np.ndarray:
        return gamma * mu_d(xx) + mu_m0(xx) @ beta + psi_y(xx)

    truth = GroundTruth(
        nde=float(gamma),
        nie=nie_full,
        true_set=true_ms,
        schedule=sched,
        mu_d0=mu_d,
        mu_m0=mu_m0,
        mu_y0=mu_y0,
    )
    data = Dataset(d=d, x=x, m=m, y=y)
    return data, truth


def nuisance_diagnostics(
    data: Dataset, nfit: NuisanceFit, truth: GroundTruth
) -> pd.DataFrame:
    """RMSE of cross-fitted predictions against the true conditional means.

    Returns one row per (target, fold), plus fold='all' summary rows; the
    mediator RMSE averages over coordinates.
    """
    mu_y0 = truth.mu_y0(data.x)
    mu_d0 = truth.mu_d0(data.x)
    mu_m0 = truth.mu_m0(data.x)
    rows = []
    folds = np.asarray(nfit.fold_assignment)
    for label, pred, true in (
        ("y", nfit.mu_y_hat, mu_y0),
        ("d", nfit.mu_d_hat, mu_d0),
        ("m", nfit.mu_m_hat, mu_m0),
    ):
        err2 = (np.asarray(pred) - true) ** 2
        per_obs = err2 if err2.ndim == 1 else err2.mean(axis=1)
        rows.append({"target": label, "fold": "all", "rmse": float(np.sqrt(per_obs.mean()))})
        for k in range(1, nfit.K + 1):
            sel = folds == k
            rows.append(
                {"target": label, "fold": str(k), "rmse": float(np.sqrt(per_obs[sel].mean()))}
            )
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class SimulationResult:
    """Per-replication records plus aggregated selection/coverage/bias metrics."""

    records: pd.DataFrame
    table1: pd.DataFrame
    coverage: pd.DataFrame
    metrics: pd.DataFrame
    spec: ScenarioSpec
    true_nde: float
    true_nie: float
    n_failures: int


def _run_replication(
    spec: ScenarioSpec,
    methods: Sequence[str],
    boot_b: int,
    level: float,
    seed: int,
    rep: int,
    K: int,
    cv_folds: int,
    clip_eps: float,
    g_distribution: str,
    lambda_points: int,
    selection_rule: str,
    se_factor: float,
) -> list[dict]:
    data, truth = generate(spec, seed=_sub_seed(seed, rep, 0))
    true_idx = set(truth.true_set.indices)
    cfg = TuningConfig(
        lambda_grid=default_lambda_grid(spec.n, points=lambda_points),
        cv_folds=cv_folds,
        selection_rule=selection_rule,
        se_factor=se_factor,
    )

    semip = [m for m in methods if m != "LM"]
    records: list[dict] = []
    res = res_lm = None
    diag = {}
    if semip:
        nfit = crossfit(data, default_library(), K=K, clip_eps=clip_eps, seed=_sub_seed(seed, rep, 1))
        res = residualize(data, nfit)
        d = nuisance_diagnostics(data, nfit, truth)
        diag = {
            f"rmse_{t}": float(d.loc[(d.target == t) & (d.fold == "all"), "rmse"].iloc[0])
            for t in ("y", "d", "m")
        }
    if "LM" in methods:
        nfit_lm = crossfit(
            data, [LearnerSpec("linear")], K=K, clip_eps=clip_eps, seed=_sub_seed(seed, rep, 2)
        )
        res_lm = residualize(data, nfit_lm)

    for method in methods:
        rec: dict = {"rep": rep, "method": method, **diag}
        try:
            if method in ("PRD", "ADP"):
                mfit = fit(res, method, cfg=cfg, seed=_sub_seed(seed, rep, 3))
            elif method == "FULL":
                mfit = fit(res, "NONE")
            elif method == "ORACLE":
                mfit = fit(res, "NONE", restrict=truth.true_set)
            elif method == "LM":
                mfit = fit(res_lm, "NONE", restrict=truth.true_set)
            else:
                raise SimError(f"unknown method '{method}'")
            res_used = res_lm if method == "LM" else res

            nde, nie = effects(mfit)
            sel = set(mfit.selected.indices)
            rec.update(
                nde=nde,
                nie=nie,
                selected=",".join(str(j) for j in sorted(sel)),
                contains=int(true_idx <= sel),
                n_nonmed=len(sel - true_idx),
                lam=mfit.lam,
                kappa=mfit.kappa,
                failed=0,
            )
            cov = sandwich(res_used, mfit, mfit.selected)
            d_nde, d_nie = delta_ci(mfit, cov, level)
            rec.update(
                delta_nde_lo=d_nde.lower,
                delta_nde_hi=d_nde.upper,
                delta_nie_lo=d_nie.lower,
                delta_nie_hi=d_nie.upper,
                delta_se_nie=float(np.sqrt(cov.J_nie_hat / mfit.n)),
                delta_se_nde=float(np.sqrt(cov.J_nde_hat / mfit.n)),
            )
            if boot_b > 0 and method in ("PRD", "ADP", "ORACLE"):
                scheme = PerturbationScheme(
                    distribution=g_distribution, B=boot_b, seed=_sub_seed(seed, rep, 4)
                )
                b_nde, b_nie = bootstrap_cis(res_used, mfit, scheme, level)
                rec.update(
                    boot_nde_lo=b_nde.lower,
                    boot_nde_hi=b_nde.upper,
                    boot_nie_lo=b_nie.lower,
                    boot_nie_hi=b_nie.upper,
                )
        except Exception as exc:  # noqa: BLE001 -- failures are counted, budgeted
            warnings.warn(f"replication {rep}, method {method} failed: {exc}")
            rec.update(failed=1)
        records.append(rec)
    return records


def run_study(
    spec: ScenarioSpec,
    methods: Sequence[str] = ("PRD", "ADP"),
    reps: int = 200,
    boot_b: int = 200,
    seed: int = 0,
    level: float = 0.95,
    K: int = 5,
    cv_folds: int = 10,
    clip_eps: float = 0.01,
    g_distribution: str = "exponential",
    lambda_points: int = 101,
    selection_rule: str = "one-se",
    se_factor: float = 0.16,
    n_jobs: int = 1,
) -> SimulationResult:
    """Run `reps` independent replications and aggregate the study metrics.

    Deterministic given (spec, methods, reps, seed) regardless of n_jobs:
    every replication derives its own seed from the master seed and the
    replication index, and aggregation is order-independent.
    """
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise SimError(f"unknown methods {bad}; choose from {METHODS}")
    if reps < 1:
        raise SimError("reps must be at least 1")

    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_run_replication)(
            spec, tuple(methods), boot_b, level, seed, rep, K, cv_folds,
            clip_eps, g_distribution, lambda_points, selection_rule, se_factor,
        )
        for rep in range(reps)
    )
    records = pd.DataFrame([rec for chunk in chunks for rec in chunk])
    n_failures = int(records["failed"].sum())
    if n_failures > 0.02 * reps * len(methods):
        raise SimError(f"{n_failures} replication failures exceed the 2% budget")

    _, truth = generate(spec, seed=_sub_seed(seed, 0, 0))
    ok = records[records["failed"] == 0]

    metrics_rows = []
    table1_rows = []
    coverage_rows = []
    for method in methods:
        sub = ok[ok["method"] == method]
        if sub.empty:
            continue
        pc = float(sub["contains"].mean())
        mn = float(sub["n_nonmed"].median())
        metrics_rows.append(
            {
                "method": method,
                "reps": len(sub),
                "PC": pc,
                "MN": mn,
                "bias_nde": float(sub["nde"].mean() - truth.nde),
                "bias_nie": float(sub["nie"].mean() - truth.nie),
                "sd_nde": float(sub["nde"].std(ddof=1)) if len(sub) > 1 else 0.0,
                "sd_nie": float(sub["nie"].std(ddof=1)) if len(sub) > 1 else 0.0,
                "mean_delta_se_nie": float(sub["delta_se_nie"].mean()),
            }
        )
        if method in _WEIGHT_LABEL:
            table1_rows.append(
                {
                    "coefficients": spec.coef_regime,
                    "n": spec.n,
                    "weight_version": _WEIGHT_LABEL[method],
                    "scenario": spec.confounding,
                    "PC": pc,
                    "MN": mn,
                }
            )
        for ci in ("delta", "boot"):
            for estimand, true_val in (("nde", truth.nde), ("nie", truth.nie)):
                lo, hi = f"{ci}_{estimand}_lo", f"{ci}_{estimand}_hi"
                if lo not in sub.columns or sub[lo].isna().all():
                    continue
                hit = (sub[lo] <= true_val) & (true_val <= sub[hi])
                coverage_rows.append(
                    {
                        "estimand": estimand.upper(),
                        "method": method,
                        "ci": ci,
                        "n": spec.n,
                        "coverage": float(hit.mean()),
                    }
                )

    return SimulationResult(
        records=records,
        table1=pd.DataFrame(table1_rows, columns=["coefficients", "n", "weight_version", "scenario", "PC", "MN"]),
        coverage=pd.DataFrame(coverage_rows, columns=["estimand", "method", "ci", "n", "coverage"]),
        metrics=pd.DataFrame(metrics_rows),
        spec=spec,
        true_nde=truth.nde,
        true_nie=truth.nie,
        n_failures=n_failures,
    )
