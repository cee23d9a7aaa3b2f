"""Post-selection uncertainty: perturbation-bootstrap and plug-in Delta-Method CIs.

The bootstrap refits the treatment-mediator slopes and the penalized outcome
model under i.i.d. mean-1 random observation weights, rebuilding the penalty
weights from perturbed pilots; the spread of the perturbed estimates
approximates the sampling distribution of the original ones. The Delta-Method
intervals plug empirical sandwich covariances into a normal approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import norm

from .data import MediatorSet, ResidualizedData
from .estimator import (
    EstimatorError,
    MediationFit,
    WeightVector,
    build_weights,
    fit_alpha,
    fit_weighted_lasso,
)
from .solver import SolverError

__all__ = [
    "InferenceError",
    "DegenerateReplication",
    "PerturbationScheme",
    "CovarianceEstimates",
    "IntervalReport",
    "sandwich",
    "delta_ci",
    "perturb_fit",
    "bootstrap_cis",
]

_COND_LIMIT = 1e12


class InferenceError(RuntimeError):
    """Inference could not be completed (collinearity, too many failed draws...)."""


class DegenerateReplication(RuntimeError):
    """A single bootstrap replication produced an unusable weighted design."""


@dataclass(frozen=True)
class PerturbationScheme:
    """Distribution of the multiplier weights: mean 1, finite variance."""

    distribution: Literal["exponential", "two-point"] = "exponential"
    B: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.distribution not in ("exponential", "two-point"):
            raise InferenceError(f"unknown perturbation distribution '{self.distribution}'")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.distribution == "exponential":
            return rng.exponential(1.0, size=n)
        # two-point: values {0, 2} with equal probability (mean 1, variance 1)
        return 2.0 * rng.integers(0, 2, size=n).astype(np.float64)


@dataclass(frozen=True)
class CovarianceEstimates:
    """Empirical sandwich covariances for the selected model."""

    H_hat: np.ndarray
    V1_hat: np.ndarray
    J1_hat: np.ndarray
    J2_hat: np.ndarray
    J_nie_hat: float
    J_nde_hat: float

    def __post_init__(self) -> None:
        for name in ("J1_hat", "J2_hat"):
            mat = getattr(self, name)
            if mat.size and np.max(np.abs(mat - mat.T)) > 1e-8 * (1 + np.max(np.abs(mat))):
                raise InferenceError(f"{name} is not symmetric")
        if self.J_nie_hat < -1e-10 or self.J_nde_hat < -1e-10:
            raise InferenceError("variance estimates must be nonnegative")


@dataclass(frozen=True)
class IntervalReport:
    estimate: float
    lower: float
    upper: float
    level: float
    method: Literal["perturbation-bootstrap", "delta-method"]

    def __post_init__(self) -> None:
        if not 0 < self.level < 1:
            raise InferenceError("coverage level must lie in (0, 1)")
        if self.lower > self.upper + 1e-12:
            raise InferenceError("interval endpoints are out of order")

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def sandwich(
    res: ResidualizedData, fit: MediationFit, model: MediatorSet
) -> CovarianceEstimates:
    """Plug-in covariances for the restricted model's coefficients and effects.

    J1 = H^-1 V1 H^-1 with H the second-moment matrix of the residualized
    (treatment, selected mediators) block and V1 its outcome-residual-weighted
    version; J2 uses treatment-residual-weighted mediator-model residuals.
    """
    zc = model.z_cols()
    zs = res.rz[:, zc]
    n = res.n
    h = zs.T @ zs / n
    if np.linalg.cond(h) > _COND_LIMIT:
        raise InferenceError("collinear selected mediators")
    eps = fit.residuals_eps
    v1 = (zs * eps[:, None] ** 2).T @ zs / n
    h_inv = np.linalg.inv(h)
    j1 = h_inv @ v1 @ h_inv

    mc = model.m_cols()
    eta = fit.residuals_eta[:, mc]
    rd2 = res.rd**2
    v2 = (eta * rd2[:, None]).T @ eta / n
    j2 = v2 / np.mean(rd2) ** 2

    avec = np.concatenate([[0.0], fit.alpha_hat[mc]])
    beta_m = fit.theta_hat[1:][mc]
    j_nie = float(avec @ j1 @ avec + beta_m @ j2 @ beta_m)
    return CovarianceEstimates(
        H_hat=h,
        V1_hat=v1,
        J1_hat=j1,
        J2_hat=j2,
        J_nie_hat=max(j_nie, 0.0),
        J_nde_hat=max(float(j1[0, 0]), 0.0),
    )


def delta_ci(
    fit: MediationFit, cov: CovarianceEstimates, level: float = 0.95
) -> tuple[IntervalReport, IntervalReport]:
    """Normal-approximation intervals: estimate +/- z * sqrt(J / n)."""
    z = norm.ppf((1 + level) / 2)
    n = fit.n
    nde = fit.gamma_hat
    nie = float(fit.alpha_hat @ fit.beta_hat)
    half_nde = z * np.sqrt(cov.J_nde_hat / n)
    half_nie = z * np.sqrt(cov.J_nie_hat / n)
    return (
        IntervalReport(nde, nde - half_nde, nde + half_nde, level, "delta-method"),
        IntervalReport(nie, nie - half_nie, nie + half_nie, level, "delta-method"),
    )


def perturb_fit(
    res: ResidualizedData,
    g: np.ndarray,
    lambda_b: float,
    kappa_b: float,
    version: str,
    restrict: MediatorSet | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One perturbation replication: weighted slopes and penalized coefficients.

    Pilots are refit under the weights g, penalty weights are rebuilt from the
    perturbed pilots, and the same coordinate-descent solver runs with
    observation weights. g identically 1 reproduces the original fit.
    """
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.shape[0] != res.n:
        raise InferenceError("perturbation vector length mismatch")
    if np.sum(g * res.rd**2) <= 1e-12:
        raise DegenerateReplication("no weighted treatment variation")
    alpha_b = fit_alpha(res, obs_weights=g)
    zero_w = WeightVector(np.zeros(res.p + 1), "NONE", 1.0)
    if version == "NONE" or lambda_b == 0.0:
        theta_b = fit_weighted_lasso(res, zero_w, 0.0, restrict=restrict, obs_weights=g)
        return alpha_b, theta_b
    pilot_b = fit_weighted_lasso(res, zero_w, 0.0, restrict=restrict, obs_weights=g)
    w_b = build_weights(version, alpha_b, pilot_b[1:], kappa_b)
    theta_b = fit_weighted_lasso(
        res, w_b, lambda_b, restrict=restrict, obs_weights=g, theta0=pilot_b
    )
    return alpha_b, theta_b


def bootstrap_cis(
    res: ResidualizedData,
    fit: MediationFit,
    scheme: PerturbationScheme,
    level: float = 0.95,
    interval: Literal["basic", "percentile"] = "basic",
) -> tuple[IntervalReport, IntervalReport]:
    """Perturbation-bootstrap intervals for the direct and indirect effects.

    Draws B weight vectors, recomputes the effects under each, and forms
    basic (reflected) intervals from the empirical quantiles; the original
    tuning values are reused for every replication. Deterministic given the
    scheme's seed. Replications with degenerate weighted designs are dropped,
    with a 1% budget.
    """
    if scheme.B < 100:
        raise InferenceError("at least 100 bootstrap replications are required")
    est_nde = fit.gamma_hat
    est_nie = float(fit.alpha_hat @ fit.beta_hat)
    children = np.random.SeedSequence(scheme.seed).spawn(scheme.B)
    nde_b = np.empty(scheme.B)
    nie_b = np.empty(scheme.B)
    ok = np.zeros(scheme.B, dtype=bool)
    for b, child in enumerate(children):
        g = scheme.draw(res.n, np.random.default_rng(child))
        try:
            alpha_b, theta_b = perturb_fit(
                res, g, fit.lam, fit.kappa, fit.weights.version, restrict=fit.restrict
            )
        except (DegenerateReplication, EstimatorError, SolverError, np.linalg.LinAlgError):
            continue
        nde_b[b] = theta_b[0]
        nie_b[b] = float(alpha_b @ theta_b[1:])
        ok[b] = True
    n_bad = int(scheme.B - ok.sum())
    if n_bad > 0.01 * scheme.B:
        raise InferenceError(f"{n_bad}/{scheme.B} bootstrap replications were degenerate")

    lo_q, hi_q = (1 - level) / 2, (1 + level) / 2
    reports = []
    for est, draws in ((est_nde, nde_b[ok]), (est_nie, nie_b[ok])):
        q_lo, q_hi = np.quantile(draws, [lo_q, hi_q])
        if interval == "basic":
            lower, upper = 2 * est - q_hi, 2 * est - q_lo
        else:
            lower, upper = q_lo, q_hi
        reports.append(
            IntervalReport(est, float(lower), float(upper), level, "perturbation-bootstrap")
        )
    return reports[0], reports[1]
