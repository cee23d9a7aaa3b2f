"""Penalized outcome-model fitting and mediator selection.

The outcome model regresses the residualized outcome on the residualized
treatment and mediators with a weighted-L1 penalty; the treatment coefficient
is never penalized. The treatment-mediator coefficients come from univariate
least squares on residuals and are unaffected by selection.

Two penalty-weight flavors are supported: ADP (pilot outcome coefficient to
the -kappa) and PRD (absolute pilot product of the treatment-mediator and
mediator-outcome coefficients to the -kappa), plus an unpenalized NONE mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import MediatorSet, ResidualizedData
from .learners import make_folds
from .solver import SolverError, cd_path, cd_solve

__all__ = [
    "EstimatorError",
    "WeightVector",
    "TuningConfig",
    "MediationFit",
    "default_lambda_grid",
    "fit_alpha",
    "build_weights",
    "fit_weighted_lasso",
    "tune",
    "fit",
]

_VERSIONS = ("ADP", "PRD", "NONE")


class EstimatorError(ValueError):
    """Invalid estimation request or degenerate design."""


@dataclass(frozen=True)
class WeightVector:
    """Penalty weights over (treatment, mediators); +inf pins a coefficient at 0."""

    w: np.ndarray
    version: str
    kappa: float

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if self.version not in _VERSIONS:
            raise EstimatorError(f"unknown weight version '{self.version}'")
        if w.ndim != 1 or w.size < 1:
            raise EstimatorError("weight vector must be 1-D and nonempty")
        if w[0] != 0.0:
            raise EstimatorError("treatment coefficient must be unpenalized (w[0] = 0)")
        if np.any(np.nan_to_num(w, nan=-1.0) < 0):
            raise EstimatorError("penalty weights must be nonnegative")
        object.__setattr__(self, "w", w)


def default_lambda_grid(n: int, points: int = 101, low: float = -2.0, high: float = 10.0) -> np.ndarray:
    """n^{1/4} * 2^G for G an evenly spaced grid on [low, high]."""
    return n**0.25 * 2.0 ** np.linspace(low, high, points)


@dataclass(frozen=True)
class TuningConfig:
    lambda_grid: np.ndarray
    kappa_grid: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    cv_folds: int = 10
    selection_rule: str = "min-cv-error"
    se_factor: float = 1.0

    def __post_init__(self) -> None:
        lam = np.asarray(self.lambda_grid, dtype=np.float64).ravel()
        if lam.size == 0 or np.any(lam <= 0):
            raise EstimatorError("lambda grid must be nonempty and positive")
        if len(self.kappa_grid) == 0 or any(k <= 0 for k in self.kappa_grid):
            raise EstimatorError("kappa grid must be nonempty and positive")
        if self.cv_folds < 2:
            raise EstimatorError("cv_folds must be at least 2")
        if self.selection_rule not in ("min-cv-error", "one-se"):
            raise EstimatorError(f"unknown selection rule '{self.selection_rule}'")
        if self.se_factor < 0:
            raise EstimatorError("se_factor must be nonnegative")
        object.__setattr__(self, "lambda_grid", lam)
        object.__setattr__(self, "kappa_grid", tuple(float(k) for k in self.kappa_grid))

    @classmethod
    def default(cls, n: int) -> "TuningConfig":
        return cls(lambda_grid=default_lambda_grid(n))


@dataclass(frozen=True)
class MediationFit:
    """Fitted outcome-model coefficients, treatment-mediator slopes, and tuning state."""

    theta_hat: np.ndarray
    alpha_hat: np.ndarray
    selected: MediatorSet
    lam: float
    kappa: float
    weights: WeightVector
    residuals_eps: np.ndarray
    residuals_eta: np.ndarray
    restrict: MediatorSet | None = None

    @property
    def gamma_hat(self) -> float:
        return float(self.theta_hat[0])

    @property
    def beta_hat(self) -> np.ndarray:
        return self.theta_hat[1:]

    @property
    def n(self) -> int:
        return self.residuals_eps.shape[0]

    @property
    def p(self) -> int:
        return self.alpha_hat.shape[0]


def fit_alpha(res: ResidualizedData, obs_weights: np.ndarray | None = None) -> np.ndarray:
    """Per-mediator regression of residualized mediators on residualized treatment.

    Closed form: alpha_j = sum_i g_i rd_i rm_ij / sum_i g_i rd_i^2.
    """
    g = np.ones(res.n) if obs_weights is None else np.asarray(obs_weights, dtype=np.float64)
    denom = float(np.sum(g * res.rd**2))
    if denom <= 0.0:
        raise EstimatorError("no treatment variation after residualization")
    return (g * res.rd) @ res.rm / denom


def build_weights(
    version: str,
    pilot_alpha: np.ndarray,
    pilot_beta: np.ndarray,
    kappa: float,
) -> WeightVector:
    """ADP: |pilot_beta|^-kappa; PRD: |pilot_alpha * pilot_beta|^-kappa.

    A zero pilot (product) yields an infinite weight, pinning the coefficient.
    The treatment entry is always 0.
    """
    if kappa <= 0:
        raise EstimatorError("kappa must be positive")
    pilot_alpha = np.asarray(pilot_alpha, dtype=np.float64).ravel()
    pilot_beta = np.asarray(pilot_beta, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(pilot_alpha)) and np.all(np.isfinite(pilot_beta))):
        raise EstimatorError("pilot estimates must be finite")
    if version == "PRD":
        base = np.abs(pilot_alpha * pilot_beta)
    elif version == "ADP":
        base = np.abs(pilot_beta)
    else:
        raise EstimatorError(f"weights are defined for ADP/PRD only, got '{version}'")
    with np.errstate(divide="ignore"):
        wm = base**-kappa
    return WeightVector(np.concatenate([[0.0], wm]), version, float(kappa))


def _restrict_mask(d: int, restrict) -> np.ndarray:
    """Boolean mask over Z coordinates (0-based) that are free to be nonzero."""
    if restrict is None:
        return np.ones(d, dtype=bool)
    mask = np.zeros(d, dtype=bool)
    if isinstance(restrict, MediatorSet):
        mask[restrict.z_cols()] = True
    else:
        idx = np.asarray(list(restrict), dtype=np.intp)
        if idx.size and (idx.min() < 1 or idx.max() > d):
            raise EstimatorError(f"restrict indices must lie in 1..{d}")
        mask[idx - 1] = True
    mask[0] = True  # treatment is always retained
    return mask


def _ls_solve(zmat: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(zmat, y, rcond=None)
    if rank < zmat.shape[1]:
        warnings.warn("singular design at lambda=0; returning minimal-norm solution")
    return coef


def fit_weighted_lasso(
    res: ResidualizedData,
    w: WeightVector,
    lam: float,
    restrict=None,
    obs_weights: np.ndarray | None = None,
    theta0: np.ndarray | None = None,
) -> np.ndarray:
    """Minimize (1/n) sum g_i (ry_i - rz_i'theta)^2 + (lambda/n) sum_j w_j |theta_j|.

    Solved by cyclic coordinate descent with exact soft-threshold updates on
    internally standardized columns; coefficients are returned on the original
    scale and thresholded entries are exactly 0.0. lambda=0 returns the
    unpenalized least-squares solution.
    """
    if lam < 0:
        raise EstimatorError("lambda must be nonnegative")
    z, y = res.rz, res.ry
    n, d = z.shape
    if w.w.shape[0] != d:
        raise EstimatorError(f"weight vector length {w.w.shape[0]} != p+1 = {d}")
    g = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=np.float64)
    free = _restrict_mask(d, restrict)
    theta = np.zeros(d)

    if lam == 0.0:
        cols = np.flatnonzero(free)
        sg = np.sqrt(g)
        theta[cols] = _ls_solve(sg[:, None] * z[:, cols], sg * y)
        return theta

    scale = np.sqrt((g @ z**2) / n)
    active = free & (scale > 0) & np.isfinite(w.w)
    cols = np.flatnonzero(active)
    if cols.size == 0:
        return theta
    zs = z[:, cols] / scale[cols]
    gram = zs.T @ (g[:, None] * zs)
    lin = zs.T @ (g * y)
    # penalty on standardized coefficients equals lam * (w_j / s_j) |theta_std_j|
    pen = lam * (w.w[cols] / scale[cols]) / 2.0
    start = None if theta0 is None else theta0[cols] * scale[cols]
    theta_std = cd_solve(gram, lin, pen, theta0=start)
    theta[cols] = theta_std / scale[cols]
    return theta


def tune(
    res: ResidualizedData,
    version: str,
    pilots: tuple[np.ndarray, np.ndarray],
    cfg: TuningConfig,
    seed: int = 0,
    restrict=None,
) -> tuple[float, float]:
    """Choose (lambda, kappa) by K-fold cross-validated squared prediction error.

    Weights are built from the supplied pilots and held fixed across folds.
    Under "min-cv-error" the minimizer wins, with ties broken toward larger
    lambda, then larger kappa. Under "one-se" every pair whose CV error lies
    within se_factor fold-to-fold standard errors of the minimum is
    admissible and the sparsest admissible pair wins (largest lambda, then
    largest kappa); the pick then relaxes to the smallest admissible lambda
    at that kappa whose full-data selected set is identical, so the chosen
    sparsity is attained with the least shrinkage.
    """
    pilot_alpha, pilot_beta = pilots
    z, y = res.rz, res.ry
    n, d = z.shape
    free = _restrict_mask(d, restrict)
    folds = make_folds(n, cfg.cv_folds, seed)
    lam_desc = np.sort(cfg.lambda_grid)[::-1]
    n_kap = len(cfg.kappa_grid)

    fold_mse = np.zeros((cfg.cv_folds, n_kap, lam_desc.size))
    for k in range(1, cfg.cv_folds + 1):
        va = folds == k
        tr = ~va
        ztr, ytr = z[tr], y[tr]
        zva, yva = z[va], y[va]
        scale = np.sqrt(np.mean(ztr**2, axis=0))
        for ki, kappa in enumerate(cfg.kappa_grid):
            wv = build_weights(version, pilot_alpha, pilot_beta, kappa)
            active = free & (scale > 0) & np.isfinite(wv.w)
            cols = np.flatnonzero(active)
            zs = ztr[:, cols] / scale[cols]
            gram = zs.T @ zs
            lin = zs.T @ ytr
            w_std = wv.w[cols] / scale[cols]
            path = cd_path(gram, lin, w_std, lam_desc, tol=1e-7)
            theta_orig = path / scale[cols]
            resid = yva[:, None] - zva[:, cols] @ theta_orig.T
            fold_mse[k - 1, ki] = np.mean(resid**2, axis=0)

    errors = fold_mse.mean(axis=0)
    best = errors.min()
    if cfg.selection_rule == "one-se":
        flat = np.argmin(errors)
        se = float(fold_mse.std(axis=0, ddof=1).ravel()[flat]) / np.sqrt(cfg.cv_folds)
        cutoff = best + cfg.se_factor * se
    else:
        cutoff = best + abs(best) * 1e-10 + 1e-12
    cand = np.argwhere(errors <= cutoff)
    # prefer larger lambda (lam_desc is descending), then larger kappa
    li = cand[:, 1].min()
    ki = cand[cand[:, 1] == li][:, 0].max()

    if cfg.selection_rule == "one-se":
        # least-shrinkage refinement: smallest admissible lambda at the chosen
        # kappa whose full-data selected set matches the sparsest pick
        wv = build_weights(version, pilot_alpha, pilot_beta, cfg.kappa_grid[ki])
        scale = np.sqrt(np.mean(z**2, axis=0))
        active = free & (scale > 0) & np.isfinite(wv.w)
        cols = np.flatnonzero(active)
        zs = z[:, cols] / scale[cols]
        path = cd_path(zs.T @ zs, zs.T @ y, wv.w[cols] / scale[cols], lam_desc, tol=1e-7)
        sel = path != 0.0
        admissible = errors[ki] <= cutoff
        for j in range(lam_desc.size - 1, li, -1):
            if admissible[j] and np.array_equal(sel[j], sel[li]):
                li = j
                break

    return float(lam_desc[li]), float(cfg.kappa_grid[ki])


def fit(
    res: ResidualizedData,
    version: str,
    cfg: TuningConfig | None = None,
    seed: int = 0,
    restrict: MediatorSet | None = None,
) -> MediationFit:
    """End-to-end selection and estimation on residualized data.

    Computes unpenalized pilots, builds ADP/PRD weights, tunes (lambda, kappa)
    by cross-validation (skipped for NONE), solves the penalized objective,
    and records outcome- and mediator-model residuals.
    """
    if version not in _VERSIONS:
        raise EstimatorError(f"unknown weight version '{version}'")
    n, p = res.n, res.p
    if p >= n:
        raise EstimatorError(
            "p >= n is out of scope for this estimator (fixed-dimension regime)"
        )
    alpha_hat = fit_alpha(res)
    zero_w = WeightVector(np.zeros(p + 1), "NONE", 1.0)
    pilot_theta = fit_weighted_lasso(res, zero_w, 0.0, restrict=restrict)

    if version == "NONE":
        theta_hat = pilot_theta
        lam, kappa = 0.0, float("nan")
        weights = zero_w
    else:
        if cfg is None:
            cfg = TuningConfig.default(n)
        lam, kappa = tune(
            res, version, (alpha_hat, pilot_theta[1:]), cfg, seed=seed, restrict=restrict
        )
        weights = build_weights(version, alpha_hat, pilot_theta[1:], kappa)
        theta_hat = fit_weighted_lasso(
            res, weights, lam, restrict=restrict, theta0=pilot_theta
        )

    selected = MediatorSet(tuple(int(j + 1) for j in np.flatnonzero(theta_hat[1:])), p)
    eps = res.ry - res.rz @ theta_hat
    eta = res.rm - res.rd[:, None] * alpha_hat
    return MediationFit(
        theta_hat=theta_hat,
        alpha_hat=alpha_hat,
        selected=selected,
        lam=lam,
        kappa=kappa,
        weights=weights,
        residuals_eps=eps,
        residuals_eta=eta,
        restrict=restrict,
    )
