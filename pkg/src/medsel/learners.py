"""Cross-fitted nuisance estimation via a stacked ensemble of simple learners.

Each conditional mean (outcome, treatment propensity, and every candidate
mediator given the confounders) is estimated out-of-fold: models are trained
on the complement of each fold and predict inside it. Within every training
complement, a convex stacking weight over the learner library is found by an
inner cross-validation.

All continuous targets share the same features and fold structure, so member
fits are performed once per (fold, member) with a multi-target right-hand
side; the expensive factorizations are shared across the p+2 regressions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit

from .data import Dataset

__all__ = [
    "LearnerError",
    "LearnerSpec",
    "EnsembleWeights",
    "NuisanceFit",
    "default_library",
    "make_folds",
    "fit_learner",
    "stack",
    "crossfit",
]

_KINDS = ("constant", "linear", "poly", "kernel_ridge", "knn")


class LearnerError(ValueError):
    """Invalid learner specification or unusable training data."""


def _rng(seed: int, *coords: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(coords)))


@dataclass(frozen=True)
class LearnerSpec:
    """A library member: a kind plus its hyperparameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise LearnerError(f"unknown learner kind '{self.kind}' (choose from {_KINDS})")
        p = dict(self.params)
        if self.kind == "poly":
            if int(p.get("degree", 2)) < 1:
                raise LearnerError("poly degree must be >= 1")
        if self.kind == "kernel_ridge":
            if float(p.get("bandwidth_scale", 1.0)) <= 0 or float(p.get("ridge", 1e-3)) <= 0:
                raise LearnerError("kernel_ridge bandwidth_scale and ridge must be positive")
        if self.kind == "knn":
            k = p.get("k", 10)
            if k != "sqrt" and int(k) < 1:
                raise LearnerError("knn k must be >= 1 or 'sqrt'")
        object.__setattr__(self, "params", p)

    def label(self) -> str:
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"

    def build(self, binary: bool, rng: np.random.Generator):
        if self.kind == "constant":
            return _ConstantMean()
        if self.kind == "linear":
            return _Linear(binary=binary)
        if self.kind == "poly":
            return _Polynomial(
                degree=int(self.params.get("degree", 2)),
                interactions=bool(self.params.get("interactions", True)),
                binary=binary,
            )
        if self.kind == "kernel_ridge":
            return _GaussianKernelRidge(
                bandwidth_scale=float(self.params.get("bandwidth_scale", 1.0)),
                ridge=float(self.params.get("ridge", 1e-3)),
                max_train=int(self.params.get("max_train", 400)),
                rng=rng,
            )
        return _KNN(k=self.params.get("k", 10))


def default_library() -> list[LearnerSpec]:
    """Library spanning parametric, smooth, and local regression methods."""
    return [
        LearnerSpec("constant"),
        LearnerSpec("linear"),
        LearnerSpec("poly", {"degree": 2, "interactions": True}),
        LearnerSpec("kernel_ridge", {"bandwidth_scale": 0.5}),
        LearnerSpec("kernel_ridge", {"bandwidth_scale": 1.0}),
        LearnerSpec("kernel_ridge", {"bandwidth_scale": 2.0}),
        LearnerSpec("knn", {"k": 10}),
        LearnerSpec("knn", {"k": "sqrt"}),
    ]


# ---------------------------------------------------------------------------
# learner implementations (multi-target: Y has shape (n, t))
# ---------------------------------------------------------------------------


def _with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


class _ConstantMean:
    def fit(self, x: np.ndarray, y: np.ndarray) -> "_ConstantMean":
        self.mean_ = y.mean(axis=0)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.tile(self.mean_, (x.shape[0], 1))


class _Linear:
    def __init__(self, binary: bool = False):
        self.binary = binary

    def fit(self, x: np.ndarray, y: np.ndarray) -> "_Linear":
        a = _with_intercept(x)
        if self.binary:
            self.coef_ = _irls_logistic(a, y[:, 0])
            return self
        coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
        if rank < a.shape[1]:
            warnings.warn("singular linear design; falling back to ridge 1e-6")
            gram = a.T @ a + 1e-6 * np.eye(a.shape[1])
            coef = np.linalg.solve(gram, a.T @ y)
        self.coef_ = coef
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        a = _with_intercept(x)
        if self.binary:
            return expit(a @ self.coef_)[:, None]
        return a @ self.coef_


def _irls_logistic(a: np.ndarray, y: np.ndarray, ridge: float = 1e-4, iters: int = 30) -> np.ndarray:
    # small ridge guards against separation; targets assumed in {0, 1}
    beta = np.zeros(a.shape[1])
    for _ in range(iters):
        eta = np.clip(a @ beta, -30, 30)
        mu = expit(eta)
        w = np.maximum(mu * (1 - mu), 1e-10)
        grad = a.T @ (y - mu) - ridge * beta
        hess = (a * w[:, None]).T @ a + ridge * np.eye(a.shape[1])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta


def _poly_expand(x: np.ndarray, degree: int, interactions: bool) -> np.ndarray:
    cols = [x]
    for d in range(2, degree + 1):
        cols.append(x**d)
    if interactions and x.shape[1] > 1:
        q = x.shape[1]
        inter = [x[:, i] * x[:, j] for i in range(q) for j in range(i + 1, q)]
        cols.append(np.column_stack(inter))
    return np.hstack(cols)


class _Polynomial:
    def __init__(self, degree: int = 2, interactions: bool = True, binary: bool = False):
        self.degree = degree
        self.interactions = interactions
        self.inner = _Linear(binary=binary)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "_Polynomial":
        self.inner.fit(_poly_expand(x, self.degree, self.interactions), y)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.inner.predict(_poly_expand(x, self.degree, self.interactions))


class _GaussianKernelRidge:
    """Gaussian-kernel ridge regression with a training-size cap.

    Minimizes the average squared error plus ``ridge`` times the RKHS norm,
    i.e. coefficients solve (K + n*ridge*I) a = y. Training rows are
    subsampled to ``max_train`` to bound the factorization cost; the
    bandwidth is ``bandwidth_scale`` times the median pairwise distance.
    """

    def __init__(self, bandwidth_scale: float, ridge: float, max_train: int, rng: np.random.Generator):
        self.bandwidth_scale = bandwidth_scale
        self.ridge = ridge
        self.max_train = max_train
        self.rng = rng

    def fit(self, x: np.ndarray, y: np.ndarray) -> "_GaussianKernelRidge":
        n = x.shape[0]
        if n > self.max_train:
            keep = self.rng.choice(n, size=self.max_train, replace=False)
            keep.sort()
            x, y = x[keep], y[keep]
            n = self.max_train
        self.x_ = x
        sub = x if n <= 256 else x[:: max(1, n // 256)]
        med = np.median(pdist(sub)) if sub.shape[0] > 1 else 1.0
        self.h_ = max(self.bandwidth_scale * med, 1e-8)
        k = np.exp(-cdist(x, x, "sqeuclidean") / (2 * self.h_**2))
        k[np.diag_indices(n)] += n * self.ridge
        self.coef_ = cho_solve(cho_factor(k, lower=True, check_finite=False), y, check_finite=False)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        k = np.exp(-cdist(x, self.x_, "sqeuclidean") / (2 * self.h_**2))
        return k @ self.coef_


class _KNN:
    def __init__(self, k):
        self.k = k

    def fit(self, x: np.ndarray, y: np.ndarray) -> "_KNN":
        n = x.shape[0]
        k = int(np.ceil(np.sqrt(n))) if self.k == "sqrt" else int(self.k)
        self.k_ = min(k, n)
        self.tree_ = cKDTree(x)
        self.y_ = y
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        _, idx = self.tree_.query(x, k=self.k_)
        if self.k_ == 1:
            return self.y_[idx]
        return self.y_[idx].mean(axis=1)


class _SingleTargetPredictor:
    """Adapter exposing vector-in, vector-out prediction for one target."""

    def __init__(self, model, binary: bool):
        self.model = model
        self.binary = binary

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.model.predict(np.atleast_2d(x)))[:, 0]
        if self.binary:
            out = np.clip(out, 1e-6, 1 - 1e-6)
        return out


def fit_learner(
    spec: LearnerSpec,
    features: np.ndarray,
    target: np.ndarray,
    binary: bool = False,
    seed: int = 0,
) -> _SingleTargetPredictor:
    """Fit one library member on a single target and return a predictor."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64).ravel()
    if features.shape[0] < 2:
        raise LearnerError("at least 2 training rows are required")
    if binary and not np.all(np.isin(target, (0.0, 1.0))):
        raise LearnerError("binary targets must contain only 0/1 values")
    model = spec.build(binary=binary, rng=_rng(seed, 0)).fit(features, target[:, None])
    return _SingleTargetPredictor(model, binary)


# ---------------------------------------------------------------------------
# stacking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleWeights:
    """Convex combination over library members with per-member CV risk."""

    weights: np.ndarray
    cv_risk: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        r = np.asarray(self.cv_risk, dtype=np.float64)
        if w.shape != r.shape or w.ndim != 1:
            raise LearnerError("weights and cv_risk must be 1-D and aligned")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-8:
            raise LearnerError("ensemble weights must lie on the simplex")
        object.__setattr__(self, "weights", np.maximum(w, 0.0))
        object.__setattr__(self, "cv_risk", r)


@njit(cache=True)
def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = 0
    for i in range(v.size):
        if u[i] * (i + 1) > css[i] - 1.0:
            rho = i
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@njit(cache=True)
def _simplex_ls(gram: np.ndarray, lin: np.ndarray, lip: float, max_iter: int, tol: float) -> np.ndarray:
    """Accelerated projected gradient for min_w w'Gw - 2c'w over the simplex."""
    m = gram.shape[0]
    w = np.full(m, 1.0 / m)
    z = w.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = 2.0 * (gram @ z - lin)
        w_new = _project_simplex(z - grad / lip)
        t_new = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        z = w_new + ((t - 1.0) / t_new) * (w_new - w)
        done = True
        for j in range(m):
            if abs(w_new[j] - w[j]) >= tol:
                done = False
                break
        w = w_new
        t = t_new
        if done:
            break
    return w


def stack(cv_predictions: np.ndarray, target: np.ndarray) -> EnsembleWeights:
    """Simplex-constrained least squares over out-of-fold member predictions.

    Solved by accelerated projected gradient from the uniform start, which
    preserves symmetry between identical members.
    """
    preds = np.atleast_2d(np.asarray(cv_predictions, dtype=np.float64))
    y = np.asarray(target, dtype=np.float64).ravel()
    m, n = preds.shape
    if y.shape[0] != n:
        raise LearnerError("target length does not match prediction columns")
    risks = np.mean((preds - y) ** 2, axis=1)
    if m == 1:
        return EnsembleWeights(np.ones(1), risks)
    if np.all(preds.std(axis=1) < 1e-12) and y.std() > 1e-12:
        w = np.zeros(m)
        w[int(np.argmin(risks))] = 1.0
        return EnsembleWeights(w, risks)

    gram = np.ascontiguousarray(preds @ preds.T / n)
    lin = preds @ y / n
    lip = 2.0 * max(np.linalg.eigvalsh(gram)[-1], 1e-12)
    w = _simplex_ls(gram, lin, lip, 5000, 1e-13)
    # never do worse than the single best member
    best = int(np.argmin(risks))
    if np.mean((w @ preds - y) ** 2) > risks[best] + 1e-12:
        w = np.zeros(m)
        w[best] = 1.0
    return EnsembleWeights(w, risks)


# ---------------------------------------------------------------------------
# cross-fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuisanceFit:
    """Cross-fitted conditional-mean predictions with their fold map."""

    mu_y_hat: np.ndarray
    mu_d_hat: np.ndarray
    mu_m_hat: np.ndarray
    fold_assignment: np.ndarray
    K: int
    per_target_ensemble: dict
    clip_eps: float
    fold_ensembles: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        mu_d = np.asarray(self.mu_d_hat, dtype=np.float64)
        if np.any(mu_d < self.clip_eps - 1e-12) or np.any(mu_d > 1 - self.clip_eps + 1e-12):
            raise LearnerError("propensity predictions violate the clipping bound")


def make_folds(n: int, K: int, seed: int = 0) -> np.ndarray:
    """Deterministic random partition of {0,...,n-1} into K nearly equal folds.

    Returns fold ids in 1..K; sizes differ by at most one.
    """
    if not 2 <= K <= n:
        raise LearnerError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    perm = _rng(seed, 0xF01D).permutation(n)
    assignment = np.empty(n, dtype=np.intp)
    for k, chunk in enumerate(np.array_split(perm, K), start=1):
        assignment[chunk] = k
    return assignment


def _fit_predict(
    library: Sequence[LearnerSpec],
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    binary: bool,
    seed: int,
    coords: tuple,
) -> np.ndarray:
    """Fit every member on (x_train, y_train) and predict x_test.

    Returns an array of shape (members, n_test, targets).
    """
    out = np.empty((len(library), x_test.shape[0], y_train.shape[1]))
    for m_idx, spec in enumerate(library):
        model = spec.build(binary=binary, rng=_rng(seed, *coords, m_idx))
        pred = np.asarray(model.fit(x_train, y_train).predict(x_test), dtype=np.float64)
        if binary:
            pred = np.clip(pred, 1e-6, 1 - 1e-6)
        out[m_idx] = pred
    return out


def crossfit(
    data: Dataset,
    library: Sequence[LearnerSpec] | None = None,
    K: int = 5,
    clip_eps: float = 0.01,
    seed: int = 0,
    inner_folds: int = 5,
) -> NuisanceFit:
    """Cross-fitted stacked-ensemble predictions for Y, D, and every mediator.

    For each fold: every member is trained on the complement, stacking weights
    come from an inner cross-validation on the complement, and the weighted
    combination predicts the held-out fold. The propensity is clipped to
    [clip_eps, 1 - clip_eps].
    """
    if library is None:
        library = default_library()
    if not library:
        raise LearnerError("learner library must be nonempty")
    n, p = data.n, data.p
    x = np.ascontiguousarray(data.x) if data.q > 0 else np.zeros((n, 1))
    folds = make_folds(n, K, seed)

    cont = np.column_stack([data.y, data.m])  # shared continuous target block
    names = ["y"] + [f"m{j + 1}" for j in range(p)]
    for j, name in enumerate(names):
        if np.std(cont[:, j]) < 1e-12:
            warnings.warn(f"target '{name}' has zero variance; predictions are constant")
    if np.std(data.d) < 1e-12:
        warnings.warn("treatment has zero variance; propensity predictions are constant")

    mu_cont = np.empty((n, p + 1))
    mu_d = np.empty(n)
    fold_ens: dict[str, list[EnsembleWeights]] = {nm: [] for nm in names + ["d"]}

    for k in range(1, K + 1):
        test = np.flatnonzero(folds == k)
        train = np.flatnonzero(folds != k)
        x_tr, x_te = x[train], x[test]
        inner = make_folds(train.size, min(inner_folds, train.size), seed=_fold_seed(seed, k))

        for binary, block, block_names in (
            (False, cont[train], names),
            (True, data.d[train][:, None], ["d"]),
        ):
            oof = np.empty((len(library), train.size, block.shape[1]))
            for ik in range(1, inner.max() + 1):
                i_te = np.flatnonzero(inner == ik)
                i_tr = np.flatnonzero(inner != ik)
                oof[:, i_te, :] = _fit_predict(
                    library, x_tr[i_tr], block[i_tr], x_tr[i_te], binary, seed, (k, ik, int(binary))
                )
            full = _fit_predict(library, x_tr, block, x_te, binary, seed, (k, 0, int(binary)))
            for j, nm in enumerate(block_names):
                ew = stack(oof[:, :, j], block[:, j])
                fold_ens[nm].append(ew)
                combined = np.tensordot(ew.weights, full[:, :, j], axes=1)
                if binary:
                    mu_d[test] = combined
                else:
                    mu_cont[test, j] = combined

    per_target = {
        nm: EnsembleWeights(
            np.mean([e.weights for e in lst], axis=0)
            / np.sum(np.mean([e.weights for e in lst], axis=0)),
            np.mean([e.cv_risk for e in lst], axis=0),
        )
        for nm, lst in fold_ens.items()
    }
    return NuisanceFit(
        mu_y_hat=mu_cont[:, 0],
        mu_d_hat=np.clip(mu_d, clip_eps, 1 - clip_eps),
        mu_m_hat=mu_cont[:, 1:],
        fold_assignment=folds,
        K=K,
        per_target_ensemble=per_target,
        clip_eps=clip_eps,
        fold_ensembles=fold_ens,
    )


def _fold_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0x1FEE, k)).generate_state(1)[0])
