"""Mediator selection and natural effect estimation with nonparametric
confounding control: cross-fitted nuisance ensembles, product-weighted
adaptive-lasso selection, and perturbation-bootstrap inference."""

from .data import Dataset, MediatorSet, ResidualizedData, load_csv, residualize
from .effects import EffectReport, build_report, effects
from .estimator import MediationFit, TuningConfig, WeightVector, build_weights, fit, fit_alpha
from .inference import (
    CovarianceEstimates,
    IntervalReport,
    PerturbationScheme,
    bootstrap_cis,
    delta_ci,
    perturb_fit,
    sandwich,
)
from .learners import EnsembleWeights, LearnerSpec, NuisanceFit, crossfit, default_library, make_folds
from .sim import ScenarioSpec, SimulationResult, generate, run_study

__version__ = "0.1.0"
