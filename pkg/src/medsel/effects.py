"""Natural effect assembly and report construction.

The direct effect is the fitted treatment coefficient; the indirect effect is
the dot product of the treatment-mediator slopes with the outcome-model
mediator coefficients. Coordinates outside the selected set carry exact-zero
outcome coefficients, so the full-vector dot product equals the selected-set
sum by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import MediatorSet
from .estimator import MediationFit
from .inference import IntervalReport

__all__ = ["EffectReport", "effects", "build_report"]


def effects(fit: MediationFit) -> tuple[float, float]:
    """Point estimates (direct, indirect) from a completed fit."""
    return fit.gamma_hat, float(fit.alpha_hat @ fit.beta_hat)


@dataclass(frozen=True)
class EffectReport:
    """Effect estimates, intervals by method, and a per-mediator decomposition."""

    nde: dict
    nie: dict
    selected: MediatorSet
    per_mediator: tuple
    model_size: int
    tuning: dict

    @property
    def nde_estimate(self) -> float:
        return next(iter(self.nde.values())).estimate

    @property
    def nie_estimate(self) -> float:
        return next(iter(self.nie.values())).estimate

    def as_dict(self) -> dict:
        def iv(r: IntervalReport) -> dict:
            return {
                "estimate": r.estimate,
                "lower": r.lower,
                "upper": r.upper,
                "level": r.level,
                "method": r.method,
            }

        return {
            "nde": {k: iv(v) for k, v in self.nde.items()},
            "nie": {k: iv(v) for k, v in self.nie.items()},
            "selected": list(self.selected.indices),
            "model_size": self.model_size,
            "per_mediator": [
                {
                    "index": j,
                    "name": name,
                    "alpha": a,
                    "beta": b,
                    "contribution": ab,
                }
                for (j, name, a, b, ab) in self.per_mediator
            ],
            "tuning": self.tuning,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, **kwargs)

    def to_text(self) -> str:
        lines = ["Natural effect estimates", "=" * 60]
        for label, intervals in (("NDE", self.nde), ("NIE", self.nie)):
            for method, r in intervals.items():
                lines.append(
                    f"{label:4s} {r.estimate: .4f}  "
                    f"[{r.lower: .4f}, {r.upper: .4f}]  ({method}, {r.level:.0%})"
                )
        lines.append("")
        lines.append(
            f"Selected mediators ({self.model_size}): "
            + (", ".join(str(j) for j in self.selected.indices) or "none")
        )
        lines.append("")
        lines.append(f"{'idx':>4s} {'name':<16s} {'alpha':>10s} {'beta':>10s} {'contrib':>10s}")
        for j, name, a, b, ab in self.per_mediator:
            lines.append(f"{j:>4d} {name:<16s} {a:>10.4f} {b:>10.4f} {ab:>10.4f}")
        lines.append("")
        lines.append(
            "tuning: "
            + ", ".join(f"{k}={v}" for k, v in sorted(self.tuning.items(), key=str))
        )
        return "\n".join(lines)


def build_report(
    fit: MediationFit,
    intervals: dict,
    names: Sequence[str] | None = None,
) -> EffectReport:
    """Assemble an :class:`EffectReport`.

    ``intervals`` maps method labels ('perturbation-bootstrap',
    'delta-method') to (nde_interval, nie_interval) pairs. The per-mediator
    decomposition is sorted by absolute contribution, descending.
    """
    p = fit.p
    names = list(names) if names is not None else [f"m{j + 1}" for j in range(p)]
    if len(names) != p:
        raise ValueError(f"expected {p} mediator names, got {len(names)}")
    contrib = fit.alpha_hat * fit.beta_hat
    order = np.argsort(-np.abs(contrib), kind="stable")
    per_mediator = tuple(
        (int(j + 1), names[j], float(fit.alpha_hat[j]), float(fit.beta_hat[j]), float(contrib[j]))
        for j in order
    )
    nde = {method: pair[0] for method, pair in intervals.items()}
    nie = {method: pair[1] for method, pair in intervals.items()}
    return EffectReport(
        nde=nde,
        nie=nie,
        selected=fit.selected,
        per_mediator=per_mediator,
        model_size=len(fit.selected),
        tuning={
            "lambda": fit.lam,
            "kappa": fit.kappa,
            "weights_version": fit.weights.version,
        },
    )
