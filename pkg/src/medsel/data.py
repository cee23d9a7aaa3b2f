"""Observed-data containers, mediator index sets, and residualized views.

The observed data consist of a binary treatment, a block of confounders, a
block of candidate mediators, and a continuous outcome. All downstream
estimation works on the residualized (partialled-out) version of these
variables, produced by subtracting cross-fitted conditional-mean predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "Dataset",
    "MediatorSet",
    "ResidualizedData",
    "load_csv",
    "residualize",
]


class DataError(ValueError):
    """Input data violate a structural requirement (missing values, bad roles...)."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.asfortranarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Validated observations: treatment, confounders, candidate mediators, outcome.

    Immutable after construction; arrays are stored as read-only float64.
    """

    d: np.ndarray
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    x_names: tuple[str, ...] = ()
    m_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        m = np.atleast_2d(np.asarray(self.m, dtype=np.float64))
        n = d.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        if y.shape[0] != n or x.shape[0] != n or m.shape[0] != n:
            raise DataError(
                f"inconsistent row counts: d={n}, y={y.shape[0]}, "
                f"x={x.shape[0]}, m={m.shape[0]}"
            )
        for name, arr in (("d", d), ("x", x), ("m", m), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in '{name}'")
        if not np.all((d == 0.0) | (d == 1.0)):
            raise DataError("non-binary treatment: d must contain only 0/1 values")
        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        m_names = tuple(self.m_names) or tuple(f"m{j + 1}" for j in range(m.shape[1]))
        if len(x_names) != x.shape[1] or len(m_names) != m.shape[1]:
            raise DataError("column name counts do not match matrix dimensions")
        d = d.copy()
        d.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "m", _freeze(m))
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "m_names", m_names)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.m.shape[1]

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, q={self.q}, p={self.p})"


@dataclass(frozen=True)
class MediatorSet:
    """A sorted, duplicate-free subset of the candidate-mediator indices {1,...,p}."""

    indices: tuple[int, ...]
    p: int

    def __post_init__(self) -> None:
        idx = tuple(sorted(set(int(j) for j in self.indices)))
        if self.p < 0:
            raise DataError("ambient dimension p must be nonnegative")
        if idx and (idx[0] < 1 or idx[-1] > self.p):
            raise DataError(f"mediator indices must lie in 1..{self.p}, got {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, p: int) -> "MediatorSet":
        return cls(tuple(range(1, p + 1)), p)

    @classmethod
    def empty(cls, p: int) -> "MediatorSet":
        return cls((), p)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, j: int) -> bool:
        return j in set(self.indices)

    def __le__(self, other: "MediatorSet") -> bool:
        return set(self.indices) <= set(other.indices)

    def complement(self) -> "MediatorSet":
        keep = sorted(set(range(1, self.p + 1)) - set(self.indices))
        return MediatorSet(tuple(keep), self.p)

    def to_z_index(self) -> tuple[int, ...]:
        """Map mediator indices into indices over Z = (D, M), 1-based.

        The treatment always occupies position 1 and is always included.
        """
        return (1,) + tuple(1 + j for j in self.indices)

    def z_cols(self) -> np.ndarray:
        """0-based column positions into an [rd | rm] matrix."""
        return np.array([0] + [j for j in self.indices], dtype=np.intp)

    def m_cols(self) -> np.ndarray:
        """0-based column positions into the mediator matrix."""
        return np.array([j - 1 for j in self.indices], dtype=np.intp)


def to_z_index(ms: MediatorSet) -> tuple[int, ...]:
    """Functional alias for :meth:`MediatorSet.to_z_index`."""
    return ms.to_z_index()


@dataclass(frozen=True)
class ResidualizedData:
    """Robinson residuals: outcome, treatment, and mediators minus their
    cross-fitted conditional means given the confounders."""

    ry: np.ndarray
    rd: np.ndarray
    rm: np.ndarray
    rz: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        ry = np.asarray(self.ry, dtype=np.float64).ravel()
        rd = np.asarray(self.rd, dtype=np.float64).ravel()
        rm = np.atleast_2d(np.asarray(self.rm, dtype=np.float64))
        n = ry.shape[0]
        if rd.shape[0] != n or rm.shape[0] != n:
            raise DataError("residual dimension mismatch")
        rz = np.column_stack([rd, rm])
        ry = ry.copy()
        ry.setflags(write=False)
        rd = rd.copy()
        rd.setflags(write=False)
        object.__setattr__(self, "ry", ry)
        object.__setattr__(self, "rd", rd)
        object.__setattr__(self, "rm", _freeze(rm))
        object.__setattr__(self, "rz", _freeze(rz))

    @property
    def n(self) -> int:
        return self.ry.shape[0]

    @property
    def p(self) -> int:
        return self.rm.shape[1]


def residualize(data: Dataset, fit) -> ResidualizedData:
    """Subtract cross-fitted conditional means from (Y, D, M).

    ``fit`` is any object exposing ``mu_y_hat``, ``mu_d_hat`` (length-n vectors)
    and ``mu_m_hat`` (an n-by-p matrix) aligned with ``data`` rows.
    """
    mu_y = np.asarray(fit.mu_y_hat, dtype=np.float64).ravel()
    mu_d = np.asarray(fit.mu_d_hat, dtype=np.float64).ravel()
    mu_m = np.atleast_2d(np.asarray(fit.mu_m_hat, dtype=np.float64))
    if mu_y.shape[0] != data.n or mu_d.shape[0] != data.n:
        raise DataError("nuisance predictions do not align with data rows")
    if mu_m.shape != (data.n, data.p):
        raise DataError(
            f"mediator predictions have shape {mu_m.shape}, expected {(data.n, data.p)}"
        )
    return ResidualizedData(
        ry=data.y - mu_y,
        rd=data.d - mu_d,
        rm=data.m - mu_m,
    )


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return list(value)


def load_csv(path: str | Path, roles: Mapping[str, Sequence[str] | str]) -> Dataset:
    """Read a CSV file and assemble a :class:`Dataset` from explicit column roles.

    ``roles`` must map 'treatment' and 'outcome' to single column names, and
    'mediators' (at least one) and optionally 'confounders' to lists of names.
    Rows with missing values in any mapped column are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    treatment = _as_list(roles.get("treatment"))
    outcome = _as_list(roles.get("outcome"))
    mediators = _as_list(roles.get("mediators"))
    confounders = _as_list(roles.get("confounders"))
    if len(treatment) != 1 or len(outcome) != 1:
        raise DataError("roles must assign exactly one treatment and one outcome column")
    if not mediators:
        raise DataError("roles must assign at least one mediator column")
    mapped = treatment + outcome + mediators + confounders
    if len(set(mapped)) != len(mapped):
        raise DataError(f"duplicate role assignment among columns: {mapped}")

    df = pd.read_csv(path)
    missing_cols = [c for c in mapped if c not in df.columns]
    if missing_cols:
        raise DataError(f"columns not found in {path.name}: {missing_cols}")
    sub = df[mapped]
    bad = sub.isna().any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"missing value in row {row + 2} of {path.name} (1-based, incl. header)")

    d_raw = sub[treatment[0]].to_numpy()
    if not np.all(np.isin(d_raw, (0, 1))):
        raise DataError(f"non-binary treatment column '{treatment[0]}'")
    return Dataset(
        d=d_raw.astype(np.float64),
        x=sub[confounders].to_numpy(dtype=np.float64)
        if confounders
        else np.zeros((len(sub), 0)),
        m=sub[mediators].to_numpy(dtype=np.float64),
        y=sub[outcome[0]].to_numpy(dtype=np.float64),
        x_names=tuple(confounders),
        m_names=tuple(mediators),
    )
