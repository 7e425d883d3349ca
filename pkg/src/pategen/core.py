"""Data model for a non-nested trial + cohort study.

Every stored record is an observed unit (in the trial or in the cohort).
The remaining ``N - n - m`` members of the target population are never
materialized; they are represented by a :class:`PhantomBlock` count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import (
    BadPopulationSize,
    EmptyArm,
    InconsistentCovariates,
    NonFiniteValue,
    ValidationError,
)


@dataclass(frozen=True)
class UnitRecord:
    """One observed individual.

    ``x`` and ``y`` are present exactly for trial participants (``s == 1``).
    """

    s: int
    z: Mapping[str, float]
    x: Optional[int] = None
    y: Optional[float] = None

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValidationError(f"s must be 0 or 1, got {self.s!r}")
        if self.s == 1:
            if self.x not in (0, 1):
                raise ValidationError(f"trial unit needs x in {{0,1}}, got {self.x!r}")
            if self.y is None or not math.isfinite(self.y):
                raise NonFiniteValue(f"trial unit needs a finite outcome, got {self.y!r}")
        elif self.x is not None or self.y is not None:
            raise ValidationError("cohort unit must not carry treatment or outcome")
        for name, v in self.z.items():
            if not math.isfinite(v):
                raise NonFiniteValue(f"covariate {name!r} is not finite: {v!r}")


@dataclass(frozen=True)
class PhantomBlock:
    """The unobserved population members, kept only as a count."""

    count: int


@dataclass(frozen=True)
class TrueConstant:
    """Use the known randomization probability as the propensity score."""

    r: float

    @property
    def label(self) -> str:
        return "true"


@dataclass(frozen=True)
class Estimated:
    """Estimate the propensity score with a logistic working model."""

    spec: "TermSpec"  # noqa: F821 - defined in design.py
    name: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or str(self.spec)


PsMode = Union[TrueConstant, Estimated]


@dataclass(frozen=True, eq=False)
class StudyData:
    """Combined trial and cohort sample plus the target population size.

    Columnar storage: ``z`` has one row per observed unit in input order,
    ``s`` flags trial membership, and ``x``/``y`` hold treatment and outcome
    for the trial units only (in their input order). Cohort units have no
    treatment or outcome entries at all.
    """

    covariate_names: tuple
    z: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    population_size: int
    randomization_prob: float = 0.5
    allow_nested: bool = False
    trial_index: np.ndarray = field(init=False, repr=False)
    cohort_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        s = np.asarray(self.s).astype(np.int8)
        x = np.asarray(self.x).astype(np.int8)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for arr in (z, s, x, y):
            arr.setflags(write=False)
        object.__setattr__(self, "trial_index", np.flatnonzero(s == 1))
        object.__setattr__(self, "cohort_index", np.flatnonzero(s == 0))
        self._check()

    def _check(self):
        k = len(self.covariate_names)
        if len(set(self.covariate_names)) != k:
            raise InconsistentCovariates("duplicate covariate names")
        if self.z.ndim != 2 or self.z.shape[1] != k or self.z.shape[0] != self.s.shape[0]:
            raise ValidationError("covariate matrix shape does not match units/names")
        if not np.all((self.s == 0) | (self.s == 1)):
            raise ValidationError("s must be 0/1")
        n, m = self.n, self.m
        if self.x.shape != (n,) or self.y.shape != (n,):
            raise ValidationError("x and y must have one entry per trial unit")
        if not np.all(np.isfinite(self.z)):
            raise NonFiniteValue("non-finite covariate value")
        if not np.all(np.isfinite(self.y)):
            raise NonFiniteValue("non-finite outcome value")
        if not np.all((self.x == 0) | (self.x == 1)):
            raise ValidationError("x must be 0/1")
        if n < 2:
            raise EmptyArm(f"trial has {n} units; need at least 2")
        n1 = int(self.x.sum())
        if n1 == 0 or n1 == n:
            raise EmptyArm("a trial arm has no units")
        if m < 1:
            raise ValidationError("cohort is empty")
        if not 0.0 < self.randomization_prob < 1.0:
            raise ValidationError("randomization probability must lie in (0, 1)")
        N = self.population_size
        if int(N) != N or N <= 0:
            raise BadPopulationSize(f"population size must be a positive integer, got {N!r}")
        if N < n + m or (N == n + m and not self.allow_nested):
            raise BadPopulationSize(
                f"population size N={N} must exceed n+m={n + m}"
                + ("" if N < n + m else " (set allow_nested to permit equality)")
            )

    @classmethod
    def from_arrays(
        cls,
        names: Sequence[str],
        z_trial: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        z_cohort: np.ndarray,
        population_size: int,
        randomization_prob: float = 0.5,
        allow_nested: bool = False,
    ) -> "StudyData":
        """Trial units first, then cohort units."""
        z_trial, z_cohort = np.asarray(z_trial, dtype=float), np.asarray(z_cohort, dtype=float)
        # 1-d input is one covariate per unit; 2-d input (possibly zero-width) is kept
        if z_trial.ndim == 1:
            z_trial = z_trial.reshape(-1, len(names))
        if z_cohort.ndim == 1:
            z_cohort = z_cohort.reshape(-1, len(names))
        s = np.concatenate([np.ones(len(z_trial), np.int8), np.zeros(len(z_cohort), np.int8)])
        return cls(
            tuple(names),
            np.vstack([z_trial, z_cohort]),
            s,
            x,
            y,
            int(population_size),
            randomization_prob,
            allow_nested,
        )

    @property
    def n(self) -> int:
        return int(self.trial_index.shape[0])

    @property
    def m(self) -> int:
        return int(self.cohort_index.shape[0])

    @property
    def n_units(self) -> int:
        return int(self.s.shape[0])

    @property
    def cohort_weight(self) -> float:
        """Inclusion weight (N - n) / m carried by each cohort unit."""
        return (self.population_size - self.n) / self.m

    @property
    def phantom(self) -> PhantomBlock:
        return PhantomBlock(self.population_size - self.n - self.m)

    @property
    def unit_weights(self) -> np.ndarray:
        """Per-unit inclusion weight: 1 for trial units, (N-n)/m for cohort units.

        The same numbers serve as the population standardization factor of the
        outcome-regression term.
        """
        return np.where(self.s == 1, 1.0, self.cohort_weight)

    def covariate(self, name: str) -> np.ndarray:
        return self.z[:, self.covariate_names.index(name)]

    def full_x(self) -> np.ndarray:
        """Treatment over all units, 0 for cohort units (masked by s downstream)."""
        out = np.zeros(self.n_units)
        out[self.trial_index] = self.x
        return out

    def full_y(self) -> np.ndarray:
        out = np.zeros(self.n_units)
        out[self.trial_index] = self.y
        return out

    def records(self) -> Iterator[UnitRecord]:
        t = 0
        for i in range(self.n_units):
            zi = dict(zip(self.covariate_names, self.z[i].tolist()))
            if self.s[i] == 1:
                yield UnitRecord(1, zi, int(self.x[t]), float(self.y[t]))
                t += 1
            else:
                yield UnitRecord(0, zi)


def validate(
    records: Iterable[UnitRecord],
    population_size: int,
    randomization_prob: float = 0.5,
    allow_nested: bool = False,
) -> StudyData:
    """Build a :class:`StudyData` from unit records, checking every invariant."""
    records = list(records)
    if not records:
        raise ValidationError("no records")
    names = tuple(records[0].z.keys())
    name_set = set(names)
    for rec in records:
        if set(rec.z.keys()) != name_set:
            raise InconsistentCovariates(
                f"covariate names differ: {sorted(name_set)} vs {sorted(rec.z.keys())}"
            )
    z = np.array([[rec.z[k] for k in names] for rec in records], dtype=float).reshape(
        len(records), len(names)
    )
    s = np.array([rec.s for rec in records], dtype=np.int8)
    x = np.array([rec.x for rec in records if rec.s == 1], dtype=np.int8)
    y = np.array([rec.y for rec in records if rec.s == 1], dtype=float)
    return StudyData(names, z, s, x, y, population_size, randomization_prob, allow_nested)
