"""Balance and positivity diagnostics for the non-nested design.

The standardized mean difference compares a (possibly weighted) trial mean
with the population mean ``sum(c z) / N`` and scales by the population SD
estimate ``s`` built from the same standardization factors ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import StudyData
from .design import Intercept, TermSpec, expand_columns
from .errors import ConstantCovariate, NumericalError

DEFAULT_THRESHOLD = 0.20
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


def population_mean(data: StudyData, column: np.ndarray) -> float:
    return float(np.sum(data.unit_weights * column) / data.population_size)


def population_sd(data: StudyData, column: np.ndarray) -> float:
    """Population SD with the finite-population correction for cohort weights.

    With weights ``c`` summing to N the factor mN / (m(N^2 - n) - (N - n)^2)
    equals V1 / (V1^2 - V2), the unbiased reliability-weight correction
    (V1 = sum c, V2 = sum c^2).
    """
    n, m, N = data.n, data.m, data.population_size
    zbar = population_mean(data, column)
    ss = float(np.sum(data.unit_weights * (column - zbar) ** 2))
    den = m * (N * N - n) - (N - n) ** 2
    if den <= 0:
        raise NumericalError(f"SD correction denominator {den:g} is not positive")
    return float(np.sqrt(max(m * N * ss / den, 0.0)))


def smd(data: StudyData, column, scores: Optional[np.ndarray] = None) -> float:
    """Standardized mean difference for one column over all units.

    ``scores=None`` gives the unweighted trial mean (pi = 1); otherwise the
    trial units are weighted by ``1 / scores``.
    """
    column = np.asarray(column, dtype=float)
    if column.shape != (data.n_units,):
        raise ValueError(f"column must have {data.n_units} entries")
    t = data.trial_index
    pi = np.ones(t.size) if scores is None else 1.0 / np.asarray(scores, dtype=float)[t]
    den = pi.sum()
    if not den > 0:
        raise NumericalError("trial weights sum to zero")
    s = population_sd(data, column)
    # relative cutoff so a column that is constant up to rounding counts as constant
    if not s > 1e-12 * max(1.0, float(np.max(np.abs(column)))):
        raise ConstantCovariate("covariate has zero population SD")
    trial_mean = float(np.sum(pi * column[t]) / den)
    return abs(trial_mean - population_mean(data, column)) / s


@dataclass(frozen=True)
class TermBalance:
    term: str
    smd_unweighted: float
    smd_weighted: float
    sd: float
    flagged: bool
    error: Optional[str] = None


@dataclass(frozen=True)
class BalanceReport:
    rows: tuple
    threshold: float = DEFAULT_THRESHOLD

    @property
    def flagged(self) -> list:
        return [r.term for r in self.rows if r.flagged]

    @property
    def errors(self) -> list:
        return [r.term for r in self.rows if r.error]

    @property
    def max_weighted(self) -> float:
        vals = [r.smd_weighted for r in self.rows if r.error is None]
        return max(vals) if vals else float("nan")

    def to_records(self) -> list:
        return [
            {
                "term": r.term,
                "smd_unweighted": r.smd_unweighted,
                "smd_weighted": r.smd_weighted,
                "sd": r.sd,
                "flagged": r.flagged,
                "error": r.error,
            }
            for r in self.rows
        ]


def balance_report(
    data: StudyData,
    nuis,
    spec: Optional[TermSpec] = None,
    threshold: float = DEFAULT_THRESHOLD,
    strict: bool = True,
) -> BalanceReport:
    """SMD before and after weighting for every non-intercept term of ``spec``.

    ``nuis`` is a fitted :class:`NuisanceFit` or an array of sampling scores
    over all units; ``spec`` defaults to the fitted sampling model. With
    ``strict=False`` a constant term yields an error row instead of raising.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    scores = getattr(nuis, "w", nuis)
    if spec is None:
        spec = nuis.sampling_spec
    if scores is None or spec is None:
        raise ValueError("sampling scores and a term specification are required")
    terms = [t for t in spec.terms if not isinstance(t, Intercept)]
    cols = expand_columns(TermSpec((Intercept(),) + tuple(terms)), data.covariate_names, data.z)[:, 1:]
    rows = []
    for j, term in enumerate(terms):
        col = cols[:, j]
        try:
            u = smd(data, col)
            w = smd(data, col, scores)
        except ConstantCovariate as exc:
            if strict:
                raise ConstantCovariate(f"term {term}: {exc}") from exc
            rows.append(TermBalance(str(term), float("nan"), float("nan"), 0.0, True, str(exc)))
            continue
        rows.append(TermBalance(str(term), u, w, population_sd(data, col), w > threshold))
    return BalanceReport(tuple(rows), threshold)


@dataclass(frozen=True)
class GroupSummary:
    counts: np.ndarray
    minimum: float
    maximum: float
    quantiles: Dict[float, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ScoreSummary:
    edges: np.ndarray
    trial: GroupSummary
    cohort: GroupSummary


def _group(values: np.ndarray, edges: np.ndarray) -> GroupSummary:
    counts, _ = np.histogram(values, bins=edges)
    q = np.quantile(values, QUANTILE_LEVELS)  # numpy's default is type-7 linear
    return GroupSummary(counts, float(values.min()), float(values.max()), dict(zip(QUANTILE_LEVELS, map(float, q))))


def score_summary(data: StudyData, scores: np.ndarray, bins: int = 20) -> ScoreSummary:
    """Histograms of the sampling scores in the trial and the cohort on shared
    bin edges spanning all observed scores."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    scores = np.asarray(scores, dtype=float)
    edges = np.histogram_bin_edges(scores, bins=bins)
    return ScoreSummary(edges, _group(scores[data.trial_index], edges), _group(scores[data.cohort_index], edges))
