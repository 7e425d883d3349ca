"""Nuisance fitting and the PATE point estimators.

Conventions: ``w`` is the estimated sampling score, ``e`` the propensity
score (the constant ``r`` or a fitted logistic working model), ``m1``/``m0``
the arm-specific outcome predictions, and ``c`` the population
standardization factor (1 for trial units, (N-n)/m for cohort units).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import Estimated, PsMode, StudyData, TrueConstant
from .design import TermSpec, expand
from .errors import EmptyArm, NonFiniteWeight, NumericalError, ZeroDenominator
from .glm import LinearFit, LogisticFit, fit_logistic, fit_weighted_linear, fit_weighted_logistic


class Kind(str, enum.Enum):
    SATE = "sate"
    IPSW1 = "ipsw1"
    IPSW2 = "ipsw2"
    OR = "or"
    DR1 = "dr1"
    DR2 = "dr2"

    def __str__(self):
        return self.value

    @property
    def uses_sampling(self) -> bool:
        return self in (Kind.IPSW1, Kind.IPSW2, Kind.DR1, Kind.DR2)

    @property
    def uses_outcome(self) -> bool:
        return self in (Kind.OR, Kind.DR1, Kind.DR2)


PATE_KINDS = (Kind.IPSW1, Kind.IPSW2, Kind.OR, Kind.DR1, Kind.DR2)


class ExtremeWeightWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Fitted nuisance models with their predictions materialized over all units.

    Arrays indexed by unit cover every observed unit. ``e`` is only meaningful
    for trial units; cohort entries are filled with ``r``.
    """

    ps_mode: PsMode
    e: np.ndarray
    sampling_spec: Optional[TermSpec] = None
    gamma: Optional[LogisticFit] = None
    w: Optional[np.ndarray] = None
    Zs: Optional[np.ndarray] = None
    beta: Optional[LogisticFit] = None
    W: Optional[np.ndarray] = None
    outcome_spec: Optional[TermSpec] = None
    alpha1: Optional[LinearFit] = None
    alpha0: Optional[LinearFit] = None
    m1: Optional[np.ndarray] = None
    m0: Optional[np.ndarray] = None
    Zo: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PointEstimate:
    kind: Kind
    ps_mode: Optional[PsMode]
    value: float
    components: Dict[str, float] = field(default_factory=dict)


def fit_sampling(data: StudyData, spec: TermSpec):
    """Weighted logistic sampling-score fit on all observed units.

    Returns ``(fit, design, scores)``.
    """
    Zs = expand(spec, data, "all").values
    try:
        fit = fit_weighted_logistic(Zs, data.s.astype(float), data.unit_weights)
    except NumericalError as exc:
        exc.nuisance = "sampling"
        raise
    return fit, Zs, fit.predict(Zs)


def fit_propensity(data: StudyData, ps_mode: PsMode):
    """Returns ``(fit or None, design or None, scores over all units)``."""
    r = data.randomization_prob
    if isinstance(ps_mode, TrueConstant):
        return None, None, np.full(data.n_units, ps_mode.r)
    if not isinstance(ps_mode, Estimated):
        raise TypeError(f"unknown propensity mode {ps_mode!r}")
    W = expand(ps_mode.spec, data, "all").values
    try:
        fit = fit_logistic(W[data.trial_index], data.x.astype(float))
    except NumericalError as exc:
        exc.nuisance = "propensity"
        raise
    e = np.full(data.n_units, r)
    e[data.trial_index] = fit.predict(W[data.trial_index])
    return fit, W, e


def fit_outcomes(data: StudyData, spec: TermSpec, e: np.ndarray):
    """Arm-specific weighted least squares, weights 1/e (treated) and 1/(1-e)
    (control). Returns ``(alpha1, alpha0, design, m1, m0)``."""
    Zo = expand(spec, data, "all").values
    treated = data.trial_index[data.x == 1]
    control = data.trial_index[data.x == 0]
    y1 = data.y[data.x == 1]
    y0 = data.y[data.x == 0]
    try:
        a1 = fit_weighted_linear(Zo[treated], y1, 1.0 / e[treated])
    except NumericalError as exc:
        exc.nuisance = "outcome1"
        raise
    try:
        a0 = fit_weighted_linear(Zo[control], y0, 1.0 / (1.0 - e[control]))
    except NumericalError as exc:
        exc.nuisance = "outcome0"
        raise
    return a1, a0, Zo, a1.predict(Zo), a0.predict(Zo)


def fit_nuisances(
    data: StudyData,
    sampling_spec: Optional[TermSpec],
    ps_mode: PsMode,
    outcome_spec: Optional[TermSpec],
) -> NuisanceFit:
    """Fit every requested nuisance model. A ``None`` spec skips that model."""
    kw = {}
    if sampling_spec is not None:
        gamma, Zs, w = fit_sampling(data, sampling_spec)
        kw.update(sampling_spec=sampling_spec, gamma=gamma, Zs=Zs, w=w)
        check_extreme_weights(data, w)
    beta, W, e = fit_propensity(data, ps_mode)
    kw.update(beta=beta, W=W)
    if outcome_spec is not None:
        a1, a0, Zo, m1, m0 = fit_outcomes(data, outcome_spec, e)
        kw.update(outcome_spec=outcome_spec, alpha1=a1, alpha0=a0, Zo=Zo, m1=m1, m0=m0)
    return NuisanceFit(ps_mode=ps_mode, e=e, **kw)


def check_extreme_weights(data: StudyData, w: np.ndarray) -> bool:
    """Warn when the largest trial sampling weight exceeds 10 N / n."""
    inv = 1.0 / w[data.trial_index]
    limit = 10.0 * data.population_size / data.n
    if np.max(inv) > limit:
        warnings.warn(
            f"max inverse sampling score {np.max(inv):.4g} exceeds 10*N/n = {limit:.4g}",
            ExtremeWeightWarning,
            stacklevel=2,
        )
        return True
    return False


def sate(data: StudyData) -> PointEstimate:
    """Difference in arm means within the trial."""
    y1 = data.y[data.x == 1]
    y0 = data.y[data.x == 0]
    if y1.size == 0 or y0.size == 0:
        raise EmptyArm("a trial arm has no units")
    mu1, mu0 = float(y1.mean()), float(y0.mean())
    return PointEstimate(Kind.SATE, None, mu1 - mu0, {"mu1": mu1, "mu0": mu0})


def sate_se(data: StudyData) -> float:
    """Unpooled (Neyman) standard error of the difference in means."""
    y1 = data.y[data.x == 1]
    y0 = data.y[data.x == 0]
    v1 = y1.var(ddof=1) / y1.size if y1.size > 1 else 0.0
    v0 = y0.var(ddof=1) / y0.size if y0.size > 1 else 0.0
    return float(np.sqrt(v1 + v0))


def _arm_weights(data: StudyData, nuis: NuisanceFit, kind: Kind):
    """Inverse sampling-times-propensity weights for the treated and control
    trial units, plus the corresponding outcomes."""
    if nuis.w is None:
        raise ValueError("sampling scores were not fitted")
    t1 = data.trial_index[data.x == 1]
    t0 = data.trial_index[data.x == 0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1 = nuis.w[t1] * nuis.e[t1]
        d0 = nuis.w[t0] * (1.0 - nuis.e[t0])
        a = 1.0 / d1
        b = 1.0 / d0
    if not (np.all(d1 > 0) and np.all(d0 > 0) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteWeight("an inverse sampling/propensity weight is not finite", estimator=str(kind))
    return t1, t0, a, b


def _outcome_term(data: StudyData, nuis: NuisanceFit) -> float:
    if nuis.m1 is None:
        raise ValueError("outcome models were not fitted")
    return float(np.sum(data.unit_weights * (nuis.m1 - nuis.m0)) / data.population_size)


def _hajek(num, den, kind):
    if not den > 0:
        raise ZeroDenominator("weighted denominator is not positive", estimator=str(kind))
    return num / den


def ipsw1(data: StudyData, nuis: NuisanceFit) -> PointEstimate:
    t1, t0, a, b = _arm_weights(data, nuis, Kind.IPSW1)
    N = data.population_size
    nu1 = float(np.sum(a * data.y[data.x == 1]) / N)
    nu2 = float(np.sum(b * data.y[data.x == 0]) / N)
    return PointEstimate(Kind.IPSW1, nuis.ps_mode, nu1 - nu2, {"nu1": nu1, "nu2": nu2})


def ipsw2(data: StudyData, nuis: NuisanceFit) -> PointEstimate:
    t1, t0, a, b = _arm_weights(data, nuis, Kind.IPSW2)
    nu1 = float(_hajek(np.sum(a * data.y[data.x == 1]), np.sum(a), Kind.IPSW2))
    nu2 = float(_hajek(np.sum(b * data.y[data.x == 0]), np.sum(b), Kind.IPSW2))
    return PointEstimate(Kind.IPSW2, nuis.ps_mode, nu1 - nu2, {"nu1": nu1, "nu2": nu2})


def or_estimate(data: StudyData, nuis: NuisanceFit) -> PointEstimate:
    nu3 = _outcome_term(data, nuis)
    return PointEstimate(Kind.OR, nuis.ps_mode, nu3, {"nu3": nu3})


def dr1(data: StudyData, nuis: NuisanceFit) -> PointEstimate:
    t1, t0, a, b = _arm_weights(data, nuis, Kind.DR1)
    N = data.population_size
    nu1 = float(np.sum(a * (data.y[data.x == 1] - nuis.m1[t1])) / N)
    nu2 = float(np.sum(b * (data.y[data.x == 0] - nuis.m0[t0])) / N)
    nu3 = _outcome_term(data, nuis)
    return PointEstimate(Kind.DR1, nuis.ps_mode, nu1 - nu2 + nu3, {"nu1": nu1, "nu2": nu2, "nu3": nu3})


def dr2(data: StudyData, nuis: NuisanceFit) -> PointEstimate:
    t1, t0, a, b = _arm_weights(data, nuis, Kind.DR2)
    nu1 = float(_hajek(np.sum(a * (data.y[data.x == 1] - nuis.m1[t1])), np.sum(a), Kind.DR2))
    nu2 = float(_hajek(np.sum(b * (data.y[data.x == 0] - nuis.m0[t0])), np.sum(b), Kind.DR2))
    nu3 = _outcome_term(data, nuis)
    return PointEstimate(Kind.DR2, nuis.ps_mode, nu1 - nu2 + nu3, {"nu1": nu1, "nu2": nu2, "nu3": nu3})


_DISPATCH = {
    Kind.IPSW1: ipsw1,
    Kind.IPSW2: ipsw2,
    Kind.OR: or_estimate,
    Kind.DR1: dr1,
    Kind.DR2: dr2,
}


def estimate(kind, data: StudyData, nuis: Optional[NuisanceFit] = None) -> PointEstimate:
    kind = Kind(kind)
    if kind is Kind.SATE:
        return sate(data)
    return _DISPATCH[kind](data, nuis)
