"""Stacked estimating equations and sandwich variances for the PATE estimators.

Each estimator is written as the root of ``sum_{i<=N} Psi_i(theta) = 0`` over
the whole target population. The parameter vector is laid out as::

    theta = (nu block, gamma, alpha1, alpha0, beta)

where the nu block holds the estimator's summands (nu1, nu2 and/or nu3),
gamma the sampling-score coefficients, alpha1/alpha0 the outcome models and
beta the propensity working model (only when it is estimated). Blocks not
used by an estimator have length zero.

The ``N - n - m`` unobserved population members all share one constant
estimating-function value, so they enter the sums as ``count * psi_phantom``
rather than being materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, ndtri

from .core import Estimated, StudyData, TrueConstant, UnitRecord
from .design import TermSpec, expand_columns
from .errors import SingularBread
from .estimators import Kind, NuisanceFit, PointEstimate, estimate

COND_LIMIT = 1e12

_NU_NAMES = {
    Kind.IPSW1: ("nu1", "nu2"),
    Kind.IPSW2: ("nu1", "nu2"),
    Kind.OR: ("nu3",),
    Kind.DR1: ("nu1", "nu2", "nu3"),
    Kind.DR2: ("nu1", "nu2", "nu3"),
}
_NU_SIGN = {"nu1": 1.0, "nu2": -1.0, "nu3": 1.0}


@dataclass(frozen=True)
class StackLayout:
    """Block structure of the stacked parameter vector for one estimator."""

    kind: Kind
    estimated_ps: bool
    p: int
    l1: int
    l0: int
    q: int
    r: float
    cohort_weight: float
    sampling_spec: Optional[TermSpec] = None
    outcome_spec: Optional[TermSpec] = None
    propensity_spec: Optional[TermSpec] = None

    @property
    def nu_names(self) -> tuple:
        return _NU_NAMES[self.kind]

    @property
    def k(self) -> int:
        return len(self.nu_names)

    @property
    def hajek(self) -> bool:
        return self.kind in (Kind.IPSW2, Kind.DR2)

    @property
    def augmented(self) -> bool:
        return self.kind in (Kind.DR1, Kind.DR2)

    @property
    def dim(self) -> int:
        return self.k + self.p + self.l1 + self.l0 + self.q

    def _slice(self, start, length):
        return slice(start, start + length)

    @property
    def gamma(self) -> slice:
        return self._slice(self.k, self.p)

    @property
    def alpha1(self) -> slice:
        return self._slice(self.k + self.p, self.l1)

    @property
    def alpha0(self) -> slice:
        return self._slice(self.k + self.p + self.l1, self.l0)

    @property
    def beta(self) -> slice:
        return self._slice(self.k + self.p + self.l1 + self.l0, self.q)

    def nu_index(self, name: str) -> Optional[int]:
        return self.nu_names.index(name) if name in self.nu_names else None

    @property
    def contrast(self) -> np.ndarray:
        """Selects the estimator from theta: +nu1 - nu2 + nu3, zeros elsewhere."""
        c = np.zeros(self.dim)
        for j, nm in enumerate(self.nu_names):
            c[j] = _NU_SIGN[nm]
        return c


@dataclass(frozen=True, eq=False)
class StackInputs:
    """Per-unit data for evaluating Psi over the observed units.

    ``x`` and ``y`` are zero-filled for cohort units; every term using them
    carries a factor ``s``.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray
    Zs: Optional[np.ndarray]
    Zo: Optional[np.ndarray]
    W: Optional[np.ndarray]
    population_size: int
    phantom_count: int


@dataclass(frozen=True)
class SandwichResult:
    variance: float
    se: float
    A: np.ndarray
    B: np.ndarray
    condition: float
    layout: StackLayout


@dataclass(frozen=True)
class EstimateReport:
    kind: Kind
    ps_mode: str
    estimate: float
    se: float
    ci: tuple
    components: dict


def make_layout(kind, data: StudyData, nuis: NuisanceFit) -> StackLayout:
    kind = Kind(kind)
    if kind is Kind.SATE:
        raise ValueError("the SATE has no stacked estimating equations here")
    estimated = isinstance(nuis.ps_mode, Estimated)
    if kind.uses_sampling and nuis.gamma is None:
        raise ValueError(f"{kind} needs a fitted sampling model")
    if kind.uses_outcome and nuis.alpha1 is None:
        raise ValueError(f"{kind} needs fitted outcome models")
    p = len(nuis.gamma.coefficients) if nuis.gamma is not None else 0
    lo = len(nuis.alpha1.coefficients) if kind.uses_outcome else 0
    q = len(nuis.beta.coefficients) if estimated else 0
    r = nuis.ps_mode.r if isinstance(nuis.ps_mode, TrueConstant) else data.randomization_prob
    return StackLayout(
        kind=kind,
        estimated_ps=estimated,
        p=p,
        l1=lo,
        l0=lo,
        q=q,
        r=r,
        cohort_weight=data.cohort_weight,
        sampling_spec=nuis.sampling_spec if p else None,
        outcome_spec=nuis.outcome_spec if lo else None,
        propensity_spec=nuis.ps_mode.spec if estimated else None,
    )


def make_inputs(data: StudyData, nuis: NuisanceFit) -> StackInputs:
    return StackInputs(
        s=data.s.astype(float),
        x=data.full_x(),
        y=data.full_y(),
        c=data.unit_weights,
        Zs=nuis.Zs,
        Zo=nuis.Zo,
        W=nuis.W,
        population_size=data.population_size,
        phantom_count=data.phantom.count,
    )


def fitted_params(layout: StackLayout, nuis: NuisanceFit, point: PointEstimate) -> np.ndarray:
    theta = np.zeros(layout.dim)
    for j, nm in enumerate(layout.nu_names):
        theta[j] = point.components[nm]
    if layout.p:
        theta[layout.gamma] = nuis.gamma.coefficients
    if layout.l1:
        theta[layout.alpha1] = nuis.alpha1.coefficients
        theta[layout.alpha0] = nuis.alpha0.coefficients
    if layout.q:
        theta[layout.beta] = nuis.beta.coefficients
    return theta


def _unit_quantities(layout: StackLayout, inp: StackInputs, theta: np.ndarray):
    s = inp.s
    trial = s == 1.0
    w = expit(inp.Zs @ theta[layout.gamma]) if layout.p else None
    if layout.q:
        e = np.where(trial, expit(inp.W @ theta[layout.beta]), 0.5)
    else:
        e = np.full(s.shape, layout.r)
    if layout.l1:
        m1 = inp.Zo @ theta[layout.alpha1]
        m0 = inp.Zo @ theta[layout.alpha0]
    else:
        m1 = m0 = None
    return w, e, m1, m0


def _ipw(layout, inp, w, e):
    """Per-unit s*x/(w e) and s*(1-x)/(w (1-e)), zero for cohort units."""
    s, x = inp.s, inp.x
    trial = s == 1.0
    ww = np.where(trial, w, 1.0)
    a = np.where(trial, s * x / (ww * e), 0.0)
    b = np.where(trial, s * (1.0 - x) / (ww * (1.0 - e)), 0.0)
    return a, b


def _residuals(layout, inp, theta, m1, m0):
    """Row-1 and row-2 residuals multiplying the inverse weights."""
    u1 = inp.y.copy()
    u0 = inp.y.copy()
    if layout.augmented:
        u1 = u1 - m1
        u0 = u0 - m0
    if layout.hajek:
        u1 = u1 - theta[layout.nu_index("nu1")]
        u0 = u0 - theta[layout.nu_index("nu2")]
    return u1, u0


def psi_matrix(layout: StackLayout, inp: StackInputs, theta: np.ndarray) -> np.ndarray:
    """Psi evaluated at every observed unit, shape ``(units, dim)``."""
    theta = np.asarray(theta, dtype=float)
    w, e, m1, m0 = _unit_quantities(layout, inp, theta)
    s, x, y, c = inp.s, inp.x, inp.y, inp.c
    out = np.zeros((s.shape[0], layout.dim))
    if "nu1" in layout.nu_names:
        a, b = _ipw(layout, inp, w, e)
        u1, u0 = _residuals(layout, inp, theta, m1, m0)
        j1, j2 = layout.nu_index("nu1"), layout.nu_index("nu2")
        out[:, j1] = a * u1
        out[:, j2] = b * u0
        if not layout.hajek:
            out[:, j1] -= theta[j1]
            out[:, j2] -= theta[j2]
    if "nu3" in layout.nu_names:
        j3 = layout.nu_index("nu3")
        out[:, j3] = c * (m1 - m0) - theta[j3]
    if layout.p:
        out[:, layout.gamma] = (c * (s - w))[:, None] * inp.Zs
    if layout.l1:
        f1 = s * x / e
        f0 = s * (1.0 - x) / (1.0 - e)
        out[:, layout.alpha1] = (f1 * (y - m1))[:, None] * inp.Zo
        out[:, layout.alpha0] = (f0 * (y - m0))[:, None] * inp.Zo
    if layout.q:
        out[:, layout.beta] = (s * (x - e))[:, None] * inp.W
    return out


def phantom_psi(layout: StackLayout, theta: np.ndarray) -> np.ndarray:
    """Psi of an unobserved population member: only bare -nu terms survive."""
    out = np.zeros(layout.dim)
    names = ("nu3",) if layout.hajek else ("nu1", "nu2", "nu3")
    for nm in names:
        j = layout.nu_index(nm)
        if j is not None:
            out[j] = -theta[j]
    return out


def phantom_jacobian(layout: StackLayout) -> np.ndarray:
    out = np.zeros((layout.dim, layout.dim))
    names = ("nu3",) if layout.hajek else ("nu1", "nu2", "nu3")
    for nm in names:
        j = layout.nu_index(nm)
        if j is not None:
            out[j, j] = -1.0
    return out


def psi_unit(layout: StackLayout, unit: UnitRecord, theta: np.ndarray, names) -> np.ndarray:
    """Psi for a single observed unit; ``names`` orders the covariates."""
    z = np.array([[unit.z[nm] for nm in names]], dtype=float)

    def design(spec):
        return expand_columns(spec, names, z) if spec is not None else None

    inp = StackInputs(
        s=np.array([float(unit.s)]),
        x=np.array([float(unit.x or 0)]),
        y=np.array([float(unit.y or 0.0)]),
        c=np.array([1.0 if unit.s == 1 else layout.cohort_weight]),
        Zs=design(layout.sampling_spec),
        Zo=design(layout.outcome_spec),
        W=design(layout.propensity_spec),
        population_size=1,
        phantom_count=0,
    )
    return psi_matrix(layout, inp, theta)[0]


def estimating_sum(layout: StackLayout, inp: StackInputs, theta: np.ndarray) -> np.ndarray:
    """``(1/N) [sum_observed Psi_i + count * Psi_phantom]``."""
    total = psi_matrix(layout, inp, theta).sum(axis=0)
    total += inp.phantom_count * phantom_psi(layout, theta)
    return total / inp.population_size


def bread(layout: StackLayout, inp: StackInputs, theta: np.ndarray) -> np.ndarray:
    """Analytic ``A = (1/N) sum_i dPsi_i / dtheta'`` (phantom members included)."""
    theta = np.asarray(theta, dtype=float)
    N = inp.population_size
    w, e, m1, m0 = _unit_quantities(layout, inp, theta)
    s, x, y, c = inp.s, inp.x, inp.y, inp.c
    A = np.zeros((layout.dim, layout.dim))
    g, a1s, a0s, bs = layout.gamma, layout.alpha1, layout.alpha0, layout.beta

    if "nu1" in layout.nu_names:
        a, b = _ipw(layout, inp, w, e)
        u1, u0 = _residuals(layout, inp, theta, m1, m0)
        j1, j2 = layout.nu_index("nu1"), layout.nu_index("nu2")
        if layout.hajek:
            A[j1, j1] = -a.sum()
            A[j2, j2] = -b.sum()
        else:
            A[j1, j1] = A[j2, j2] = -float(N)
        if layout.p:
            A[j1, g] = -((a * u1 * (1.0 - w)) @ inp.Zs)
            A[j2, g] = -((b * u0 * (1.0 - w)) @ inp.Zs)
        if layout.augmented:
            A[j1, a1s] = -(a @ inp.Zo)
            A[j2, a0s] = -(b @ inp.Zo)
        if layout.q:
            A[j1, bs] = -((a * u1 * (1.0 - e)) @ inp.W)
            A[j2, bs] = (b * u0 * e) @ inp.W
    if "nu3" in layout.nu_names:
        j3 = layout.nu_index("nu3")
        A[j3, j3] = -float(N)
        A[j3, a1s] = c @ inp.Zo
        A[j3, a0s] = -(c @ inp.Zo)
    if layout.p:
        A[g, g] = -((inp.Zs * (c * w * (1.0 - w))[:, None]).T @ inp.Zs)
    if layout.l1:
        f1 = s * x / e
        f0 = s * (1.0 - x) / (1.0 - e)
        A[a1s, a1s] = -((inp.Zo * f1[:, None]).T @ inp.Zo)
        A[a0s, a0s] = -((inp.Zo * f0[:, None]).T @ inp.Zo)
        if layout.q:
            A[a1s, bs] = -((inp.Zo * (f1 * (y - m1) * (1.0 - e))[:, None]).T @ inp.W)
            A[a0s, bs] = (inp.Zo * (f0 * (y - m0) * e)[:, None]).T @ inp.W
    if layout.q:
        A[bs, bs] = -((inp.W * (s * e * (1.0 - e))[:, None]).T @ inp.W)
    return A / N


def numeric_bread(layout: StackLayout, inp: StackInputs, theta: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`estimating_sum`."""
    theta = np.asarray(theta, dtype=float)
    A = np.zeros((layout.dim, layout.dim))
    for j in range(layout.dim):
        h = rel_step * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        A[:, j] = (estimating_sum(layout, inp, tp) - estimating_sum(layout, inp, tm)) / (2 * h)
    return A


def meat(layout: StackLayout, inp: StackInputs, theta: np.ndarray) -> np.ndarray:
    """``B = (1/N) [sum_observed Psi Psi' + count * Psi_ph Psi_ph']``."""
    P = psi_matrix(layout, inp, theta)
    ph = phantom_psi(layout, theta)
    B = P.T @ P + inp.phantom_count * np.outer(ph, ph)
    return B / inp.population_size


def condition_estimate(A: np.ndarray) -> float:
    """2-norm condition number after row and column equilibration."""
    r = np.max(np.abs(A), axis=1)
    A1 = A / np.where(r > 0, r, 1.0)[:, None]
    col = np.max(np.abs(A1), axis=0)
    A2 = A1 / np.where(col > 0, col, 1.0)[None, :]
    sv = np.linalg.svd(A2, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def sandwich_from_parts(layout: StackLayout, inp: StackInputs, theta: np.ndarray) -> SandwichResult:
    A = bread(layout, inp, theta)
    B = meat(layout, inp, theta)
    cond = condition_estimate(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularBread(f"bread condition estimate {cond:.3g} exceeds {COND_LIMIT:g}", estimator=str(layout.kind))
    v = np.linalg.solve(A.T, layout.contrast)
    var = float(v @ B @ v) / inp.population_size
    var = max(var, 0.0)
    return SandwichResult(var, float(np.sqrt(var)), A, B, cond, layout)


def sandwich_variance(kind, data: StudyData, nuis: NuisanceFit, point: Optional[PointEstimate] = None) -> SandwichResult:
    """Sandwich variance ``c' A^-1 B A^-T c / N`` at the fitted parameters."""
    kind = Kind(kind)
    if point is None:
        point = estimate(kind, data, nuis)
    layout = make_layout(kind, data, nuis)
    inp = make_inputs(data, nuis)
    theta = fitted_params(layout, nuis, point)
    return sandwich_from_parts(layout, inp, theta)


def wald_ci(point: float, se: float, level: float = 0.95) -> tuple:
    if se < 0:
        raise ValueError("standard error must be non-negative")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = float(ndtri(0.5 * (1.0 + level)))
    return (point - z * se, point + z * se)


def report(kind, data: StudyData, nuis: NuisanceFit, level: float = 0.95) -> EstimateReport:
    """Point estimate, sandwich standard error and Wald interval."""
    kind = Kind(kind)
    point = estimate(kind, data, nuis)
    res = sandwich_variance(kind, data, nuis, point)
    return EstimateReport(
        kind,
        nuis.ps_mode.label,
        point.value,
        res.se,
        wald_ci(point.value, res.se, level),
        dict(point.components),
    )
