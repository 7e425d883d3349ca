"""Nuisance model solvers: weighted logistic MLE (Newton/IRLS) and weighted
least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .design import DesignMatrix
from .errors import NotConverged, SingularSystem

TOL_SCORE = 1e-10
MAX_ITER = 100
COEF_CAP = 30.0
PROB_CLAMP = 1e-12
# Reciprocal condition floor for the column-equilibrated Hessian / R factor.
RCOND_FLOOR = 1e-13
# Relative Newton step size required, in addition to the score test, to stop.
STEP_TOL = 1e-6


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_score_norm: float

    def predict(self, X) -> np.ndarray:
        return expit(_values(X) @ self.coefficients)


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray

    def predict(self, X) -> np.ndarray:
        return _values(X) @ self.coefficients


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def _check_dims(X, y, weights):
    if X.ndim != 2:
        raise ValueError("design matrix must be 2-d")
    if y.shape != (X.shape[0],) or weights.shape != (X.shape[0],):
        raise ValueError(
            f"dimension mismatch: X has {X.shape[0]} rows, y {y.shape}, weights {weights.shape}"
        )
    if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be positive and finite")


def score_scale(X: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-coordinate normalizer for score sums: total weight times column size.

    Scores are compared against the tolerance after this normalization so the
    convergence test is unaffected by the number of units, the overall weight
    level, and the units of each regressor.
    """
    colmax = np.max(np.abs(X), axis=0) if X.shape[0] else np.ones(X.shape[1])
    return weights.sum() * np.maximum(1.0, colmax)


def logistic_score(X, y, weights, coef) -> np.ndarray:
    X = _values(X)
    p = expit(X @ coef)
    return X.T @ (weights * (y - p))


def _loglik(eta, y, weights):
    p = np.clip(expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.sum(weights * (y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def _spd_solve(H, g):
    """Solve H d = g for symmetric positive definite H with Jacobi scaling."""
    d = np.sqrt(np.diag(H))
    if not np.all(d > 0) or not np.all(np.isfinite(H)):
        raise SingularSystem("information matrix has a zero or non-finite diagonal")
    Hs = H / np.outer(d, d)
    try:
        c, low = linalg.cho_factor(Hs, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("information matrix is not positive definite") from exc
    diag = np.abs(np.diag(c))
    if diag.min() ** 2 < RCOND_FLOOR * diag.max() ** 2:
        raise SingularSystem("information matrix is numerically singular (collinear regressors?)")
    return linalg.cho_solve((c, low), g / d, check_finite=False) / d


def fit_weighted_logistic(
    X,
    y,
    weights,
    *,
    tol: float = TOL_SCORE,
    max_iter: int = MAX_ITER,
    coef_cap: float = COEF_CAP,
    strict: bool = True,
) -> LogisticFit:
    """Weighted logistic MLE by damped Newton iterations.

    Solves ``sum_i weight_i (y_i - expit(x_i' b)) x_i = 0``. The step is halved
    while the weighted log-likelihood decreases. Raises :class:`NotConverged`
    when the normalized score does not reach ``tol`` within ``max_iter`` steps
    or a coefficient exceeds ``coef_cap`` (separation); ``strict=False``
    returns the unconverged fit instead.
    """
    X = _values(X)
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_dims(X, y, weights)
    scale = score_scale(X, weights)

    coef = np.zeros(X.shape[1])
    ones = np.flatnonzero(np.all(X == 1.0, axis=0))
    if ones.size:
        ybar = np.clip(np.sum(weights * y) / weights.sum(), 1e-8, 1 - 1e-8)
        coef[ones[0]] = np.log(ybar / (1 - ybar))

    eta = X @ coef
    ll = _loglik(eta, y, weights)
    norm = np.inf
    it = 0
    converged = False
    separated = False
    while True:
        p = expit(eta)
        g = X.T @ (weights * (y - p))
        norm = float(np.max(np.abs(g) / scale))
        if it >= max_iter:
            break
        H = (X * (weights * p * (1.0 - p))[:, None]).T @ X
        step = _spd_solve(H, g)
        if norm < tol and np.max(np.abs(step)) <= STEP_TOL * (1.0 + np.max(np.abs(coef))):
            # The normalized score test alone can pass while the coefficients
            # are off by ~tol * scale / information (rare outcomes, large
            # weights), or while they drift off under separation, where Newton
            # steps stay O(1). Requiring a small step excludes both; taking it
            # (quadratic convergence) brings the coefficients to rounding level.
            cand = coef + step
            g_c = X.T @ (weights * (y - expit(X @ cand)))
            norm_c = float(np.max(np.abs(g_c) / scale))
            if norm_c <= norm:
                coef, norm = cand, norm_c
                it += 1
            converged = True
            break
        t = 1.0
        while True:
            cand = coef + t * step
            eta_c = X @ cand
            ll_c = _loglik(eta_c, y, weights)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 2.0**-30:
                break
            t *= 0.5
        coef, eta, ll = cand, eta_c, ll_c
        it += 1
        if np.max(np.abs(coef)) > coef_cap:
            separated = True
            break

    fit = LogisticFit(coef, converged, it, norm)
    if strict and not converged:
        if separated:
            raise NotConverged(
                f"coefficient magnitude exceeded {coef_cap} (separation?)", fit=fit
            )
        raise NotConverged(
            f"score norm {norm:.3g} above {tol:g} after {it} iterations", fit=fit
        )
    return fit


def fit_logistic(X, y, **kw) -> LogisticFit:
    """Unweighted logistic MLE."""
    y = np.asarray(y, dtype=float)
    return fit_weighted_logistic(X, y, np.ones_like(y), **kw)


def fit_weighted_linear(X, y, weights) -> LinearFit:
    """Weighted least squares through a QR factorization of ``sqrt(w) X``."""
    X = _values(X)
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_dims(X, y, weights)
    if X.shape[0] < X.shape[1]:
        raise SingularSystem(f"{X.shape[0]} rows cannot identify {X.shape[1]} coefficients")
    sw = np.sqrt(weights)
    Xw = X * sw[:, None]
    colnorm = np.linalg.norm(Xw, axis=0)
    if not np.all(colnorm > 0):
        raise SingularSystem("design has an all-zero column")
    q, r = np.linalg.qr(Xw / colnorm)
    rd = np.abs(np.diag(r))
    if rd.min() < np.sqrt(RCOND_FLOOR) * rd.max():
        raise SingularSystem("design columns are (numerically) linearly dependent")
    coef = linalg.solve_triangular(r, q.T @ (y * sw), check_finite=False) / colnorm
    return LinearFit(coef)


def linear_score(X, y, weights, coef) -> np.ndarray:
    X = _values(X)
    return X.T @ (weights * (y - X @ coef))
