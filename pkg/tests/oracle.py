"""Brute-force reference computations for the small study fixture.

Written independently of the package: CSVs are read with the csv module,
design columns are hand-coded, nuisance models are solved in 40-digit
arithmetic (mpmath), estimators and SMDs are explicit loops over units, and
sandwich variances come from a unit-level Psi written out term by term, with
the bread obtained by complex-step differentiation.

Run as a script to refresh the frozen values in fixtures/oracle_small.json.
"""

import cmath
import csv
import json
import math
import sys
from pathlib import Path

import mpmath as mp

HERE = Path(__file__).resolve().parent
FIX = HERE / "fixtures"
mp.mp.dps = 40

N_POP = 2000
R = 0.5


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: float(v) for k, v in row.items()} for row in rows]


def load_small():
    trial = read_csv(FIX / "small_trial.csv")
    cohort = read_csv(FIX / "small_cohort.csv")
    units = []
    for row in trial:
        units.append({"S": 1, "D": 1, "X": int(row["x"]), "Y": row["y"], "a": row["a"], "b": row["b"]})
    for row in cohort:
        units.append({"S": 0, "D": 1, "X": 0, "Y": 0.0, "a": row["a"], "b": row["b"]})
    return units


# hand-coded designs
def zs(u):  # 1 + a + b + a^2
    return [1.0, u["a"], u["b"], u["a"] ** 2]


def zo(u):  # 1 + a + b
    return [1.0, u["a"], u["b"]]


def w_main(u):  # main effects plus the square present in the sampling model
    return [1.0, u["a"], u["b"], u["a"] ** 2]


def w_full(u):  # ... plus the pairwise interaction a:b
    return [1.0, u["a"], u["b"], u["a"] ** 2, u["a"] * u["b"]]


PS_DESIGNS = {"main": w_main, "full": w_full}


def weights_c(units):
    n = sum(u["S"] for u in units)
    m = len(units) - n
    inv_pi0 = mp.mpf(N_POP - n) / m
    return [mp.mpf(1) if u["S"] else inv_pi0 for u in units], n, m


def sigmoid(t):
    return 1 / (1 + mp.exp(-t))


def logistic_mle(X, y, wts):
    """Newton-Raphson with step halving, 40 digits."""
    k = len(X[0])
    beta = mp.matrix(k, 1)
    ybar = sum(w * yy for w, yy in zip(wts, y)) / sum(wts)
    beta[0] = mp.log(ybar / (1 - ybar))

    def loglik(b):
        s = 0
        for xi, yi, wi in zip(X, y, wts):
            t = sum(xi[j] * b[j] for j in range(k))
            s += wi * (yi * t - mp.log(1 + mp.exp(t)))
        return s

    ll = loglik(beta)
    for _ in range(200):
        g = mp.matrix(k, 1)
        H = mp.matrix(k, k)
        for xi, yi, wi in zip(X, y, wts):
            p = sigmoid(sum(xi[j] * beta[j] for j in range(k)))
            for a in range(k):
                g[a] += wi * (yi - p) * xi[a]
                for b in range(k):
                    H[a, b] += wi * p * (1 - p) * xi[a] * xi[b]
        step = mp.lu_solve(H, g)
        t = mp.mpf(1)
        while True:
            cand = beta + t * step
            llc = loglik(cand)
            if llc >= ll or t < mp.mpf(2) ** -40:
                break
            t /= 2
        beta, ll = cand, llc
        if max(abs(s) for s in step) < mp.mpf(10) ** -30:
            break
    return [beta[j] for j in range(k)]


def wls(X, y, wts):
    k = len(X[0])
    XtX = mp.matrix(k, k)
    Xty = mp.matrix(k, 1)
    for xi, yi, wi in zip(X, y, wts):
        for a in range(k):
            Xty[a] += wi * xi[a] * yi
            for b in range(k):
                XtX[a, b] += wi * xi[a] * xi[b]
    sol = mp.lu_solve(XtX, Xty)
    return [sol[j] for j in range(k)]


def dot(x, b):
    return sum(mp.mpf(xi) * bi for xi, bi in zip(x, b))


def fit_all(units, ps):
    """Nuisance fits for propensity mode ``ps`` ("true", "main" or "full")."""
    c, n, m = weights_c(units)
    gamma = logistic_mle([zs(u) for u in units], [u["S"] for u in units], c)
    w = [sigmoid(dot(zs(u), gamma)) for u in units]
    trial = [u for u in units if u["S"]]
    if ps == "true":
        beta = None
        e = [mp.mpf(R)] * len(units)
    else:
        des = PS_DESIGNS[ps]
        beta = logistic_mle([des(u) for u in trial], [u["X"] for u in trial], [1] * len(trial))
        e = [sigmoid(dot(des(u), beta)) if u["S"] else mp.mpf(R) for u in units]
    t1 = [(i, u) for i, u in enumerate(units) if u["S"] and u["X"] == 1]
    t0 = [(i, u) for i, u in enumerate(units) if u["S"] and u["X"] == 0]
    a1 = wls([zo(u) for _, u in t1], [u["Y"] for _, u in t1], [1 / e[i] for i, _ in t1])
    a0 = wls([zo(u) for _, u in t0], [u["Y"] for _, u in t0], [1 / (1 - e[i]) for i, _ in t0])
    return {"c": c, "n": n, "m": m, "gamma": gamma, "w": w, "beta": beta, "e": e, "alpha1": a1, "alpha0": a0}


def estimators(units, f):
    c, w, e = f["c"], f["w"], f["e"]
    m1 = [dot(zo(u), f["alpha1"]) for u in units]
    m0 = [dot(zo(u), f["alpha0"]) for u in units]
    N = N_POP
    s1 = s0 = h1 = h0 = r1 = r0 = hr1 = hr0 = 0
    for i, u in enumerate(units):
        if not u["S"]:
            continue
        if u["X"] == 1:
            a = 1 / (w[i] * e[i])
            s1 += a * u["Y"]
            h1 += a
            r1 += a * (u["Y"] - m1[i])
        else:
            b = 1 / (w[i] * (1 - e[i]))
            s0 += b * u["Y"]
            h0 += b
            r0 += b * (u["Y"] - m0[i])
    nu3 = sum(c[i] * (m1[i] - m0[i]) for i in range(len(units))) / N
    return {
        "ipsw1": s1 / N - s0 / N,
        "ipsw2": s1 / h1 - s0 / h0,
        "or": nu3,
        "dr1": r1 / N - r0 / N + nu3,
        "dr2": r1 / h1 - r0 / h0 + nu3,
    }


def sate(units):
    y1 = [u["Y"] for u in units if u["S"] and u["X"] == 1]
    y0 = [u["Y"] for u in units if u["S"] and u["X"] == 0]
    mu1, mu0 = mp.fsum(y1) / len(y1), mp.fsum(y0) / len(y0)
    v1 = mp.fsum((y - mu1) ** 2 for y in y1) / (len(y1) - 1)
    v0 = mp.fsum((y - mu0) ** 2 for y in y0) / (len(y0) - 1)
    return mu1 - mu0, mp.sqrt(v1 / len(y1) + v0 / len(y0))


def smd_direct(units, col, pi=None):
    """Standardized mean difference with the printed SD formula."""
    c, n, m = weights_c(units)
    N = N_POP
    num = den = 0
    for i, u in enumerate(units):
        if u["S"]:
            p = 1 if pi is None else pi[i]
            num += u["S"] * col(u) * p
            den += u["S"] * p
    zbar = sum(c[i] * col(u) for i, u in enumerate(units)) / N
    ss = sum(c[i] * (col(u) - zbar) ** 2 for i, u in enumerate(units))
    s = mp.sqrt(m * N * ss / (m * (N * N - n) - (N - n) ** 2))
    return abs(num / den - zbar) / s


SMD_TERMS = {
    "a": lambda u: u["a"],
    "b": lambda u: u["b"],
    "a^2": lambda u: u["a"] ** 2,
}


# ---- sandwich -------------------------------------------------------------

def _sig(t):
    return 1 / (1 + cmath.exp(-t))


def _dotc(x, b):
    return sum(xi * bi for xi, bi in zip(x, b))


def unit_psi(kind, ps, u, theta, inv_pi0):
    """Estimating function of one population member. Unobserved members have
    D = S = 0. theta = (nu..., gamma, alpha1, alpha0, beta) with unused
    blocks absent; OR omits gamma since nu3 does not depend on it."""
    nnu = {"ipsw1": 2, "ipsw2": 2, "or": 1, "dr1": 3, "dr2": 3}[kind]
    pos = nnu
    nu = theta[:nnu]
    uses_w = kind != "or"
    uses_m = kind in ("or", "dr1", "dr2")
    gamma = theta[pos:pos + 4] if uses_w else None
    pos += 4 if uses_w else 0
    a1 = theta[pos:pos + 3] if uses_m else None
    a0 = theta[pos + 3:pos + 6] if uses_m else None
    pos += 6 if uses_m else 0
    D, S, X, Y = u["D"], u["S"], u["X"], u["Y"]
    c = 1.0 if S else inv_pi0
    if ps == "true":
        e, beta, W = R, None, None
    else:
        W = PS_DESIGNS[ps](u)
        beta = theta[pos:pos + len(W)]
        e = _sig(_dotc(W, beta)) if S else R
    out = []
    w = _sig(_dotc(zs(u), gamma)) if uses_w else None
    m1 = _dotc(zo(u), a1) if uses_m else 0.0
    m0 = _dotc(zo(u), a0) if uses_m else 0.0
    if kind == "ipsw1":
        out += [S * X * Y / (w * e) - nu[0], S * (1 - X) * Y / (w * (1 - e)) - nu[1]] if S else [-nu[0], -nu[1]]
    elif kind == "ipsw2":
        out += [S * X * (Y - nu[0]) / (w * e), S * (1 - X) * (Y - nu[1]) / (w * (1 - e))] if S else [0.0, 0.0]
    elif kind == "dr1":
        out += [S * X * (Y - m1) / (w * e) - nu[0], S * (1 - X) * (Y - m0) / (w * (1 - e)) - nu[1]] if S else [-nu[0], -nu[1]]
    elif kind == "dr2":
        out += [S * X * (Y - m1 - nu[0]) / (w * e), S * (1 - X) * (Y - m0 - nu[1]) / (w * (1 - e))] if S else [0.0, 0.0]
    if uses_m:
        out.append(D * c * (m1 - m0) - nu[-1])
    if uses_w:
        out += [D * c * (S - w) * z for z in zs(u)]
    if uses_m:
        out += [S * X / e * (Y - m1) * z for z in zo(u)] if S else [0.0] * 3
        out += [S * (1 - X) / (1 - e) * (Y - m0) * z for z in zo(u)] if S else [0.0] * 3
    if ps != "true":
        out += [S * (X - e) * x for x in W] if S else [0.0] * len(W)
    return out


def theta_hat(kind, units, f):
    N = N_POP
    w, e = f["w"], f["e"]
    m1 = [dot(zo(u), f["alpha1"]) for u in units]
    m0 = [dot(zo(u), f["alpha0"]) for u in units]
    nu3 = sum(f["c"][i] * (m1[i] - m0[i]) for i in range(len(units))) / N
    t1 = [i for i, u in enumerate(units) if u["S"] and u["X"] == 1]
    t0 = [i for i, u in enumerate(units) if u["S"] and u["X"] == 0]
    Y = [u["Y"] for u in units]

    def s(ix, val, den):
        return sum(val(i) / den(i) for i in ix)

    d1 = lambda i: w[i] * e[i]  # noqa: E731
    d0 = lambda i: w[i] * (1 - e[i])  # noqa: E731
    one = lambda i: 1  # noqa: E731
    if kind == "ipsw1":
        nu = [s(t1, lambda i: Y[i], d1) / N, s(t0, lambda i: Y[i], d0) / N]
    elif kind == "ipsw2":
        nu = [s(t1, lambda i: Y[i], d1) / s(t1, one, d1), s(t0, lambda i: Y[i], d0) / s(t0, one, d0)]
    elif kind == "or":
        nu = [nu3]
    elif kind == "dr1":
        nu = [s(t1, lambda i: Y[i] - m1[i], d1) / N, s(t0, lambda i: Y[i] - m0[i], d0) / N, nu3]
    else:
        nu = [
            s(t1, lambda i: Y[i] - m1[i], d1) / s(t1, one, d1),
            s(t0, lambda i: Y[i] - m0[i], d0) / s(t0, one, d0),
            nu3,
        ]
    theta = list(nu)
    if kind != "or":
        theta += f["gamma"]
    if kind in ("or", "dr1", "dr2"):
        theta += f["alpha1"] + f["alpha0"]
    if f["beta"] is not None:
        theta += f["beta"]
    return [float(t) for t in theta]


def sandwich_se(kind, ps, units, f):
    theta = theta_hat(kind, units, f)
    n, m = f["n"], f["m"]
    inv_pi0 = (N_POP - n) / m
    K = N_POP - n - m
    phantom = {"D": 0, "S": 0, "X": 0, "Y": 0.0, "a": 0.0, "b": 0.0}
    members = [(u, 1) for u in units] + [(phantom, K)]
    d = len(theta)
    h = 1e-20
    A = mp.matrix(d, d)
    B = mp.matrix(d, d)
    for u, mult in members:
        psi = unit_psi(kind, ps, u, theta, inv_pi0)
        psi_r = [complex(v).real for v in psi]
        for a in range(d):
            for b in range(d):
                B[a, b] += mult * psi_r[a] * psi_r[b]
        for j in range(d):
            tj = list(theta)
            tj[j] = complex(tj[j], h)
            col = unit_psi(kind, ps, u, tj, inv_pi0)
            for a in range(d):
                A[a, j] += mult * complex(col[a]).imag / h
    A /= N_POP
    B /= N_POP
    lam = mp.matrix(d, 1)
    lam[0] = 1
    if kind != "or":
        lam[1] = -1
    if kind in ("dr1", "dr2"):
        lam[2] = 1
    v = mp.lu_solve(A.T, lam)
    var = (v.T * B * v)[0] / N_POP
    return mp.sqrt(var)


def compute():
    units = load_small()
    out = {"coef": {}, "estimates": {}, "se": {}, "smd": {}}
    s, se = sate(units)
    out["estimates"]["sate"] = float(s)
    out["se"]["sate"] = float(se)
    for ps in ("true", "main", "full"):
        f = fit_all(units, ps)
        out["coef"][ps] = {
            "gamma": [float(v) for v in f["gamma"]],
            "beta": None if f["beta"] is None else [float(v) for v in f["beta"]],
            "alpha1": [float(v) for v in f["alpha1"]],
            "alpha0": [float(v) for v in f["alpha0"]],
        }
        est = estimators(units, f)
        out["estimates"][ps] = {k: float(v) for k, v in est.items()}
        out["se"][ps] = {k: float(sandwich_se(k, ps, units, f)) for k in est}
        if ps == "true":
            pi = [1 / wi for wi in f["w"]]
            out["smd"] = {
                name: {"unweighted": float(smd_direct(units, col)), "weighted": float(smd_direct(units, col, pi))}
                for name, col in SMD_TERMS.items()
            }
    return out


def logistic20():
    rows = read_csv(FIX / "logistic20.csv")
    X = [[1.0, r["x1"], r["x2"]] for r in rows]
    y = [r["y"] for r in rows]
    wts = [1 + (i % 3) for i in range(len(rows))]
    return {
        "unweighted": [float(v) for v in logistic_mle(X, y, [1] * len(rows))],
        "weighted": [float(v) for v in logistic_mle(X, y, wts)],
        "weights": wts,
    }


if __name__ == "__main__":
    res = compute()
    res["logistic20"] = logistic20()
    text = json.dumps(res, indent=1, sort_keys=True)
    (FIX / "oracle_small.json").write_text(text + "\n")
    json.dump(res["estimates"], sys.stdout, indent=1)
    print()
