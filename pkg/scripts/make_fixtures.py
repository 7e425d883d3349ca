"""Regenerate the small CSV fixtures under tests/fixtures (deterministic)."""

import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def write(name, header, rows):
    with open(OUT / name, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.3f}" if isinstance(v, float) else v for v in r])


def small_study(rng):
    # trial: 24 units shifted toward larger a; cohort: 30 units
    n, m = 24, 30
    a_t = np.round(rng.normal(0.5, 1.0, n), 3)
    b_t = (rng.random(n) < 0.6).astype(int)
    x = np.array([1, 0] * (n // 2))
    rng.shuffle(x)
    y = np.round(1.0 + 0.5 * x + 0.8 * a_t - 0.6 * b_t + 0.4 * x * a_t + rng.normal(0, 1, n), 3)
    a_c = np.round(rng.normal(0.0, 1.0, m), 3)
    b_c = (rng.random(m) < 0.4).astype(int)
    write("small_trial.csv", ["x", "y", "a", "b"], [(int(xi), float(yi), float(ai), int(bi)) for xi, yi, ai, bi in zip(x, y, a_t, b_t)])
    write("small_cohort.csv", ["a", "b"], [(float(ai), int(bi)) for ai, bi in zip(a_c, b_c)])


def toy(rng):
    write("toy_trial.csv", ["x", "y", "a"], [(1, 5.0, 0.2), (0, 3.0, 1.1), (1, 7.5, 1.4), (0, 2.0, -0.3), (1, 6.0, 0.9), (0, 4.5, 0.5)])
    write("toy_cohort.csv", ["a"], [(0.1,), (-0.4,), (0.8,), (-1.0,), (0.3,), (0.0,)])


def logistic(rng):
    x1 = np.round(rng.normal(0, 1, 20), 3)
    x2 = (rng.random(20) < 0.5).astype(int)
    p = 1 / (1 + np.exp(-(-0.3 + 0.9 * x1 + 0.7 * x2)))
    y = (rng.random(20) < p).astype(int)
    write("logistic20.csv", ["y", "x1", "x2"], [(int(a), float(b), int(c)) for a, b, c in zip(y, x1, x2)])


def jackknife_study(rng):
    # 30 trial and 30 cohort units for the leave-one-out variance comparison
    n, m = 30, 30
    a_t = np.round(rng.normal(0.4, 1.0, n), 3)
    b_t = (rng.random(n) < 0.6).astype(int)
    x = np.zeros(n, dtype=int)
    x[rng.permutation(n)[: n // 2]] = 1
    y = np.round(1.0 + x + 0.8 * a_t - 0.5 * b_t + 0.5 * x * a_t + rng.normal(0, 1, n), 3)
    a_c = np.round(rng.normal(0.0, 1.0, m), 3)
    b_c = (rng.random(m) < 0.4).astype(int)
    write("jk_trial.csv", ["x", "y", "a", "b"], [(int(xi), float(yi), float(ai), int(bi)) for xi, yi, ai, bi in zip(x, y, a_t, b_t)])
    write("jk_cohort.csv", ["a", "b"], [(float(ai), int(bi)) for ai, bi in zip(a_c, b_c)])


if __name__ == "__main__":
    rng = np.random.default_rng(20240611)
    small_study(rng)
    toy(rng)
    logistic(rng)
    jackknife_study(np.random.default_rng(0))
