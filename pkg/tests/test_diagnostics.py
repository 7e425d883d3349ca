import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import expit

from pategen.core import StudyData, TrueConstant
from pategen.design import TermSpec
from pategen.diagnostics import balance_report, population_mean, population_sd, score_summary, smd
from pategen.errors import ConstantCovariate
from pategen.estimators import fit_nuisances
from pategen.simulation import generate_replicate, load_scenario, replicate_seed

from conftest import make_study


@pytest.fixture(scope="module")
def small_fit(small_config, small_data):
    return fit_nuisances(small_data, small_config.sampling_model, TrueConstant(0.5), small_config.outcome_model)


def test_smd_matches_reference(small_data, small_fit, oracle):
    rep = balance_report(small_data, small_fit)
    assert [r.term for r in rep.rows] == ["a", "b", "a^2"]
    for r in rep.rows:
        ref = oracle["smd"][r.term]
        assert r.smd_unweighted == pytest.approx(ref["unweighted"], abs=1e-12)
        assert r.smd_weighted == pytest.approx(ref["weighted"], abs=1e-12)


def test_population_sd_direct_formula(small_data):
    col = small_data.covariate("a")
    n, m, N = small_data.n, small_data.m, small_data.population_size
    c = small_data.unit_weights
    zbar = np.sum(c * col) / N
    s2 = m * N * np.sum(c * (col - zbar) ** 2) / (m * (N**2 - n) - (N - n) ** 2)
    assert population_sd(small_data, col) == pytest.approx(np.sqrt(s2), rel=1e-14)
    # the same factor is the unbiased reliability-weight correction
    v1, v2 = c.sum(), np.sum(c**2)
    s2_rel = v1 / (v1**2 - v2) * np.sum(c * (col - zbar) ** 2)
    assert population_sd(small_data, col) == pytest.approx(np.sqrt(s2_rel), rel=1e-12)
    assert population_mean(small_data, col) == pytest.approx(zbar, rel=1e-14)


def test_smd_zero_when_means_coincide():
    # trial {1, 5} and cohort {2, 4} both average 3, so the population mean is 3
    zt, zc = np.array([[1.0], [5.0]]), np.array([[2.0], [4.0]])
    d = StudyData.from_arrays(("a",), zt, np.array([1, 0]), np.zeros(2), zc, 1000, 0.5)
    assert smd(d, d.covariate("a")) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    shift=st.floats(-1e3, 1e3),
    scale=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3),
)
def test_smd_affine_invariant(seed, shift, scale):
    d = make_study(seed, n=40, m=50, N=5000)
    col = d.covariate("a")
    scores = expit(-1.0 + 0.5 * col)
    base_u, base_w = smd(d, col), smd(d, col, scores)
    # forming shift + scale * col already loses about log10(|shift| / |scale|)
    # digits, so the 1e-10 comparison is only meaningful for moderate ratios
    assume(abs(shift) <= 1e3 * abs(scale))
    new = shift + scale * col
    assert smd(d, new) == pytest.approx(base_u, rel=1e-10, abs=1e-10)
    assert smd(d, new, scores) == pytest.approx(base_w, rel=1e-10, abs=1e-10)


def test_smd_scale_doubling():
    d = make_study(3)
    col = d.covariate("a")
    assert smd(d, 2 * col) == pytest.approx(smd(d, col), rel=1e-12)


def test_smd_non_negative_and_constant_error():
    d = make_study(5)
    assert smd(d, d.covariate("a")) >= 0
    with pytest.raises(ConstantCovariate):
        smd(d, np.full(d.n_units, 3.0))


def test_balance_report_flags_and_intercept(small_data, small_fit):
    rep = balance_report(small_data, small_fit, threshold=0.2)
    assert "1" not in [r.term for r in rep.rows]
    assert rep.flagged == [r.term for r in rep.rows if r.smd_weighted > 0.2]
    loose = balance_report(small_data, small_fit, threshold=10.0)
    assert loose.flagged == []
    assert all(r.smd_unweighted >= 0 and r.smd_weighted >= 0 and r.sd > 0 for r in rep.rows)
    with pytest.raises(ValueError):
        balance_report(small_data, small_fit, threshold=-1)


def test_balance_report_constant_term():
    d = make_study(1)
    z = d.z.copy()
    z[:, 1] = 1.0
    d = StudyData(d.covariate_names, z, d.s, d.x, d.y, d.population_size)
    scores = np.full(d.n_units, 0.2)
    spec = TermSpec.parse("1 + a + b")
    with pytest.raises(ConstantCovariate):
        balance_report(d, scores, spec)
    rep = balance_report(d, scores, spec, strict=False)
    assert rep.errors == ["b"]
    assert rep.rows[0].error is None


def test_score_summary_examples(small_data, small_fit):
    one = score_summary(small_data, small_fit.w, bins=1)
    assert one.trial.counts.tolist() == [small_data.n]
    assert one.cohort.counts.tolist() == [small_data.m]
    flat = score_summary(small_data, np.full(small_data.n_units, 0.3), bins=10)
    assert np.count_nonzero(flat.trial.counts) == 1 and np.count_nonzero(flat.cohort.counts) == 1
    with pytest.raises(ValueError):
        score_summary(small_data, small_fit.w, bins=0)


def test_score_summary_binning_by_hand(small_data, small_fit):
    bins = 7
    w = small_fit.w
    summ = score_summary(small_data, w, bins=bins)
    lo, hi = float(w.min()), float(w.max())
    assert summ.edges[0] == lo and summ.edges[-1] == hi
    width = (hi - lo) / bins
    expect = {1: [0] * bins, 0: [0] * bins}
    for s, v in zip(small_data.s, w):
        k = min(int((v - lo) / width), bins - 1)
        # values that land exactly on an interior edge go to the upper bin
        expect[int(s)][k] += 1
    assert summ.trial.counts.tolist() == expect[1]
    assert summ.cohort.counts.tolist() == expect[0]
    t = np.sort(w[small_data.trial_index])
    h = (t.size - 1) * 0.25
    q25 = t[int(h)] + (h - int(h)) * (t[int(h) + 1] - t[int(h)])
    assert summ.trial.quantiles[0.25] == pytest.approx(q25, rel=1e-14)
    assert summ.trial.minimum == t[0] and summ.trial.maximum == t[-1]


def direct_study(rng, n_target, N=40_000):
    """Population of N units; the trial is a Bernoulli sample with known
    scores and the cohort a simple random sample of the rest with m = n."""
    g1 = g2 = 0.6
    z1 = (rng.random(N) < 0.4).astype(float)
    z2 = rng.standard_normal(N)
    g0 = brentq(lambda g: expit(g + g1 * z1 + g2 * z2).sum() - n_target, -20, 20)
    w = expit(g0 + g1 * z1 + g2 * z2)
    s = rng.random(N) < w
    rest = np.flatnonzero(~s)
    coh = rng.choice(rest, size=int(s.sum()), replace=False)
    zt, zc = np.column_stack([z1, z2])[s], np.column_stack([z1, z2])[coh]
    n = zt.shape[0]
    x = np.zeros(n, dtype=int)
    x[: n // 2] = 1
    d = StudyData.from_arrays(("z1", "z2"), zt, x, np.zeros(n), zc, N, 0.5)
    return d, np.r_[w[s], w[coh]]


def test_weighted_smd_shrinks_with_trial_size():
    rng = np.random.default_rng(7)
    means = []
    for n in (500, 2000, 8000):
        vals = []
        for _ in range(200):
            d, w = direct_study(rng, n)
            vals.append(smd(d, d.covariate("z2"), w))
        means.append(np.mean(vals))
    assert means[0] > means[1] > means[2]


def test_weighting_improves_balance_in_simulation():
    sc = load_scenario("table3_moderate")
    spec = TermSpec.parse("1 + z1 + z2")
    better = 0
    reps = 40
    for i in range(reps):
        d = generate_replicate(sc, replicate_seed(sc, 99, i))
        nuis = fit_nuisances(d, spec, TrueConstant(0.5), None)
        rep = balance_report(d, nuis)
        better += all(r.smd_weighted < 0.5 * r.smd_unweighted for r in rep.rows)
    assert better >= 0.95 * reps
