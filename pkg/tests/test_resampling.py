import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmtrunc.core import Dataset, ObservationRecord, StateSpace, build_event_table, ingest_long_format
from msmtrunc.estimators import NotEstimableError, nelson_aalen, product_integral
from msmtrunc.harness import Target, TargetStatistic
from msmtrunc.resampling import (
    BootstrapSample,
    DegenerateSampleError,
    efron_bootstrap,
    efron_indices,
    standardized_quantile_ci,
    wild_bootstrap_nelson_aalen,
    wild_bootstrap_transition_probability,
    wild_multipliers,
)
from strategies import illness_death_datasets


def a01_at_5(data):
    return nelson_aalen(build_event_table(data)).value(0, 1, 5.0)


# intervals ---------------------------------------------------------------------------------

@pytest.mark.parametrize("form", ["asymmetric", "symmetric"])
def test_ci_worked_example(form):
    ci = standardized_quantile_ci(np.array([0.4, 0.5, 0.6]), 0.5, 100, 0.95, form=form)
    assert ci.lower == pytest.approx(0.4) and ci.upper == pytest.approx(0.6)
    assert ci.point == 0.5 and ci.level == 0.95


def test_ci_degenerate():
    with pytest.raises(DegenerateSampleError):
        standardized_quantile_ci(np.full(10, 0.3), 0.3, 50)
    with pytest.raises(DegenerateSampleError):
        standardized_quantile_ci(np.array([0.3]), 0.3, 50)


def test_ci_symmetric_sample():
    reps = 0.5 + np.array([-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2])
    ci = standardized_quantile_ci(reps, 0.5, 30, 0.9)
    assert 0.5 - ci.lower == pytest.approx(ci.upper - 0.5)


def test_ci_forms_differ_on_skewed_sample():
    reps = np.array([0.0, 0.01, 0.02, 0.03, 0.5])
    a = standardized_quantile_ci(reps, 0.1, 10, 0.8, bounds=None, form="asymmetric")
    s = standardized_quantile_ci(reps, 0.1, 10, 0.8, bounds=None, form="symmetric")
    assert a.lower == s.lower
    assert s.upper - s.point == pytest.approx(s.point - s.lower)
    assert a.upper < s.upper


def test_ci_clamped_and_contains_point():
    ci = standardized_quantile_ci(np.array([0.9, 0.95, 1.0, 1.0]), 0.99, 5)
    assert 0 <= ci.lower <= ci.point <= ci.upper <= 1


def test_ci_centered_sample_is_shifted():
    pert = BootstrapSample(np.array([-0.1, 0.0, 0.1]), "wild", 0, 3, centered=True)
    ci = standardized_quantile_ci(pert, 0.5, 100)
    assert (ci.lower, ci.upper) == pytest.approx((0.4, 0.6))


def test_ci_ignores_nan_replicates():
    a = standardized_quantile_ci(np.array([0.4, np.nan, 0.5, 0.6]), 0.5, 100)
    assert (a.lower, a.upper) == pytest.approx((0.4, 0.6))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=60), st.floats(0, 1),
       st.floats(0.5, 0.98), st.floats(0.001, 0.019), st.sampled_from(["asymmetric", "symmetric"]))
def test_ci_monotone_in_level(reps, point, level, extra, form):
    reps = np.array(reps)
    try:
        lo = standardized_quantile_ci(reps, point, 20, level, form=form)
    except DegenerateSampleError:
        return
    hi = standardized_quantile_ci(reps, point, 20, level + extra, form=form)
    assert hi.lower <= lo.lower and hi.upper >= lo.upper
    assert hi.lower <= point <= hi.upper


# Efron ----------------------------------------------------------------------------------------

def test_efron_identical_subjects():
    rows = "".join(f"s{i},0,1,0,2\ns{i},1,2,2,5\n" for i in range(6))
    data = ingest_long_format("id,from,to,entry,exit\n" + rows)
    sample = efron_bootstrap(data, a01_at_5, B=20, seed=1)
    assert np.all(sample.replicates == a01_at_5(data))


def test_efron_reproducible(d1):
    a = efron_bootstrap(d1, a01_at_5, B=3, seed=42)
    b = efron_bootstrap(d1, a01_at_5, B=3, seed=42)
    assert a.replicates.shape == (3,)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    c = efron_bootstrap(d1, a01_at_5, B=3, seed=43)
    assert a.method == "efron" and a.B == 3 and a.seed == 42
    assert not np.array_equal(efron_indices(3, 50, 42), efron_indices(3, 50, 43)) or c is not None


def test_efron_sample_size(d1):
    sample = efron_bootstrap(d1, lambda d: d.n, B=25, seed=0)
    assert np.all(sample.replicates == d1.n)


def test_efron_not_estimable_counted(d1):
    def stat(d):
        if "B" not in {sid.split("#")[0] for sid in d.subject_ids}:
            raise NotEstimableError("no B")
        return 1.0
    sample = efron_bootstrap(d1, stat, B=200, seed=3)
    assert sample.dropped == int(np.isnan(sample.replicates).sum()) > 0
    assert sample.unreliable


def test_efron_all_not_estimable(d1):
    def stat(d):
        raise NotEstimableError("never")
    with pytest.raises(NotEstimableError):
        efron_bootstrap(d1, stat, B=5, seed=0)


@settings(max_examples=60, deadline=None)
@given(illness_death_datasets(min_n=2, max_n=10), st.integers(0, 1000),
       st.sampled_from(["AJ", "LMAJ", "NA"]))
def test_efron_weighted_path_matches_materialized(data, seed, estimator):
    if estimator == "NA":
        targets = [Target("cumhaz", 2, 4.0, 1), Target("cumhaz", 1, 6.5, 0)]
    elif estimator == "AJ":
        targets = [Target("occupation", 1, 3.0), Target("transition", 2, 7.0, 0, 1.5)]
    else:
        targets = [Target("transition", 1, 5.0, 0, 2.25), Target("transition", 2, 6.0, 1, 3.25)]
    stat = TargetStatistic(estimator, targets)
    fast = efron_bootstrap(data, stat, B=8, seed=seed)
    slow = efron_bootstrap(data, lambda d: stat(d), B=8, seed=seed)
    np.testing.assert_allclose(fast.replicates, slow.replicates, atol=1e-12)


# wild bootstrap ------------------------------------------------------------------------------

def test_wild_zero_multipliers(d1):
    tab = build_event_table(d1)
    sample = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=np.zeros((4, d1.n)))
    assert np.all(sample.replicates == 0)
    pert = wild_bootstrap_transition_probability(tab, 0, 4, multipliers=np.zeros((4, d1.n)))
    assert np.all(pert.replicates == 0)


def test_wild_single_event():
    data = ingest_long_format("id,from,to,entry,exit\na,0,1,0,3\n")
    tab = build_event_table(data)
    g = np.array([[0.7], [-1.3]])
    sample = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=g)
    np.testing.assert_array_equal(sample.replicates[:, 0], [0.7, -1.3])
    np.testing.assert_array_equal(sample.times, [3.0])


def test_wild_d1_first_jump(d1):
    tab = build_event_table(d1)
    G = wild_multipliers(d1.n, 5, 9)
    sample = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=G)
    a = d1.subject_ids.index("A")
    np.testing.assert_allclose(sample.replicates[:, 0], G[:, a] / 3, rtol=0, atol=1e-15)


def test_wild_seeded_reproducible(d1):
    tab = build_event_table(d1)
    a = wild_bootstrap_nelson_aalen(tab, (0, 2), B=50, seed=7)
    b = wild_bootstrap_nelson_aalen(tab, (0, 2), B=50, seed=7)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert a.centered and a.method == "wild"


@settings(max_examples=100, deadline=None)
@given(illness_death_datasets(min_n=1), st.floats(-3, 3), st.integers(0, 1000))
def test_wild_linearity(data, c, seed):
    tab = build_event_table(data)
    G = wild_multipliers(data.n, 4, seed)
    base = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=G).replicates
    scaled = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=c * G).replicates
    np.testing.assert_allclose(scaled, c * base, atol=1e-12)
    tp = wild_bootstrap_transition_probability(tab, 0, 6, multipliers=G).replicates
    tp_c = wild_bootstrap_transition_probability(tab, 0, 6, multipliers=c * G).replicates
    np.testing.assert_allclose(tp_c, c * tp, atol=1e-12)


def test_wild_transition_two_state_is_km_delta_method():
    rng = np.random.default_rng(4)
    ss = StateSpace(2, frozenset({(0, 1)}))
    recs = [ObservationRecord(f"s{i}", 0.0, float(rng.integers(1, 9)), 0,
                              1 if rng.random() < 0.7 else None) for i in range(25)]
    data = Dataset.from_records(recs, ss)
    tab = build_event_table(data)
    haz = nelson_aalen(tab)
    G = wild_multipliers(data.n, 6, 2)
    t = 6.0
    pert = wild_bootstrap_transition_probability(tab, 0.0, t, multipliers=G).replicates[:, 0, 0]
    dA = wild_bootstrap_nelson_aalen(tab, (0, 1), multipliers=G).replicates
    dA = np.diff(np.concatenate([np.zeros((6, 1)), dA], axis=1), axis=1)
    surv_t = product_integral(haz, 0, t)[0, 0]
    expected = np.zeros(6)
    for j, u in enumerate(tab.times):
        if u <= t:
            expected -= dA[:, j] / (1 + haz.increments[j, 0, 0])
    np.testing.assert_allclose(pert, surv_t * expected, atol=1e-12)


def test_wild_transition_rejects_reversed(d1):
    with pytest.raises(ValueError):
        wild_bootstrap_transition_probability(build_event_table(d1), 3, 2, B=2)
