import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmtrunc.core import Dataset, ObservationRecord, StateSpace, build_event_table, ingest_long_format
from msmtrunc.estimators import (
    NotEstimableError,
    aalen_johansen,
    batched_product,
    initial_distribution,
    landmark_aalen_johansen,
    nelson_aalen,
    product_integral,
    state_occupation,
    weighted_hazard_increments,
)
from strategies import ILLNESS_DEATH, empirical_states, illness_death_datasets, random_complete_dataset

EXACT = 1e-15


# Nelson-Aalen ------------------------------------------------------------------------------

def test_nelson_aalen_d1(d1):
    haz = nelson_aalen(build_event_table(d1))
    assert haz.value(0, 1, 5.0) == pytest.approx(1 / 3, abs=EXACT)
    assert haz.value(0, 2, 5.0) == pytest.approx(1 / 2, abs=EXACT)
    assert haz.value(1, 2, 5.0) == pytest.approx(1.0, abs=EXACT)
    assert haz.value(0, 1, 0.999) == 0.0


def test_nelson_aalen_truncated(d1_trunc):
    haz = nelson_aalen(build_event_table(d1_trunc))
    assert haz.value(0, 2, 5.0) == pytest.approx(0.5, abs=EXACT)
    assert haz.value(1, 2, 5.0) == pytest.approx(1.0, abs=EXACT)
    times, a01 = haz.curve(0, 1)
    assert np.all(a01 == 0.0)


def test_nelson_aalen_no_events():
    data = ingest_long_format("id,from,to,entry,exit\nA,0,cens,0,3\n", ILLNESS_DEATH)
    haz = nelson_aalen(build_event_table(data))
    assert len(haz.times) == 0
    np.testing.assert_array_equal(haz.cumulative(10.0), np.zeros((3, 3)))


def test_cumulative_is_right_continuous(d1):
    haz = nelson_aalen(build_event_table(d1))
    assert haz.value(0, 2, 2.0) == pytest.approx(0.5)
    assert haz.value(0, 2, 1.999) == 0.0


@settings(max_examples=200, deadline=None)
@given(illness_death_datasets())
def test_increment_invariants(data):
    haz = nelson_aalen(build_event_table(data))
    inc = haz.increments
    S = inc.shape[-1]
    off = ~np.eye(S, dtype=bool)
    assert np.all((inc[:, off] >= 0) & (inc[:, off] <= 1))
    diag = inc[:, np.arange(S), np.arange(S)]
    assert np.all((diag >= -1) & (diag <= 0))
    assert np.all(np.abs(inc.sum(axis=2)) <= 1e-12)


# product integral ---------------------------------------------------------------------------

def test_product_integral_d1(d1):
    haz = nelson_aalen(build_event_table(d1))
    np.testing.assert_allclose(product_integral(haz, 0, 4)[0], [1 / 3, 0, 2 / 3], atol=EXACT)
    np.testing.assert_allclose(product_integral(haz, 0, 2)[0], [1 / 3, 1 / 3, 1 / 3], atol=EXACT)


def test_product_integral_empty_interval(d1):
    haz = nelson_aalen(build_event_table(d1))
    np.testing.assert_array_equal(product_integral(haz, 2.5, 3.5), np.eye(3))


def test_product_integral_rejects_reversed(d1):
    haz = nelson_aalen(build_event_table(d1))
    with pytest.raises(ValueError):
        product_integral(haz, 3, 2)


def test_batched_product_matches_loop():
    rng = np.random.default_rng(3)
    mats = rng.random((5, 7, 3, 3))
    loop = np.stack([np.linalg.multi_dot(list(m)) for m in mats])
    np.testing.assert_allclose(batched_product(mats), loop, rtol=1e-12)
    np.testing.assert_array_equal(batched_product(np.zeros((0, 2, 2))), np.eye(2))


def _two_state(rng, n):
    ss = StateSpace(2, frozenset({(0, 1)}))
    recs = []
    for i in range(n):
        entry = float(rng.integers(0, 3)) if rng.random() < 0.3 else 0.0
        exit_ = entry + float(rng.integers(1, 8))
        to = 1 if rng.random() < 0.7 else None
        recs.append(ObservationRecord(f"s{i}", entry, exit_, 0, to))
    return Dataset.from_records(recs, ss)


def _kaplan_meier(data, t):
    surv = 1.0
    events = sorted({r.exit_time for r in data.records() if not r.censored and r.exit_time <= t})
    for u in events:
        y = sum(1 for r in data.records() if r.entry_time < u <= r.exit_time)
        d = sum(1 for r in data.records() if not r.censored and r.exit_time == u)
        surv *= 1 - d / y
    return surv


def test_two_state_reduces_to_kaplan_meier():
    rng = np.random.default_rng(11)
    for _ in range(50):
        data = _two_state(rng, int(rng.integers(1, 25)))
        curve = state_occupation(data, "common:0")
        for t in np.arange(0, 12, 0.5):
            assert abs(curve.at(t)[0] - _kaplan_meier(data, t)) <= 1e-12


# state occupation ---------------------------------------------------------------------------

def test_state_occupation_d1(d1):
    curve = state_occupation(d1, "common:0")
    np.testing.assert_allclose(curve.at(4.0), [1 / 3, 0, 2 / 3], atol=EXACT)
    np.testing.assert_allclose(curve.at(2.0), [1 / 3, 1 / 3, 1 / 3], atol=EXACT)
    np.testing.assert_array_equal(curve.at(0.5), [1, 0, 0])


def test_state_occupation_no_events():
    data = ingest_long_format("id,from,to,entry,exit\nA,0,cens,0,3\nB,1,cens,0,2\n", ILLNESS_DEATH)
    curve = state_occupation(data, "multinomial")
    np.testing.assert_array_equal(curve.at(10.0), [0.5, 0.5, 0])


def test_multinomial_identity_on_complete_data():
    rng = np.random.default_rng(5)
    for _ in range(40):
        data = random_complete_dataset(rng, int(rng.integers(1, 30)), int(rng.integers(2, 5)))
        curve = state_occupation(data, "multinomial")
        S = data.state_space.num_states
        for t in np.concatenate([curve.times, curve.times + 0.5]):
            freq = np.bincount(empirical_states(data, t), minlength=S) / data.n
            assert np.max(np.abs(curve.at(t) - freq)) <= 1e-12


# initial distribution ---------------------------------------------------------------------

def test_initial_common(d1):
    np.testing.assert_array_equal(initial_distribution(d1, "common:1"), [0, 1, 0])


def test_initial_multinomial(d1):
    np.testing.assert_array_equal(initial_distribution(d1, "multinomial"), [1, 0, 0])


def test_initial_multinomial_rejects_truncation(d1_trunc):
    with pytest.raises(ValueError):
        initial_distribution(d1_trunc, "multinomial")


def test_initial_at_risk_renormalized():
    data = ingest_long_format(
        "id,from,to,entry,exit\na,0,2,0,1\nb,0,2,0,2\nc,0,cens,0,3\nd,1,2,0,2\ne,0,2,1,4\n",
        ILLNESS_DEATH)
    np.testing.assert_allclose(initial_distribution(data, "at_risk_renormalized"), [0.75, 0.25, 0])


def test_initial_at_risk_nobody():
    data = ingest_long_format("id,from,to,entry,exit\na,0,2,1,2\n", ILLNESS_DEATH)
    with pytest.raises(NotEstimableError):
        initial_distribution(data, "at_risk_renormalized")


def test_initial_supplied(d1):
    np.testing.assert_array_equal(initial_distribution(d1, [0.5, 0.5, 0]), [0.5, 0.5, 0])
    np.testing.assert_array_equal(initial_distribution(d1, "supplied:0.5,0.5,0"), [0.5, 0.5, 0])
    with pytest.raises(ValueError):
        initial_distribution(d1, [0.5, 0.6, 0])
    with pytest.raises(ValueError):
        initial_distribution(d1, "bogus")


# landmark ----------------------------------------------------------------------------------

def test_landmark_d1(d1):
    np.testing.assert_array_equal(landmark_aalen_johansen(d1, 1.5, 1, 4.0)[1:], [0, 1])
    np.testing.assert_array_equal(landmark_aalen_johansen(d1, 1.5, 1, 3.9)[1:], [1, 0])


def test_landmark_empty_subset(d1):
    with pytest.raises(NotEstimableError):
        landmark_aalen_johansen(d1, 5.0, 0, 6.0)


@settings(max_examples=100, deadline=None)
@given(illness_death_datasets(min_n=1), st.integers(0, 20).map(lambda k: k / 2 + 0.25),
       st.sampled_from([0, 1]))
def test_landmark_at_s_is_unit_vector(data, s, state):
    try:
        row = landmark_aalen_johansen(data, s, state, s)
    except NotEstimableError:
        return
    np.testing.assert_array_equal(row, np.eye(3)[state])


def test_landmark_equals_empirical_on_complete_data():
    rng = np.random.default_rng(8)
    for _ in range(30):
        data = random_complete_dataset(rng, int(rng.integers(5, 40)), 3)
        s = float(rng.integers(0, 4)) + 0.5
        for state in (0, 1):
            at_s = empirical_states(data, s) == state
            if not at_s.any():
                continue
            for t in (s + 1, s + 2.5, s + 6):
                freq = np.bincount(empirical_states(data, t)[at_s], minlength=3) / at_s.sum()
                np.testing.assert_allclose(landmark_aalen_johansen(data, s, state, t), freq,
                                           atol=1e-12)


def test_aalen_johansen_matrix_curve(d1):
    curve = aalen_johansen(d1, 0.0)
    np.testing.assert_array_equal(curve.at(0.0), np.eye(3))
    np.testing.assert_allclose(curve.at(4.0)[0], [1 / 3, 0, 2 / 3], atol=EXACT)


# weighted evaluation -----------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(illness_death_datasets(min_n=1), st.integers(0, 2 ** 32 - 1))
def test_weighted_increments_match_materialized(data, seed):
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(data.n, np.full(data.n, 1 / data.n), size=3).astype(float)
    times, inc = weighted_hazard_increments(data, counts)
    for b in range(3):
        sub = data.take(np.repeat(np.arange(data.n), counts[b].astype(int)), relabel=True)
        haz = nelson_aalen(build_event_table(sub))
        for t in times:
            np.testing.assert_allclose(inc[b, times <= t].sum(axis=0), haz.cumulative(t), atol=1e-12)
