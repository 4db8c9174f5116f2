import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scancov.models import Auto, Common, ProcessModel, StudentT
from scancov.mvnt import IntegrationConfig
from scancov.scan import Series, batch_pvalues, bh_adjust, moving_sums, scan_statistic, tail_probability
from scancov.simulation import sample_process, stream


def _hand_bh(p):
    # q_i = min over j with p_j >= p_i of m p_j / rank_j, capped at 1
    p = np.asarray(p, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    rank = np.empty(m, dtype=int)
    rank[order] = np.arange(1, m + 1)
    q = np.empty(m)
    for i in range(m):
        q[i] = min(min(1.0, p[j] * (m / rank[j])) for j in range(m) if rank[j] >= rank[i])
    return q


# -- moving sums and the statistic -----------------------------------------------

def test_moving_sums_examples():
    x = [1, 2, 3, 2, 1]
    np.testing.assert_array_equal(moving_sums(x, 2), [3, 5, 5, 3])
    np.testing.assert_array_equal(moving_sums(x, 1), x)
    np.testing.assert_array_equal(moving_sums(x, 5), [9])


def test_scan_examples():
    r = scan_statistic([1, 2, 3, 2, 1], 2)
    assert (r.statistic, r.t_star) == (5.0, 2)
    r = scan_statistic(np.zeros(6), 3)
    assert (r.statistic, r.t_star) == (0.0, 1)
    r = scan_statistic([0, 0, 10, 0], 2)
    assert (r.statistic, r.t_star) == (10.0, 2)


def test_compensated_prefix_sums():
    x = np.array([1e16, 1.0, -1e16, 1.0, 1.0])
    np.testing.assert_array_equal(moving_sums(x, 3), [1.0, 2.0 - 1e16, -1e16 + 2.0])
    exact = [math.fsum(x[i:i + 4]) for i in range(2)]
    np.testing.assert_array_equal(moving_sums(x, 4), exact)
    assert moving_sums([0.1] * 10, 10)[0] == math.fsum([0.1] * 10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.data())
def test_moving_sums_match_direct(values, data):
    x = np.array(values)
    w = data.draw(st.integers(1, x.size))
    direct = np.array([np.sum(x[i:i + w]) for i in range(x.size - w + 1)])
    np.testing.assert_allclose(moving_sums(x, w), direct, rtol=1e-9, atol=1e-6)


def test_window_validation():
    with pytest.raises(ValueError):
        moving_sums([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        moving_sums([1.0, 2.0], 0)
    with pytest.raises(ValueError):
        Series("bad", [1.0, np.nan])
    with pytest.raises(ValueError):
        Series("short", [1.0])


# -- tail probabilities ------------------------------------------------------------

def test_tail_common_independent():
    est = tail_probability(ProcessModel(7, Common(0.0)), 3, 3.0)
    assert est.value == pytest.approx(0.14541, abs=0.003)


def test_tail_auto_half():
    est = tail_probability(ProcessModel(7, Auto(0.5)), 3, 3.0)
    assert est.value == pytest.approx(0.24851, abs=0.003)


def test_tail_t_common():
    est = tail_probability(ProcessModel(7, Common(0.0), 4.0, StudentT(7.0)), 3, 3.0)
    assert est.value == pytest.approx(0.71246, abs=0.005)


def test_tail_monotone_in_s():
    model = ProcessModel(9, Auto(0.3), 2.0)
    cfg = IntegrationConfig(abs_err=2e-4)
    vals = [tail_probability(model, 3, s, cfg) for s in np.linspace(-2, 12, 8)]
    for a, b in zip(vals, vals[1:]):
        assert b.value <= a.value + a.error + b.error


@pytest.mark.parametrize("n,s,sigma", [(5, 1.0, 1.0), (8, 3.0, 2.0), (12, 2.5, 1.0)])
def test_w1_iid_closed_form(n, s, sigma):
    cfg = IntegrationConfig(abs_err=1e-4, seed=3)
    est = tail_probability(ProcessModel(n, Common(0.0), sigma), 1, s, cfg)
    exact = 1 - stats.norm.cdf(s / sigma) ** n
    assert abs(est.value - exact) <= max(2 * est.error, 1e-12)


def test_extreme_thresholds():
    model = ProcessModel(7, Auto(0.5))
    assert tail_probability(model, 3, -1e3).value == pytest.approx(1.0, abs=1e-12)
    assert tail_probability(model, 3, 1e3).value == pytest.approx(0.0, abs=1e-12)


def test_location_shift():
    base = tail_probability(ProcessModel(7, Auto(0.2)), 3, 3.0)
    shifted = tail_probability(ProcessModel(7, Auto(0.2), theta0=1.0), 3, 6.0)
    assert shifted.value == pytest.approx(base.value, abs=base.error + shifted.error)


# -- Benjamini-Hochberg ----------------------------------------------------------------

def test_bh_examples():
    np.testing.assert_allclose(bh_adjust([0.01, 0.02, 0.5]), [0.03, 0.03, 0.5])
    np.testing.assert_allclose(bh_adjust([0.04, 0.01, 0.03, 0.005]), [0.04, 0.02, 0.04, 0.02])
    np.testing.assert_allclose(bh_adjust([0.2] * 5), [0.2] * 5)
    assert bh_adjust([]).size == 0


def test_bh_rejects_invalid():
    with pytest.raises(ValueError):
        bh_adjust([0.1, 1.2])
    with pytest.raises(ValueError):
        bh_adjust([np.nan])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_bh_properties(p, rnd):
    p = np.array(p)
    q = bh_adjust(p)
    np.testing.assert_array_equal(q, _hand_bh(p))
    assert (q >= p).all() and (q <= 1).all()
    perm = list(range(p.size))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(bh_adjust(p[perm]), q[perm])


# -- batches ----------------------------------------------------------------------------

def test_batch_single_matches_tail():
    x = Series("a", [0.3, 1.2, -0.4, 2.0, 0.1, 0.7, -1.0])
    model = ProcessModel(7, Auto(0.4))
    rep = batch_pvalues([x], model, 3)
    scan = scan_statistic(x, 3)
    est = tail_probability(model, 3, scan.statistic)
    assert rep.rows[0].p == est.value
    assert rep.rows[0].p_error == est.error
    assert rep.rows[0].p_bh == est.value


def test_batch_identical_series():
    v = [0.5, 1.0, 2.0, -0.5, 0.0, 1.5]
    series = [Series(f"s{i}", v) for i in range(3)]
    rep = batch_pvalues(series, ProcessModel(6, Common(0.2)), 2)
    p = rep.pvalues()
    assert p[0] == p[1] == p[2]


def test_batch_deterministic_and_threaded():
    rng = stream(4)
    model = ProcessModel(15, Auto(0.3), 2.0, StudentT(6.0))
    series = [sample_process(model.with_length(n), rng, id=f"x{n}") for n in (10, 15, 20, 12)]
    cfg = IntegrationConfig(abs_err=1e-3, seed=9)
    a = batch_pvalues(series, model, 4, cfg)
    b = batch_pvalues(series, model, 4, cfg, workers=3)
    assert a == b
    assert [r.n for r in a.rows] == [10, 15, 20, 12]
    assert a.meta["seed"] == 9


def test_batch_records_failures():
    series = [Series("ok", [1.0, 2.0, 3.0, 4.0]), Series("short", [1.0, 2.0])]
    rep = batch_pvalues(series, ProcessModel(4, Auto(0.2)), 3)
    assert rep.rows[0].error is None and rep.rows[1].error is not None
    assert np.isnan(rep.rows[1].p)
    assert rep.rows[0].p_bh == rep.rows[0].p
    assert rep.meta["failed"] == 1


def test_batch_model_callable():
    series = [Series("a", [1.0, 0.0, 2.0, 1.0]), Series("b", [0.0, 0.0, 0.0, 3.0, 1.0])]
    rep = batch_pvalues(series, lambda x: ProcessModel(x.n, Common(0.1), sigma=1.0 + x.n), 2)
    assert all(r.error is None for r in rep.rows)


def test_null_pvalues_uniform():
    model = ProcessModel(40, Auto(0.2), 4.0, StudentT(7.0))
    cfg = IntegrationConfig(abs_err=5e-3, seed=0)
    series = [sample_process(model, stream(2024, i), id=f"n{i}") for i in range(500)]
    p = batch_pvalues(series, model, 10, cfg).pvalues()
    assert stats.kstest(p, "uniform").pvalue > 0.01
