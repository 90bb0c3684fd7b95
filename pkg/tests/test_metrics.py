import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtlaffect.errors import UndefinedMetricError
from mtlaffect.metrics import (MetricsReport, ccc, evaluate, macro_f1_au, macro_f1_expr, mean_report, p_mtl,
                               parse_metrics_text, per_au_f1)

from _oracles import ccc_oracle

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
series = st.lists(finite, min_size=2, max_size=30)


# -- CCC -------------------------------------------------------------------------


def test_ccc_perfect():
    assert ccc([0.1, 0.5, -0.2], [0.1, 0.5, -0.2]) == 1.0


def test_ccc_zero_covariance():
    assert ccc([0, 0, 0], [1, 2, 3]) == 0.0


def test_ccc_reversed():
    # direct formula: cov = -2/3, var = 2/3 each, equal means -> 2 * (-2/3) / (4/3)
    assert ccc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert ccc([1, 2, 3], [3, 2, 1]) == pytest.approx(ccc_oracle([1, 2, 3], [3, 2, 1]), abs=1e-15)


def test_ccc_empty():
    with pytest.raises(UndefinedMetricError):
        ccc([], [])


def test_ccc_constant_equal_series():
    assert ccc([2.0, 2.0], [2.0, 2.0]) == 1.0
    assert ccc([2.0, 2.0], [1.0, 1.0]) == 0.0


@settings(max_examples=300, deadline=None)
@given(series)
def test_ccc_self_is_one(x):
    x = np.array(x)
    assert ccc(x, x) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                                                      arrays(np.float64, n, elements=finite))))
def test_ccc_bounded_symmetric_and_matches_formula(xy):
    x, y = xy
    c = ccc(x, y)
    assert -1.0 <= c <= 1.0
    assert c == ccc(y, x)
    denom = x.var() + y.var() + (x.mean() - y.mean()) ** 2
    if denom > 1e-9:
        assert c == pytest.approx(ccc_oracle(x.tolist(), y.tolist()), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(series, st.floats(0.1, 5.0))
def test_ccc_scaling_a_perfect_match_lowers_it(x, k):
    # scaling one side of an identical pair by k != 1 cannot raise concordance
    x = np.array(x)
    if x.var() < 1e-6 or abs(k - 1.0) < 1e-3:
        return
    assert ccc(k * x, x) < 1.0
    assert ccc(k * x, x) == pytest.approx(2 * k * x.var() / ((k * k + 1) * x.var() + ((k - 1) * x.mean()) ** 2))


# -- expression macro-F1 -----------------------------------------------------------


def test_expr_perfect():
    y = np.arange(8).repeat(3)
    assert macro_f1_expr(y, y) == 1.0


def test_expr_binary_like():
    assert macro_f1_expr([0, 1, 0, 1], [0, 0, 1, 1]) == 0.5


def test_expr_no_overlap():
    assert macro_f1_expr([0, 0, 0], [1, 1, 1]) == 0.0


def test_expr_empty():
    with pytest.raises(UndefinedMetricError):
        macro_f1_expr([], [])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=1, max_size=40),
       st.permutations(range(8)))
def test_expr_bounds_and_invariances(pairs, relabel):
    p, y = np.array(pairs).T
    f = macro_f1_expr(p, y)
    assert 0.0 <= f <= 1.0
    perm = np.random.default_rng(len(pairs)).permutation(len(p))
    assert macro_f1_expr(p[perm], y[perm]) == f
    r = np.array(relabel)
    assert macro_f1_expr(r[p], r[y]) == pytest.approx(f, abs=1e-12)


# -- AU macro-F1 ---------------------------------------------------------------------


def test_au_perfect():
    y = np.random.default_rng(0).integers(0, 2, (20, 12))
    y[0] = 1
    assert macro_f1_au(y, y) == 1.0


def test_au_one_imperfect():
    y = np.ones((4, 12), dtype=int)
    y[2:] = 0
    p = y.copy()
    p[1, 0] = 0
    assert macro_f1_au(p, y) == pytest.approx((2 / 3 + 11) / 12, abs=1e-15)


def test_au_degenerate_flagged():
    y = np.ones((3, 12), dtype=int)
    y[:, 4] = 0
    f1, degen = per_au_f1(y, y)
    assert f1[4] == 0.0 and degen[4] and degen.sum() == 1


def test_au_masked_entries_ignored():
    y = np.array([[1] * 12, [0] * 12])
    p = np.array([[1] * 12, [1] * 12])
    m = np.array([[True] * 12, [False] * 12])
    assert macro_f1_au(p, y, m) == 1.0


def test_au_empty():
    with pytest.raises(UndefinedMetricError):
        macro_f1_au(np.zeros((0, 12)), np.zeros((0, 12)))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 25).flatmap(lambda n: st.tuples(arrays(np.int8, (n, 12), elements=st.integers(0, 1)),
                                                      arrays(np.int8, (n, 12), elements=st.integers(0, 1)))))
def test_au_bounds_and_row_permutation(py):
    p, y = py
    f = macro_f1_au(p, y)
    assert 0.0 <= f <= 1.0
    perm = np.random.default_rng(p.shape[0]).permutation(p.shape[0])
    assert macro_f1_au(p[perm], y[perm]) == f


# -- combined score and reports -------------------------------------------------------


def test_p_mtl_examples():
    assert abs(p_mtl(0.6742, 0.6663, 0.4013, 0.5558) - 1.6274) <= 5e-5 + 1e-12
    assert abs(p_mtl(0.6672, 0.6290, 0.4156, 0.5149) - 1.5786) <= 5e-5
    assert abs(p_mtl(0.7101, 0.6604, 0.5090, 0.5664) - 1.7607) <= 5e-5 + 1e-12


def test_report_text_round_trip():
    rep = MetricsReport(0.5, 0.25, 0.125, None, frames={"V": 3})
    parsed = parse_metrics_text(rep.to_text())
    assert parsed["ccc_v"] == 0.5 and parsed["f1_au"] is None and parsed["p_mtl"] is None
    assert parsed["frames_V"] == 3


def test_evaluate_uses_masks_and_threshold():
    preds = {"V": np.array([0.1, 0.2, 9.0]), "AU": np.full((3, 12), 0.6)}
    labels = {"V": np.array([0.1, 0.2, -5.0]), "A": np.zeros(3), "EXPR": np.zeros(3),
              "AU": np.ones((3, 12))}
    masks = {"V": np.array([True, True, False]), "A": np.zeros(3, bool), "EXPR": np.zeros(3, bool),
             "AU": np.ones((3, 12), bool)}
    rep = evaluate(preds, labels, masks)
    assert rep.ccc_v == 1.0 and rep.f1_au == 1.0 and rep.ccc_a is None
    assert evaluate(preds, labels, masks, au_threshold=0.7).f1_au == 0.0


def test_mean_report_components():
    a = MetricsReport(0.2, 0.4, 0.6, 0.8)
    b = MetricsReport(0.4, 0.6, 0.2, 0.0)
    m = mean_report([a, b])
    assert (m.ccc_v, m.ccc_a, m.f1_expr, m.f1_au) == pytest.approx((0.3, 0.5, 0.4, 0.4))
    assert m.p_mtl == pytest.approx(p_mtl(0.3, 0.5, 0.4, 0.4))
