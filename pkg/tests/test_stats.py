import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from spatialq.errors import DataError
from spatialq.stats import (
    _T_TABLE,
    ci95_of_ratings,
    format_report,
    parse_subset,
    pearson,
    report,
    rmse,
    rmse_star,
    spearman,
    t_quantile_975,
)


# -- independent oracles ---------------------------------------------------------

def naive_pearson(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def naive_ranks(x):
    return [sum(v < a for v in x) + (sum(v == a for v in x) + 1) / 2 for a in x]


def naive_spearman(x, y):
    return naive_pearson(naive_ranks(x), naive_ranks(y))


def naive_rmse(s, p):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(s, p)) / len(s))


# -- pearson / spearman ----------------------------------------------------------

def test_pearson_examples():
    x = np.arange(10.0)
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -2 * x + 3) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DataError, match="undefined correlation"):
        pearson(x, np.ones(10))
    with pytest.raises(DataError):
        pearson([1.0], [2.0])


def test_spearman_examples():
    x = np.linspace(-2, 2, 15)
    assert spearman(x, np.exp(x)) == pytest.approx(1.0, abs=1e-15)
    assert naive_ranks([1, 2, 2, 3]) == [1, 2.5, 2.5, 4]
    from scipy.stats import rankdata
    np.testing.assert_array_equal(rankdata([1, 2, 2, 3]), [1, 2.5, 2.5, 4])
    with pytest.raises(DataError):
        spearman(x, np.zeros(15))


def test_criteria_match_naive_oracles_on_random_vectors_with_ties():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(2, 40))
        if trial % 2:
            x = rng.integers(0, 6, n).astype(float)  # many ties
            y = rng.integers(0, 6, n).astype(float)
        else:
            x, y = rng.standard_normal(n) * 30 + 50, rng.standard_normal(n) * 30 + 50
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        assert abs(pearson(x, y) - naive_pearson(x, y)) <= 1e-12
        assert abs(spearman(x, y) - naive_spearman(list(x), list(y))) <= 1e-12
        assert abs(rmse(x, y) - naive_rmse(x, y)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_and_monotone_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(30), rng.standard_normal(30)
    r, rho = pearson(x, y), spearman(x, y)
    assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-12)
    assert pearson(x, scale * y + shift) == pytest.approx(r, abs=1e-12)
    assert spearman(np.exp(x), y ** 3) == pytest.approx(rho, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    s, p, ci = 100 * rng.random(20), 100 * rng.random(20), 10 * rng.random(20)
    perm = rng.permutation(20)
    for fn in (pearson, spearman, rmse):
        assert fn(s[perm], p[perm]) == pytest.approx(fn(s, p), abs=1e-12)
    assert rmse_star(s[perm], p[perm], ci[perm]) == pytest.approx(rmse_star(s, p, ci), abs=1e-12)


# -- rmse / rmse_star ------------------------------------------------------------

def test_rmse_examples():
    s = np.array([10.0, 20, 30])
    assert rmse(s, s) == 0.0
    assert rmse(s, s + 10) == pytest.approx(10.0)
    assert rmse(s, s - 10) == pytest.approx(10.0)


def test_rmse_star_examples():
    assert rmse_star([50], [70], [5]) == pytest.approx(15.0)
    rng = np.random.default_rng(1)
    s = 100 * rng.random(50)
    err = rng.uniform(-5, 5, 50)
    assert rmse_star(s, s + err, np.abs(err) + rng.random(50)) == 0.0
    p = s + 20 * rng.standard_normal(50)
    assert rmse_star(s, p, np.zeros(50)) == rmse(s, p)
    with pytest.raises(DataError):
        rmse_star([1.0], [2.0], [-1.0])


def test_rmse_star_literal_form():
    s, p, ci = np.array([50.0, 40]), np.array([70.0, 40]), np.array([5.0, 5])
    assert rmse_star(s, p, ci, normalized=False) == pytest.approx(15.0)
    assert rmse_star(s, p, ci) == pytest.approx(15.0 / math.sqrt(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 19), st.floats(0, 50))
def test_rmse_star_bounded_and_monotone_in_each_ci(seed, i, bump):
    rng = np.random.default_rng(seed)
    s, p, ci = 100 * rng.random(20), 100 * rng.random(20), 10 * rng.random(20)
    base = rmse_star(s, p, ci)
    assert base <= rmse(s, p) + 1e-12
    wider = ci.copy()
    wider[i] += bump
    assert rmse_star(s, p, wider) <= base + 1e-12


# -- ci95 ------------------------------------------------------------------------

def test_ci95_examples():
    assert ci95_of_ratings([70, 70, 70]) == 0.0
    assert ci95_of_ratings([40, 60]) == pytest.approx(12.7062 * math.sqrt(200) / math.sqrt(2), abs=1e-9)
    assert ci95_of_ratings([40, 60]) == pytest.approx(127.06, abs=0.01)
    r = np.array([-1.0, 1.0] * 12 + [0.0])
    r = 50 + r / np.std(r, ddof=1) * 10  # n = 25, sample std exactly 10
    assert ci95_of_ratings(r) == pytest.approx(4.1278, abs=1e-9)
    with pytest.raises(DataError):
        ci95_of_ratings([50])


def test_t_table_matches_scipy_to_four_decimals():
    for df, value in _T_TABLE.items():
        assert value == pytest.approx(sps.t.ppf(0.975, df), abs=5e-5)
    for df in range(1, 201):
        assert t_quantile_975(df) == pytest.approx(sps.t.ppf(0.975, df), abs=2e-3)
    assert t_quantile_975(1000) == 1.96
    assert t_quantile_975(24) == 2.0639


# -- reports ---------------------------------------------------------------------

def _rows(n=30, seed=2):
    rng = np.random.default_rng(seed)
    conds = ["anchor", "lp7000", "noise15"]
    scenes = ["anechoic", "reverberant"]
    return [{"condition": conds[i % 3], "scene": scenes[i % 2], "mos": float(rng.uniform(0, 100)),
             "pred": float(rng.uniform(0, 100)), "ci95": 5.0} for i in range(n)]


def test_subset_all_matches_unfiltered_criteria():
    rows = _rows()
    table = report(rows, {"all": parse_subset("*")})
    s = [r["mos"] for r in rows]
    p = [r["pred"] for r in rows]
    assert table["all"]["pearson"] == pearson(s, p)
    assert table["all"]["rmse_star"] == rmse_star(s, p, [5.0] * len(rows))
    assert table["all"]["n"] == 30


def test_codecs_subset_drops_anchor_and_disjoint_subsets_partition():
    rows = _rows()
    table = report(rows, {
        "codecs": parse_subset("condition!=anchor"),
        "rev": parse_subset("scene==reverberant"),
        "dry": parse_subset("scene!=reverberant"),
        "rev_lp": parse_subset("scene==reverberant&condition==lp7000"),
    })
    assert table["codecs"]["n"] == 20
    assert table["rev"]["n"] + table["dry"]["n"] == 30
    assert table["rev_lp"]["n"] == 5


def test_empty_subset_reports_absent_values():
    table = report(_rows(), {"none": parse_subset("condition==missing")})
    assert table["none"] == {"pearson": None, "spearman": None, "rmse": None, "rmse_star": None, "n": 0}
    text = format_report(table)
    assert "none" in text and " -" in text


def test_format_report_json_schema():
    table = report(_rows(), {"all": parse_subset("*"), "codecs": parse_subset("condition!=anchor")})
    decoded = json.loads(format_report(table, as_json=True))
    assert set(decoded) == {"all", "codecs"}
    for entry in decoded.values():
        assert set(entry) == {"pearson", "spearman", "rmse", "rmse_star", "n"}
    text = format_report(table).splitlines()
    assert text[0].split() == ["subset", "pearson", "spearman", "rmse", "rmse_star", "n"]
    assert len(text) == 3


def test_parse_subset_errors():
    with pytest.raises(DataError):
        parse_subset("condition~anchor")
