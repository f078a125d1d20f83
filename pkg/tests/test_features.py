import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motifrank.errors import ValidationError
from motifrank.features import (FEATURE_NAMES, FundamentalPanel, PricePanel, QuarterlyStatements,
                                UniverseCriteria, align_quarterly_to_daily, assemble_features,
                                boundaries_from_counts, chronological_split, daily_fundamentals,
                                filter_universe, forward_fill, fundamental_factors,
                                impute_cross_sectional_median, moving_averages, normalize_prices,
                                one_day_return, zscore_cross_section)

Q = np.array(["2019-12-31", "2020-03-31"], dtype="datetime64[D]")


def stmt_row(gp=50.0, rev=200.0, ni=10.0, psd=2.0, aos=4.0, assets=300.0, liab=100.0, eq=200.0):
    return [gp, rev, ni, psd, aos, assets, liab, eq]


def calendar(days, start="2020-01-02"):
    return np.busday_offset(np.datetime64(start, "D"), np.arange(days), roll="forward")


def flat_fund(tickers, rows=None):
    rows = rows or [stmt_row(), stmt_row()]
    return FundamentalPanel({t: QuarterlyStatements(Q, np.array(rows)) for t in tickers})


def test_normalize_examples():
    p = PricePanel(calendar(3), ("A", "B"), np.array([[5.0, 7.0], [10.0, 7.0], [8.0, 7.0]]))
    out = normalize_prices(p).close
    np.testing.assert_array_equal(out[:, 0], [0.5, 1.0, 0.8])
    np.testing.assert_array_equal(out[:, 1], [1.0, 1.0, 1.0])
    with pytest.raises(ValidationError, match="B"):
        normalize_prices(PricePanel(calendar(2), ("A", "B"), np.array([[1.0, np.nan], [2.0, np.nan]])))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=40))
def test_normalize_max_is_one(xs):
    out = normalize_prices(PricePanel(calendar(len(xs)), ("A",), np.array(xs)[:, None])).close
    assert out.max() == 1.0 and np.all(out > 0)


def test_moving_average_examples(rng):
    assert all(np.all(v[w - 1:] == 1.0) for w, v in moving_averages(np.ones(30)).items())
    ma = moving_averages(np.array([1.0, 2, 3, 4, 5]), (5,))[5]
    assert ma[4] == 3.0 and np.all(np.isnan(ma[:4]))
    x = rng.random(60)
    for w, v in moving_averages(x).items():
        for t in range(w - 1, 60):
            assert abs(v[t] - sum(x[t - w + 1:t + 1]) / w) <= 1e-12
    with pytest.raises(ValidationError):
        moving_averages(np.ones(10))


def test_one_day_return_examples():
    assert one_day_return(100.0, 101.0) == pytest.approx(0.01, abs=1e-15)
    assert one_day_return(100.0, 100.0) == 0.0
    assert one_day_return(100.0, 95.0) == pytest.approx(-0.05, abs=1e-15)
    assert np.isnan(one_day_return(100.0, np.nan))


def test_forward_fill_limit():
    x = np.array([1.0, np.nan, np.nan, np.nan, 5.0])[:, None]
    out = forward_fill(x, 2)[:, 0]
    np.testing.assert_array_equal(out[:3], [1, 1, 1])
    assert np.isnan(out[3]) and out[4] == 5


def test_fundamental_factor_examples():
    rows = [stmt_row(gp=50.0), stmt_row(gp=60.0, rev=240.0, ni=10.0, psd=2.0, aos=4.0)]
    f = fundamental_factors(QuarterlyStatements(Q, np.array(rows)))
    assert f[0, 0] == 0.25 and f[1, 1] == 2.0
    assert f[1, 2] == pytest.approx(0.2, abs=1e-15) and np.isnan(f[0, 2])
    assert f[0, 3] == 3.0 and f[0, 4] == 1.5
    zero = fundamental_factors(QuarterlyStatements(Q[:1], np.array([stmt_row(rev=0.0)])))
    assert np.isnan(zero[0, 0])


def test_alignment_examples():
    cal = np.arange(np.datetime64("2020-03-01"), np.datetime64("2020-06-30"))
    one = align_quarterly_to_daily(Q[1:], np.array([[1.0]]), cal)
    assert np.all(one == 1.0)
    two = align_quarterly_to_daily(Q, np.array([[1.0], [2.0]]), cal)[:, 0]
    step = int(np.argmax(two == 2.0))
    assert cal[step] == Q[1] and np.all(two[:step] == 1.0) and np.all(two[step:] == 2.0)
    lagged = align_quarterly_to_daily(Q, np.array([[1.0], [2.0]]), cal, lag_days=45)[:, 0]
    assert cal[int(np.argmax(lagged == 2.0))] == Q[1] + np.timedelta64(45, "D")
    with pytest.raises(ValidationError):
        align_quarterly_to_daily(Q[:0], np.zeros((0, 5)), cal)


def test_imputation_and_zscore():
    x = np.array([[[1.0], [np.nan], [3.0], [10.0]]])
    assert impute_cross_sectional_median(x)[0, 1, 0] == 3.0
    z = zscore_cross_section(np.ones((2, 4, 3)))
    assert not z.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31))
def test_zscore_properties(n, seed):
    x = np.random.default_rng(seed).normal(5, 3, (3, n, 2))
    z = zscore_cross_section(x)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-12)
    perm = np.random.default_rng(seed + 1).permutation(n)
    np.testing.assert_allclose(zscore_cross_section(x[:, perm]), z[:, perm], atol=1e-14)


def test_constant_single_stock_window():
    fs = assemble_features(PricePanel(calendar(35), ("A",), np.full((35, 1), 20.0)), flat_fund(["A"]), 4)
    assert fs.X.shape[1:] == (1, 4, 10) and fs.feature_names == FEATURE_NAMES
    assert np.all(fs.X[:, :, :, :5] == 1.0) and not fs.X[:, :, :, 5:].any()


def test_identical_fundamentals_zscore_to_zero():
    close = 10 + np.random.default_rng(0).random((40, 3))
    fs = assemble_features(PricePanel(calendar(40), ("A", "B", "C"), close), flat_fund("ABC"), 3)
    assert not fs.X[..., 5:].any()


def test_hand_assembled_two_stock_fixture():
    cal = calendar(6)
    close = np.array([[10.0, 20.0], [11.0, 18.0], [12.0, 22.0], [9.0, 21.0], [10.0, 24.0], [13.0, 20.0]])
    fund = FundamentalPanel({
        "A": QuarterlyStatements(Q, np.array([stmt_row(gp=50.0), stmt_row(gp=60.0)])),
        "B": QuarterlyStatements(Q, np.array([stmt_row(gp=100.0, rev=200.0), stmt_row(gp=90.0, rev=300.0)])),
    })
    fs = assemble_features(PricePanel(cal, ("A", "B"), close), fund, window=2, ma_windows=(2, 3))
    # MA3 exists from day 2, so a 2-row window is complete from day 3
    assert list(fs.anchors) == [3, 4, 5] and fs.skipped == [1, 2]
    for k, t in enumerate(fs.anchors):
        for i in range(2):
            peak = close[:t + 1, i].max()
            for pos, day in enumerate((t - 1, t)):
                ma2 = close[day - 1:day + 1, i].mean()
                ma3 = close[day - 2:day + 1, i].mean()
                expected_tech = [close[day, i] / peak, ma2 / peak, ma3 / peak]
                np.testing.assert_allclose(fs.X[k, i, pos, :3], expected_tech, rtol=1e-15)
        if t < 5:
            np.testing.assert_allclose(fs.y[k], (close[t + 1] - close[t]) / close[t], rtol=1e-15)
        else:
            assert np.all(np.isnan(fs.y[k]))
    # both calendar days fall in the first quarter's regime (quarter 2019-12-31 is in force)
    # every fixture day sits in the first quarter's regime: GPM 0.25 vs 0.5 z-scores to -1, +1
    np.testing.assert_allclose(fs.X[:, :, :, 3], np.broadcast_to([[-1.0], [1.0]], (3, 2, 2)), rtol=1e-15)
    # EPS, ALR and leverage match across stocks and growth is missing for both: all standardise to 0
    assert not fs.X[:, :, :, [4, 5, 6, 7]].any()


def test_no_lookahead_by_perturbing_future():
    rng = np.random.default_rng(3)
    close = 20 + rng.random((60, 4)).cumsum(axis=0)
    tick = ("A", "B", "C", "D")
    rows = lambda k: [stmt_row(gp=50.0 + k, rev=200.0 + 3 * k), stmt_row(gp=55.0 + 2 * k, rev=210.0)]
    quarters = np.array(["2019-12-31", "2020-03-16"], dtype="datetime64[D]")
    fund = FundamentalPanel({t: QuarterlyStatements(quarters, np.array(rows(k))) for k, t in enumerate(tick)})
    base = assemble_features(PricePanel(calendar(60), tick, close), fund, 5)
    t = 45
    bumped = close.copy()
    bumped[t + 1:] *= 3.0
    # the second report moves to t+1 and its values change
    later = calendar(60)[t + 1]
    fund2 = FundamentalPanel({k: QuarterlyStatements(np.array([quarters[0], later]), v.values * [[1], [4]])
                              for k, v in fund.statements.items()})
    other = assemble_features(PricePanel(calendar(60), tick, bumped), fund2, 5)
    assert not np.array_equal(base.X[-1], other.X[-1])
    k = base.position(t)
    np.testing.assert_array_equal(base.X[k], other.X[other.position(t)])


def test_daily_fundamentals_shape():
    z = daily_fundamentals(flat_fund("AB"), ("A", "B"), calendar(10))
    assert z.shape == (10, 2, 5)


def test_filter_universe_examples():
    cal = calendar(100)
    close = np.full((100, 4), 10.0)
    close[50, 1] = 4.99
    close[:3, 2] = np.nan           # 97% coverage
    fund = flat_fund("ABCD")
    fund.statements["D"] = QuarterlyStatements(Q[:1], np.array([stmt_row()]))
    uni, report = filter_universe(PricePanel(cal, tuple("ABCD"), close), fund)
    assert uni.tickers == ("A",)
    assert report == {"coverage": 1, "min_price": 1, "statements": 1}
    ok, rep = filter_universe(PricePanel(cal, tuple("AB"), np.full((100, 2), 10.0)), flat_fund("AB"))
    assert ok.tickers == ("A", "B") and not any(rep.values())
    close[:2, 2] = 10.0
    uni, _ = filter_universe(PricePanel(cal, tuple("ABC"), close[:, :3]), flat_fund("ABC"),
                             UniverseCriteria(min_price=4.0))
    assert uni.tickers == ("A", "B", "C")


def test_chronological_split_examples():
    s = chronological_split(10, (6, 8))
    assert (s.train, s.validation, s.test) == (range(0, 6), range(6, 8), range(8, 10))
    long = chronological_split(756 + 252 + 237, boundaries_from_counts((756, 252, 237)))
    assert (len(long.train), len(long.validation), len(long.test)) == (756, 252, 237)
    for bad in ((0, 5), (6, 6), (8, 6), (6, 10)):
        with pytest.raises(ValidationError):
            chronological_split(10, bad)
    cal = calendar(10)
    assert chronological_split(cal, (str(cal[6]), str(cal[8]))).validation == range(6, 8)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 500).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n - 2)))
       .flatmap(lambda p: st.tuples(st.just(p[0]), st.just(p[1]), st.integers(p[1] + 1, p[0] - 1))))
def test_split_is_disjoint_ordered_exhaustive(args):
    n, a, b = args
    s = chronological_split(n, (a, b))
    assert list(s.train) + list(s.validation) + list(s.test) == list(range(n))
