"""Model inputs: normalised prices, moving averages, fundamental factors, windows, targets."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .graph import StockUniverse

log = logging.getLogger(__name__)

STATEMENT_FIELDS = ("gp", "revenue", "ni", "psd", "aos", "assets", "liabilities", "equity")
FACTOR_NAMES = ("gpm", "eps", "gpg", "alr", "leverage")
MA_WINDOWS = (5, 10, 20, 30)
TECHNICAL_NAMES = ("close",) + tuple(f"ma{w}" for w in MA_WINDOWS)
# technical features are scaled by the as-of-day price maximum; fundamentals are z-scored per day
FEATURE_NAMES = tuple(f"{n}:maxnorm" for n in TECHNICAL_NAMES) + tuple(f"{n}:zscore" for n in FACTOR_NAMES)


@dataclass
class PricePanel:
    """Daily closes, ``close[t, i]`` for calendar day ``t`` and ticker ``i``; NaN marks a gap."""

    dates: np.ndarray
    tickers: tuple[str, ...]
    close: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.tickers = tuple(self.tickers)
        self.close = np.asarray(self.close, dtype=np.float64)
        if self.close.shape != (len(self.dates), len(self.tickers)):
            raise ValidationError(
                f"close shape {self.close.shape} != (days, tickers) = "
                f"({len(self.dates)}, {len(self.tickers)})")
        if len(self.dates) > 1 and np.any(np.diff(self.dates) <= np.timedelta64(0, "D")):
            raise ValidationError("price calendar is not strictly increasing")
        obs = self.close[np.isfinite(self.close)]
        if np.any(obs <= 0):
            raise ValidationError("prices must be positive")

    def select(self, tickers: Sequence[str]) -> "PricePanel":
        pos = {t: k for k, t in enumerate(self.tickers)}
        return PricePanel(self.dates, tuple(tickers), self.close[:, [pos[t] for t in tickers]])


@dataclass
class QuarterlyStatements:
    quarter_end: np.ndarray
    values: np.ndarray  # quarters x len(STATEMENT_FIELDS)

    def __post_init__(self):
        self.quarter_end = np.asarray(self.quarter_end, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.quarter_end), -1)
        if len(self.quarter_end) > 1 and np.any(np.diff(self.quarter_end) <= np.timedelta64(0, "D")):
            raise ValidationError("quarter-end dates must be strictly increasing")

    def field(self, name: str) -> np.ndarray:
        return self.values[:, STATEMENT_FIELDS.index(name)]


@dataclass
class FundamentalPanel:
    statements: dict[str, QuarterlyStatements]

    def select(self, tickers: Sequence[str]) -> "FundamentalPanel":
        return FundamentalPanel({t: self.statements[t] for t in tickers})


# ---------------------------------------------------------------- technical

def normalize_prices(panel: PricePanel) -> PricePanel:
    """Divide each series by its own maximum over the whole panel."""
    peak = np.full(len(panel.tickers), np.nan)
    for i, t in enumerate(panel.tickers):
        col = panel.close[:, i]
        if not np.isfinite(col).any():
            raise ValidationError(f"ticker {t} has no observed price")
        peak[i] = np.nanmax(col)
    return PricePanel(panel.dates, panel.tickers, panel.close / peak)


def moving_averages(series: np.ndarray, windows: Sequence[int] = MA_WINDOWS) -> dict[int, np.ndarray]:
    """Trailing simple means along axis 0; the first ``w - 1`` positions are NaN."""
    x = np.asarray(series, dtype=np.float64)
    if x.shape[0] < max(windows):
        raise ValidationError(
            f"series of length {x.shape[0]} is shorter than the longest window {max(windows)}")
    out = {}
    for w in windows:
        ma = np.full_like(x, np.nan)
        ma[w - 1:] = np.lib.stride_tricks.sliding_window_view(x, w, axis=0).mean(axis=-1)
        out[w] = ma
    return out


def one_day_return(p_t, p_next):
    """``(p_next - p_t) / p_t``; NaN where either price is missing."""
    p_t = np.asarray(p_t, dtype=np.float64)
    p_next = np.asarray(p_next, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (p_next - p_t) / p_t
    return np.where(np.isfinite(p_t) & np.isfinite(p_next) & (p_t > 0), r, np.nan)


def forward_fill(x: np.ndarray, limit: int) -> np.ndarray:
    """Fill NaN runs along axis 0 from the last observation, at most ``limit`` steps."""
    out = np.array(x, dtype=np.float64)
    run = np.zeros(out.shape[1:], dtype=int)
    last = np.full(out.shape[1:], np.nan)
    for t in range(out.shape[0]):
        seen = np.isfinite(out[t])
        run = np.where(seen, 0, run + 1)
        fill = ~seen & (run <= limit)
        out[t] = np.where(fill, last, out[t])
        last = np.where(seen, out[t], last)
    return out


# ---------------------------------------------------------------- fundamental

def fundamental_factors(stmts: QuarterlyStatements) -> np.ndarray:
    """Quarters x 5 table of (GPM, EPS, GPG, ALR, leverage); NaN where a denominator is 0."""
    gp, rev = stmts.field("gp"), stmts.field("revenue")
    ni, psd, aos = stmts.field("ni"), stmts.field("psd"), stmts.field("aos")
    assets, liab, eq = stmts.field("assets"), stmts.field("liabilities"), stmts.field("equity")
    prev_gp = np.concatenate([[np.nan], gp[:-1]])

    def ratio(num, den):
        with np.errstate(invalid="ignore", divide="ignore"):
            r = num / den
        return np.where(np.isfinite(r) & (den != 0), r, np.nan)

    return np.column_stack([
        ratio(gp, rev),
        ratio(ni - psd, aos),
        ratio(gp - prev_gp, prev_gp),
        ratio(assets, liab),   # assets over liabilities, as printed in the factor table
        ratio(assets, eq),
    ])


def align_quarterly_to_daily(quarter_end: np.ndarray, table: np.ndarray, calendar: np.ndarray,
                             lag_days: int = 0) -> np.ndarray:
    """Step function: each quarter's row holds from ``quarter_end + lag_days`` until superseded.

    Days before the first available quarter take the first row.
    """
    table = np.asarray(table, dtype=np.float64)
    if len(table) == 0:
        raise ValidationError("empty factor table")
    avail = np.asarray(quarter_end, dtype="datetime64[D]") + np.timedelta64(int(lag_days), "D")
    cal = np.asarray(calendar, dtype="datetime64[D]")
    idx = np.searchsorted(avail, cal, side="right") - 1
    return table[np.clip(idx, 0, None)]


def impute_cross_sectional_median(x: np.ndarray) -> np.ndarray:
    """Replace NaNs in ``x[t, i, f]`` with the median over stocks of that day and feature."""
    out = np.array(x, dtype=np.float64)
    missing = ~np.isfinite(out)
    if missing.any():
        with np.errstate(all="ignore"):
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                med = np.nanmedian(out, axis=1, keepdims=True)
        med = np.where(np.isfinite(med), med, 0.0)
        out = np.where(missing, np.broadcast_to(med, out.shape), out)
    return out


def zscore_cross_section(x: np.ndarray) -> np.ndarray:
    """Per day and feature, standardise over the stock axis (axis 1); zero variance gives 0."""
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (x - mu) / safe, 0.0)


def daily_fundamentals(fund: FundamentalPanel, tickers: Sequence[str], calendar: np.ndarray,
                       lag_days: int = 0) -> np.ndarray:
    """Days x stocks x 5 imputed, z-scored fundamental factors."""
    cols = []
    for t in tickers:
        s = fund.statements[t]
        cols.append(align_quarterly_to_daily(s.quarter_end, fundamental_factors(s), calendar, lag_days))
    raw = np.stack(cols, axis=1)
    return zscore_cross_section(impute_cross_sectional_median(raw))


# ---------------------------------------------------------------- assembly

@dataclass
class FeatureSet:
    """Per anchor day ``t``: window tensor ``X[k]`` (N x l x D) and next-day targets."""

    dates: np.ndarray
    tickers: tuple[str, ...]
    anchors: np.ndarray          # calendar indices t with a full window
    X: np.ndarray                # anchors x N x l x D
    y: np.ndarray                # anchors x N; NaN where the target is unavailable
    feature_names: tuple[str, ...] = FEATURE_NAMES
    skipped: list[int] = field(default_factory=list)

    @property
    def target_mask(self) -> np.ndarray:
        return np.isfinite(self.y)

    def position(self, day_index: int) -> int:
        hits = np.nonzero(self.anchors == day_index)[0]
        if not len(hits):
            raise KeyError(f"calendar day {day_index} has no feature window")
        return int(hits[0])


def assemble_features(prices: PricePanel, fund: FundamentalPanel, window: int,
                      lag_days: int = 0, ffill_limit: int = 5,
                      ma_windows: Sequence[int] = MA_WINDOWS) -> FeatureSet:
    """Build ``chi^t`` for every day with a complete ``window``-day history.

    Each window row is [close, MA5, MA10, MA20, MA30, GPM, EPS, GPG, ALR, leverage].
    Prices and moving averages are divided by the stock's maximum close observed up
    to and including ``t``, so nothing dated after ``t`` enters ``chi^t``.
    """
    if window < 1:
        raise ValidationError("window length must be >= 1")
    close = prices.close
    T, N = close.shape
    filled = forward_fill(close, ffill_limit)
    if T < max(ma_windows):
        raise ValidationError(f"{T} trading days cannot support a {max(ma_windows)}-day average")
    mas = moving_averages(filled, ma_windows)
    tech = np.stack([filled] + [mas[w] for w in ma_windows], axis=2)            # T x N x 5
    with np.errstate(invalid="ignore"):
        peak = np.fmax.accumulate(np.where(np.isfinite(close), close, -np.inf), axis=0)
    fundamentals = daily_fundamentals(fund, prices.tickers, prices.dates, lag_days)  # T x N x 5
    returns = np.full((T, N), np.nan)
    returns[:-1] = one_day_return(close[:-1], close[1:])

    anchors, xs, ys, skipped = [], [], [], []
    for t in range(window - 1, T):
        win = slice(t - window + 1, t + 1)
        scaled = tech[win] / peak[t][None, :, None]
        if not np.all(np.isfinite(scaled)) or not np.all(np.isfinite(peak[t])):
            skipped.append(t)
            continue
        x = np.concatenate([scaled, fundamentals[win]], axis=2)                   # l x N x D
        anchors.append(t)
        xs.append(np.transpose(x, (1, 0, 2)))
        ys.append(returns[t])
    if skipped:
        log.info("skipped %d day(s) without a complete %d-day history", len(skipped), window)
    if not anchors:
        raise ValidationError("no trading day has a complete feature window")
    return FeatureSet(
        dates=prices.dates, tickers=prices.tickers, anchors=np.array(anchors),
        X=np.stack(xs), y=np.stack(ys), skipped=skipped)


# ---------------------------------------------------------------- universe, splits

@dataclass(frozen=True)
class UniverseCriteria:
    min_price: float = 5.0
    min_coverage: float = 0.98
    require_statements: bool = True


def filter_universe(prices: PricePanel, fund: FundamentalPanel,
                    criteria: UniverseCriteria = UniverseCriteria()) -> tuple[StockUniverse, dict]:
    """Keep stocks that trade on enough days, never below ``min_price``, with every report."""
    T = len(prices.dates)
    expected = set()
    for s in fund.statements.values():
        expected.update(s.quarter_end.tolist())
    report = {"coverage": 0, "min_price": 0, "statements": 0}
    keep = []
    for i, t in enumerate(prices.tickers):
        col = prices.close[:, i]
        seen = np.isfinite(col)
        ok = True
        if T == 0 or seen.sum() / T < criteria.min_coverage:
            report["coverage"] += 1
            ok = False
        if seen.any() and np.nanmin(col) < criteria.min_price:
            report["min_price"] += 1
            ok = False
        if criteria.require_statements:
            s = fund.statements.get(t)
            complete = (s is not None and set(s.quarter_end.tolist()) >= expected
                        and np.all(np.isfinite(s.values)))
            if not complete:
                report["statements"] += 1
                ok = False
        if ok:
            keep.append(t)
    if not keep:
        raise ValidationError(f"no stock survives universe filtering: {report}")
    return StockUniverse(tuple(keep)), report


@dataclass(frozen=True)
class Split:
    train: range
    validation: range
    test: range

    def part(self, name: str) -> range:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


def chronological_split(calendar, boundaries: Sequence) -> Split:
    """Cut the calendar at the two boundaries (indices, or first validation/test dates)."""
    n = calendar if isinstance(calendar, int) else len(calendar)
    if len(boundaries) != 2:
        raise ValidationError("expected two boundaries: validation start and test start")
    cuts = []
    for b in boundaries:
        if isinstance(b, (int, np.integer)):
            cuts.append(int(b))
        else:
            if isinstance(calendar, int):
                raise ValidationError("date boundaries need a calendar")
            cal = np.asarray(calendar, dtype="datetime64[D]")
            cuts.append(int(np.searchsorted(cal, np.datetime64(b, "D"))))
    a, b = cuts
    if not 0 < a < b < n:
        raise ValidationError(f"split boundaries {tuple(boundaries)} invalid for {n} days")
    return Split(range(0, a), range(a, b), range(b, n))


def boundaries_from_counts(counts: Sequence[int]) -> tuple[int, int]:
    train, val, _ = counts
    return train, train + val
