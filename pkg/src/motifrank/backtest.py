"""Top-k trading simulation and the evaluation metrics: MSE, MRR, IRR, NPV and Sharpe ratio."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MetricError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TradingConfig:
    top_k: int = 1
    principal: float = 1000.0
    risk_free: float = 0.0      # daily rate
    annualization: int = 252

    def __post_init__(self):
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")
        if not self.principal > 0:
            raise ValidationError("principal must be positive")


# ---------------------------------------------------------------- metrics

def mse(pred, target) -> float:
    """Mean squared difference over all stock-days with a finite target."""
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(target, dtype=np.float64)
    if p.shape != r.shape:
        raise MetricError(f"prediction shape {p.shape} != target shape {r.shape}")
    ok = np.isfinite(r)
    if not ok.any():
        raise MetricError("mse of an empty series")
    return float(np.mean((p[ok] - r[ok]) ** 2))


def true_best(returns: np.ndarray) -> int:
    """Index of the highest realised return; ties go to the lowest index, NaN never wins."""
    r = np.where(np.isfinite(returns), returns, -np.inf)
    return int(np.argmax(r))


def mrr(rankings: Sequence[np.ndarray], returns: np.ndarray) -> float:
    """Mean over days of 1 / (predicted rank of that day's best stock)."""
    if len(rankings) == 0:
        raise MetricError("mrr needs at least one day")
    returns = np.asarray(returns, dtype=np.float64)
    total = 0.0
    for order, r in zip(rankings, returns, strict=True):
        best = true_best(r)
        total += 1.0 / (int(np.nonzero(np.asarray(order) == best)[0][0]) + 1)
    return total / len(rankings)


def npv(cashflows: Sequence[float], rate: float) -> float:
    c = np.asarray(cashflows, dtype=np.float64)
    return float(np.sum(c / (1.0 + rate) ** np.arange(len(c))))


def irr_solve(cashflows: Sequence[float], lo: float = -0.999, hi: float = 10.0,
              tol: float = 1e-9) -> float:
    """Discount rate with zero NPV, by bisection on ``(lo, hi)``."""
    c = np.asarray(cashflows, dtype=np.float64)
    nz = c[c != 0]
    if len(nz) < 2 or np.all(nz > 0) or np.all(nz < 0):
        raise MetricError("no IRR: cashflows never change sign")
    f_lo, f_hi = npv(c, lo), npv(c, hi)
    if f_lo == 0:
        return lo
    if np.sign(f_lo) == np.sign(f_hi):
        raise MetricError(f"no IRR root in ({lo}, {hi})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = npv(c, mid)
        if abs(f_mid) < tol or hi - lo < 1e-15:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sharpe(daily_returns: Sequence[float], risk_free: float = 0.0, annualization: int = 252) -> float:
    """Annualised ratio of mean daily excess return to its sample standard deviation."""
    r = np.asarray(daily_returns, dtype=np.float64)
    if len(r) < 2:
        raise MetricError("Sharpe ratio needs at least two days")
    excess = r - risk_free
    sd = excess.std(ddof=1)
    if not sd > 1e-15 * max(1.0, np.abs(excess).max()):
        raise MetricError("Sharpe ratio undefined: zero return variance")
    return float(excess.mean() / sd * np.sqrt(annualization))


# ---------------------------------------------------------------- simulation

@dataclass
class BacktestReport:
    dates: list[str]
    selected: list[list[str]]
    day_returns: list[float]
    irr: float                   # cumulative simple return, as a fraction of principal
    mrr: float | None
    mse: float | None
    sharpe: float | None
    trades: int
    excluded_days: int
    config: dict = field(default_factory=dict)

    @property
    def cumulative(self) -> list[float]:
        return np.cumsum(self.day_returns).tolist()

    @property
    def profit(self) -> float:
        return self.irr * self.config.get("principal", 1000.0)

    def summary(self) -> dict:
        return {"irr": self.irr, "mrr": self.mrr, "mse": self.mse, "sharpe": self.sharpe,
                "trades": self.trades, "days": len(self.day_returns),
                "excluded_days": self.excluded_days, "config": self.config}

    def to_json(self) -> str:
        body = self.summary()
        body["daily"] = [{"date": d, "selected": s, "return": r}
                         for d, s, r in zip(self.dates, self.selected, self.day_returns)]
        return json.dumps(body, sort_keys=True, indent=2)

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(self.to_json() + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["date", "selected", "day_return", "cumulative"])
                for d, s, r, c in zip(self.dates, self.selected, self.day_returns, self.cumulative):
                    w.writerow([d, " ".join(s), repr(r), repr(c)])


def simulate(rankings: Sequence[np.ndarray], returns: np.ndarray, config: TradingConfig = TradingConfig(),
             dates: Sequence[str] | None = None, tickers: Sequence[str] | None = None,
             predictions: np.ndarray | None = None) -> BacktestReport:
    """Buy the top-k at day t's close, sell at t+1's close, equal weight, no reinvestment.

    ``returns[d]`` is the realised return over the holding period that follows ranking ``d``.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if len(rankings) != len(returns):
        raise ValidationError(f"{len(rankings)} rankings but {len(returns)} return rows")
    n = returns.shape[1] if returns.ndim == 2 else 0
    if config.top_k > n:
        raise ValidationError(f"top_k={config.top_k} exceeds universe size {n}")
    dates = list(dates) if dates is not None else [str(d) for d in range(len(returns))]
    names = list(tickers) if tickers is not None else [str(i) for i in range(n)]
    kept_days, picks, day_ret, kept_rows, kept_orders = [], [], [], [], []
    excluded = 0
    for d, (order, r) in enumerate(zip(rankings, returns)):
        chosen = np.asarray(order)[:config.top_k]
        got = r[chosen]
        if not np.all(np.isfinite(got)):
            excluded += 1
            continue
        kept_days.append(dates[d])
        picks.append([names[i] for i in chosen])
        day_ret.append(float(np.mean(got)))
        kept_rows.append(d)
        kept_orders.append(order)
    if excluded:
        log.warning("excluded %d day(s) with a missing realised return for a selected stock", excluded)
    irr = float(np.sum(day_ret)) if day_ret else 0.0
    rows = returns[kept_rows] if kept_rows else np.zeros((0, n))
    mrr_val = mrr(kept_orders, rows) if kept_orders else None
    mse_val = mse(np.asarray(predictions)[kept_rows], rows) if predictions is not None and kept_rows else None
    try:
        sr = sharpe(day_ret, config.risk_free, config.annualization)
    except MetricError:
        sr = None
    return BacktestReport(
        dates=kept_days, selected=picks, day_returns=day_ret, irr=irr, mrr=mrr_val, mse=mse_val,
        sharpe=sr, trades=2 * config.top_k * len(day_ret), excluded_days=excluded,
        config=asdict(config))
