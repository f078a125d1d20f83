"""Run configuration and the bundle -> features -> dataset -> model plumbing."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .backtest import BacktestReport, TradingConfig, simulate
from .data import DatasetBundle
from .errors import ValidationError
from .features import (FeatureSet, Split, UniverseCriteria, assemble_features,
                       chronological_split, filter_universe)
from .graph import RelationTensor
from .loss import rank_stocks
from .training import (MarketDataset, Model, RelationContext, TrainConfig,
                       build_relation_context)


@dataclass(frozen=True)
class SplitConfig:
    """Validation and test start, as calendar indices or YYYY-MM-DD; fractions when unset."""

    validation_start: int | str | None = None
    test_start: int | str | None = None
    train_fraction: float = 0.6
    validation_fraction: float = 0.2

    def boundaries(self, calendar: np.ndarray) -> tuple:
        n = len(calendar)
        a = self.validation_start
        b = self.test_start
        if a is None:
            a = int(round(self.train_fraction * n))
        if b is None:
            b = int(round((self.train_fraction + self.validation_fraction) * n))
        return a, b


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    trading: TradingConfig = TradingConfig()
    split: SplitConfig = SplitConfig()
    universe: UniverseCriteria = UniverseCriteria()
    lag_days: int = 0
    ffill_limit: int = 5

    def to_dict(self) -> dict:
        return {"train": self.train.to_dict(), "trading": asdict(self.trading),
                "split": asdict(self.split), "universe": asdict(self.universe),
                "lag_days": self.lag_days, "ffill_limit": self.ffill_limit}

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown run option(s): {sorted(extra)}")
        train = dict(d.pop("train", {}))
        if seed is not None:
            train["seed"] = seed
        if "seed" not in train:
            raise ValidationError("the run configuration needs a seed (train.seed or --seed)")

        def build(kind, key):
            try:
                return kind(**d.pop(key, {}))
            except TypeError as exc:
                raise ValidationError(f"bad {key} options: {exc}") from exc

        return cls(train=TrainConfig.from_dict(train), trading=build(TradingConfig, "trading"),
                   split=build(SplitConfig, "split"), universe=build(UniverseCriteria, "universe"), **d)

    @classmethod
    def load(cls, path, seed: int | None = None) -> "RunConfig":
        try:
            body = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{path}: cannot read run configuration: {exc}") from exc
        return cls.from_dict(body, seed)


@dataclass
class Prepared:
    bundle: DatasetBundle
    features: FeatureSet
    split: Split
    dataset: MarketDataset
    context: RelationContext
    exclusions: dict = field(default_factory=dict)


def _restrict(rel: RelationTensor, keep: list[int]) -> RelationTensor:
    return RelationTensor(rel.category, rel.channels, rel.values[np.ix_(keep, keep)])


def prepare(bundle: DatasetBundle, cfg: RunConfig, motifs=None) -> Prepared:
    """Filter the universe, build windows, split by calendar and derive relation channels.

    ``motifs`` overrides the configured motif selection (used for ablations).
    """
    universe, excluded = filter_universe(bundle.prices, bundle.fundamentals, cfg.universe)
    keep = [bundle.universe.index[t] for t in universe.tickers]
    prices = bundle.prices.select(universe.tickers)
    fund = bundle.fundamentals.select(universe.tickers)
    feats = assemble_features(prices, fund, cfg.train.window, cfg.lag_days, cfg.ffill_limit)
    split = chronological_split(prices.dates, cfg.split.boundaries(prices.dates))
    ds = MarketDataset(feats, split)
    wiki, industry = _restrict(bundle.wiki, keep), _restrict(bundle.industry, keep)
    chosen = cfg.train.motifs if motifs is None else motifs
    ctx = build_relation_context(wiki, industry, chosen, cfg.train.motif_source)
    return Prepared(bundle, feats, split, ds, ctx, excluded)


def backtest(model: Model, prep: Prepared, cfg: RunConfig, part: str = "test") -> BacktestReport:
    """Rank every day of ``part`` with ``model`` and trade the top-k."""
    ds = prep.dataset
    ranks, rets, preds, dates = [], [], [], []
    for pos in ds.positions(part):
        X, y = ds.get(pos)
        if not np.isfinite(y).any():
            continue
        p = model.forward(X, prep.context).data
        ranks.append(rank_stocks(p, ds.tickers).order)
        rets.append(y)
        preds.append(p)
        dates.append(ds.date(pos))
    if not ranks:
        raise ValidationError(f"no {part} day with realised returns")
    return simulate(ranks, np.stack(rets), cfg.trading, dates, ds.tickers, np.stack(preds))


def rank_day(model: Model, prep: Prepared, date: str | None = None):
    """Ranking for one anchor day (the latest available by default)."""
    f = prep.features
    if date is None:
        pos = len(f.anchors) - 1
    else:
        t = int(np.searchsorted(f.dates, np.datetime64(date, "D")))
        if t >= len(f.dates) or f.dates[t] != np.datetime64(date, "D"):
            raise ValidationError(f"{date} is not a trading day in the price file")
        pos = f.position(t)
    p = model.forward(f.X[pos], prep.context).data
    return str(f.dates[f.anchors[pos]]), rank_stocks(p, f.tickers)


def with_train(cfg: RunConfig, **overrides) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **overrides))
