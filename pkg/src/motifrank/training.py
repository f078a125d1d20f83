"""Model assembly, the training loop, grid search, and checkpoint files."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .attention import AttentionParams, Compressor, NeighborIndex, relational_embed
from .autograd import AdamState, Parameter, Tape, Tensor
from .backtest import TradingConfig, mrr, simulate
from .errors import NumericalError, ValidationError
from .features import FeatureSet, Split
from .graph import DirectedWeightedGraph, RelationTensor, build_union_graph
from .loss import PredictionHead, combined_loss, predict, rank_stocks
from .lstm import LstmParams, sequence_embed
from .motifs import default_motif_selection, get_motif, motif_channels

log = logging.getLogger(__name__)

GRID = {
    "window": (2, 4, 8, 16, 32),
    "hidden": (16, 32, 64, 128, 256),
    "alpha": (0.1, 1, 5, 10, 15, 20),
    "heads": tuple(range(1, 9)),
}


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    window: int = 8
    hidden: int = 32
    alpha: float = 1.0
    heads: int = 2
    lr: float = 0.001
    epochs: int = 50
    patience: int = 10
    d_r: int = 4
    top_k: int = 1
    motifs: tuple[str, ...] | None = None   # None: every motif present in the source graph
    motif_source: str = "wiki"              # wiki | industry | all
    off_grid: bool = False

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a seed is required")
        if not self.off_grid:
            for name, allowed in GRID.items():
                if getattr(self, name) not in allowed:
                    raise ValidationError(
                        f"{name}={getattr(self, name)} is outside the grid {allowed}; set off_grid to override")
        if self.lr < 0 or self.epochs < 0 or self.patience < 1 or self.d_r < 1:
            raise ValidationError("lr and epochs must be >= 0, patience and d_r >= 1")
        if self.motif_source not in ("wiki", "industry", "all"):
            raise ValidationError(f"unknown motif source {self.motif_source!r}")
        if self.motifs is not None:
            object.__setattr__(self, "motifs", tuple(get_motif(m).id for m in self.motifs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["motifs"] = list(self.motifs) if self.motifs is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown training option(s): {sorted(extra)}")
        d = dict(d)
        if d.get("motifs") is not None:
            d["motifs"] = tuple(d["motifs"])
        return cls(**d)


# ---------------------------------------------------------------- relations

@dataclass(frozen=True)
class RelationContext:
    """Static per-pair input of the attention layer and the neighbour structure it implies."""

    raw: np.ndarray                 # N x N x C: wiki | industry | scaled motif channels
    channel_names: tuple[str, ...]
    neighbors: NeighborIndex
    motifs: tuple[str, ...]

    @property
    def channels(self) -> int:
        return self.raw.shape[2]


def motif_source_graph(wiki: RelationTensor, industry: RelationTensor, source: str) -> DirectedWeightedGraph:
    parts = {"wiki": [wiki], "industry": [industry], "all": [wiki, industry]}[source]
    values = np.concatenate([p.values for p in parts], axis=2)
    return build_union_graph(values)


def build_relation_context(wiki: RelationTensor, industry: RelationTensor,
                           motifs: Sequence[str] | None = None, source: str = "wiki") -> RelationContext:
    """Stack relation channels with motif channels rescaled to a maximum of 1.

    Raw motif adjacency values are divided by the edge count and end up orders of
    magnitude below the binary relation channels, so each one is max-scaled.
    """
    g = motif_source_graph(wiki, industry, source)
    if motifs is None:
        specs = default_motif_selection(g) if g.num_edges else []
    else:
        specs = [get_motif(m) for m in motifs]
    blocks = [wiki.values, industry.values]
    names = [f"wiki:{c}" for c in wiki.channels] + [f"industry:{c}" for c in industry.channels]
    if specs:
        mc = motif_channels(g, specs)
        peak = mc.max(axis=(0, 1))
        mc = mc / np.where(peak > 0, peak, 1.0)
        blocks.append(mc)
        names += [f"motif:{s.id}" for s in specs]
    raw = np.concatenate(blocks, axis=2)
    if raw.shape[2] == 0:
        raise ValidationError("no relation channels at all")
    raw.setflags(write=False)
    return RelationContext(raw, tuple(names), NeighborIndex.from_raw(raw), tuple(s.id for s in specs))


# ---------------------------------------------------------------- model

@dataclass
class Model:
    lstm: LstmParams
    compressor: Compressor
    attention: AttentionParams
    head: PredictionHead

    @classmethod
    def init(cls, config: TrainConfig, input_dim: int, channels: int) -> "Model":
        rng = np.random.default_rng(config.seed)
        return cls(
            LstmParams.init(config.hidden, input_dim, rng),
            Compressor.init(channels, config.d_r, rng),
            AttentionParams.init(config.heads, config.hidden, config.d_r, rng),
            PredictionHead.init(config.hidden, rng),
        )

    def parameters(self) -> list[Parameter]:
        return (self.lstm.parameters() + self.compressor.parameters()
                + self.attention.parameters() + self.head.parameters())

    def forward(self, chi: np.ndarray, ctx: RelationContext) -> Tensor:
        E_s = sequence_embed(chi, self.lstm)
        E_r = relational_embed(E_s, ctx.raw, self.compressor, self.attention, ctx.neighbors)
        return predict(E_s, E_r, self.head)

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.shape:
                raise ValidationError(f"parameter {p.name}: shape {state[p.name].shape} != {p.shape}")
            p.data = np.array(state[p.name], dtype=np.float64)


# ---------------------------------------------------------------- dataset

class MarketDataset:
    """Feature windows grouped by split; every read is counted per split."""

    PARTS = ("train", "validation", "test")

    def __init__(self, features: FeatureSet, split: Split):
        self.features = features
        self.split = split
        self.access: Counter = Counter()
        self._parts = {}
        for name in self.PARTS:
            rng = split.part(name)
            self._parts[name] = [k for k, t in enumerate(features.anchors) if rng.start <= t < rng.stop]

    def positions(self, part: str) -> list[int]:
        return list(self._parts[part])

    def part_of(self, pos: int) -> str:
        t = self.features.anchors[pos]
        for name in self.PARTS:
            if t in self.split.part(name):
                return name
        raise KeyError(pos)

    def get(self, pos: int) -> tuple[np.ndarray, np.ndarray]:
        self.access[self.part_of(pos)] += 1
        return self.features.X[pos], self.features.y[pos]

    def date(self, pos: int) -> str:
        return str(self.features.dates[self.features.anchors[pos]])

    @property
    def tickers(self) -> tuple[str, ...]:
        return self.features.tickers


# ---------------------------------------------------------------- training

@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mrr: list[float] = field(default_factory=list)
    val_irr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Evaluation:
    loss: float
    mrr: float | None
    irr: float
    predictions: np.ndarray
    returns: np.ndarray
    rankings: list[np.ndarray]
    dates: list[str]


def evaluate(model: Model, ds: MarketDataset, part: str, ctx: RelationContext, alpha: float,
             trading: TradingConfig = TradingConfig()) -> Evaluation:
    preds, rets, ranks, dates, losses = [], [], [], [], []
    for pos in ds.positions(part):
        X, y = ds.get(pos)
        if not np.isfinite(y).any():
            continue
        p = model.forward(X, ctx)
        losses.append(combined_loss(p, y, alpha).item())
        preds.append(p.data)
        rets.append(y)
        ranks.append(rank_stocks(p.data, ds.tickers).order)
        dates.append(ds.date(pos))
    if not preds:
        raise ValidationError(f"the {part} split has no day with a target")
    returns = np.stack(rets)
    report = simulate(ranks, returns, trading, dates, ds.tickers)
    return Evaluation(float(np.mean(losses)), mrr(ranks, returns), report.irr,
                      np.stack(preds), returns, ranks, dates)


def _diagnose(model: Model) -> str:
    parts = []
    for p in model.parameters():
        parts.append(f"{p.name}: max|w|={np.nanmax(np.abs(p.data)):.3g} "
                     f"finite={bool(np.all(np.isfinite(p.data)))}")
    return "; ".join(parts)


def train(config: TrainConfig, ds: MarketDataset, ctx: RelationContext,
          trading: TradingConfig | None = None) -> tuple[Model, TrainHistory]:
    """Adam over training days in calendar order; keep the epoch with the best validation IRR."""
    trading = trading or TradingConfig(top_k=config.top_k)
    model = Model.init(config, ds.features.X.shape[-1], ctx.channels)
    params = model.parameters()
    opt = AdamState(lr=config.lr)
    hist = TrainHistory()
    best_irr, best_state, stale = -np.inf, model.state(), 0
    train_days = ds.positions("train")
    for epoch in range(config.epochs):
        start = time.perf_counter()
        total, count = 0.0, 0
        for pos in train_days:
            X, y = ds.get(pos)
            if not np.isfinite(y).any():
                continue
            ag.zero_grads(params)
            try:
                with Tape() as tape:
                    loss = combined_loss(model.forward(X, ctx), y, config.alpha)
                tape.backward(loss)
                ag.adam_step(params, opt)
            except NumericalError as exc:
                raise NumericalError(
                    f"training diverged on {ds.date(pos)} (epoch {epoch}): {exc}; {_diagnose(model)}") from exc
            total += loss.item()
            count += 1
        ev = evaluate(model, ds, "validation", ctx, config.alpha, trading)
        hist.train_loss.append(total / max(count, 1))
        hist.val_loss.append(ev.loss)
        hist.val_mrr.append(ev.mrr)
        hist.val_irr.append(ev.irr)
        hist.seconds.append(time.perf_counter() - start)
        log.info("epoch %d train %.6g val loss %.6g mrr %.4f irr %.4f",
                 epoch, hist.train_loss[-1], ev.loss, ev.mrr, ev.irr)
        if ev.irr > best_irr:
            best_irr, best_state, stale = ev.irr, model.state(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state(best_state)
    return model, hist


# ---------------------------------------------------------------- grid search

@dataclass
class GridResult:
    best: TrainConfig
    cells: list[dict]
    sensitivity: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "cells": self.cells, "sensitivity": self.sensitivity}


def grid_search(grid: dict[str, Sequence], base: TrainConfig, ds: MarketDataset, ctx: RelationContext,
                seeds: Sequence[int] | None = None) -> GridResult:
    """Train every cell of ``grid`` (over overrides of ``base``) for each seed; pick by mean validation IRR."""
    axes = sorted(grid)
    values = [list(grid[a]) for a in axes]
    if not axes or any(not v for v in values):
        raise ValidationError("grid must have at least one value on every axis")
    seeds = list(seeds) if seeds is not None else [base.seed]
    cells = []
    for combo in itertools.product(*values):
        overrides = dict(zip(axes, combo))
        runs = []
        for s in seeds:
            cfg = replace(base, seed=s, **overrides)
            model, hist = train(cfg, ds, ctx)
            ev = evaluate(model, ds, "validation", ctx, cfg.alpha, TradingConfig(top_k=cfg.top_k))
            runs.append((ev.irr, ev.mrr))
        irr = np.array([r[0] for r in runs])
        mr = np.array([r[1] for r in runs])
        cells.append({"overrides": overrides, "seeds": seeds,
                      "val_irr": irr.tolist(), "val_mrr": mr.tolist(),
                      "val_irr_mean": float(irr.mean()), "val_irr_std": float(irr.std(ddof=0)),
                      "val_mrr_mean": float(mr.mean()), "val_mrr_std": float(mr.std(ddof=0))})
    best_cell = max(cells, key=lambda c: c["val_irr_mean"])   # first wins ties
    sensitivity = {}
    for a in axes:
        table = {}
        for v in grid[a]:
            hits = [c["val_irr_mean"] for c in cells if c["overrides"][a] == v]
            table[str(v)] = float(np.mean(hits))
        sensitivity[a] = table
    return GridResult(replace(base, **best_cell["overrides"]), cells, sensitivity)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "motifrank-checkpoint/1"


def checkpoint_dict(model: Model, config: TrainConfig, ctx: RelationContext | None = None,
                    extra: dict | None = None) -> dict:
    """JSON-ready dump: every parameter by name with its shape and row-major values."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "config": config.to_dict(),
        "params": {p.name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                   for p in model.parameters()},
    }
    if ctx is not None:
        body["channels"] = list(ctx.channel_names)
        body["motifs"] = list(ctx.motifs)
    if extra:
        body.update(extra)
    return body


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def save_checkpoint(path, model: Model, config: TrainConfig, ctx: RelationContext | None = None,
                    extra: dict | None = None) -> str:
    body = checkpoint_dict(model, config, ctx, extra)
    Path(path).write_text(canonical_json(body) + "\n")
    return digest(body)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], TrainConfig, dict]:
    body = json.loads(Path(path).read_text())
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a checkpoint of format {CHECKPOINT_FORMAT}")
    state = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in body["params"].items()}
    return state, TrainConfig.from_dict(body["config"]), body


def model_from_checkpoint(path, input_dim: int, ctx: RelationContext) -> tuple[Model, TrainConfig]:
    state, config, _ = load_checkpoint(path)
    model = Model.init(config, input_dim, ctx.channels)
    model.load_state(state)
    return model, config
