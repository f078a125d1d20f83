"""Seeded synthetic market with a planted, learnable return signal.

Next-day returns are ``scale * (s_i + spillover * mean_j s_j) + noise * eps`` where
``s`` is a fixed linear combination of the same z-scored fundamental factors the
model sees, and ``j`` runs over the stocks sharing a bilateral wiki triangle (an
M4 instance) with ``i``. Extra wiki edges that close no new triangle add
distractor neighbours, so the triangle structure is only visible through motifs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetBundle, write_bundle
from .errors import ValidationError
from .features import FundamentalPanel, PricePanel, QuarterlyStatements, daily_fundamentals
from .graph import RelationTensor, StockUniverse, build_union_graph
from .motifs import get_motif, motif_adjacency

MIN_PRICE = 5.5


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    n: int = 30
    days: int = 400
    triangles: int | None = None            # default n // 4
    extra_wiki_edges: int | None = None     # default n // 2
    industry_channels: int = 2
    industry_density: float = 0.03
    coef: tuple[float, ...] = (1.0, 0.5, 0.5, 0.5, -0.5)   # gpm, eps, gpg, alr, leverage
    scale: float = 0.004
    spillover: float = 1.5
    noise: float = 0.002
    lag_days: int = 0
    start: str = "2020-01-02"

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a seed is required")
        if self.n < 3 or self.days < 40:
            raise ValidationError("need n >= 3 stocks and days >= 40")
        if len(self.coef) != 5:
            raise ValidationError("coef needs one weight per fundamental factor (5)")
        if 3 * self.n_triangles > self.n:
            raise ValidationError(f"{self.n_triangles} disjoint triangles do not fit in {self.n} stocks")

    @property
    def n_triangles(self) -> int:
        return max(1, self.n // 4) if self.triangles is None else self.triangles

    @property
    def n_extra(self) -> int:
        return max(1, self.n // 2) if self.extra_wiki_edges is None else self.extra_wiki_edges


def _calendar(start: str, days: int) -> np.ndarray:
    return np.busday_offset(np.datetime64(start, "D"), np.arange(days), roll="forward")


def _quarter_ends(first_day: np.datetime64, last_day: np.datetime64, before: int = 2) -> np.ndarray:
    """Calendar quarter ends from ``before`` quarters ahead of ``first_day`` through ``last_day``."""
    m = first_day.astype("datetime64[M]")
    q0 = m - (m.astype(int) % 3) - 3 * before       # first month of a quarter
    ends = []
    q = q0
    while True:
        end = (q + 3).astype("datetime64[D]") - 1
        if end > last_day:
            break
        ends.append(end)
        q = q + 3
    return np.array(ends, dtype="datetime64[D]")


def _wiki_graph(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, list]:
    n = spec.n
    adj = np.zeros((n, n), dtype=bool)
    order = rng.permutation(n)
    tris = [order[3 * k:3 * k + 3] for k in range(spec.n_triangles)]
    for a, b, c in tris:
        for i, j in ((a, b), (b, c), (a, c)):
            adj[i, j] = adj[j, i] = True
    added, tries = 0, 0
    while added < spec.n_extra and tries < 100 * spec.n_extra:
        tries += 1
        i, j = rng.choice(n, 2, replace=False)
        if adj[i, j] or np.any(adj[i] & adj[j]):
            continue        # keep it simple: no duplicate edge, no new triangle
        adj[i, j] = adj[j, i] = True
        added += 1
    return adj, tris


def _statements(spec: SyntheticSpec, quarters: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Quarters x 8 fields for one stock, smoothly varying and strictly positive where it matters."""
    q = len(quarters)
    revenue = rng.uniform(200, 2000) * np.exp(np.cumsum(rng.normal(0.02, 0.05, q)))
    gpm = np.clip(rng.uniform(0.2, 0.6) + np.cumsum(rng.normal(0, 0.03, q)), 0.05, 0.9)
    npm = np.clip(gpm * rng.uniform(0.2, 0.5) + rng.normal(0, 0.02, q), -0.2, 0.6)
    gp = gpm * revenue
    ni = npm * revenue
    psd = np.full(q, rng.uniform(0, 0.02)) * revenue
    aos = np.full(q, rng.uniform(50, 500))
    assets = revenue * rng.uniform(2, 5) * np.exp(np.cumsum(rng.normal(0, 0.03, q)))
    debt_share = np.clip(rng.uniform(0.3, 0.7) + np.cumsum(rng.normal(0, 0.03, q)), 0.1, 0.9)
    liabilities = assets * debt_share
    equity = assets - liabilities
    return np.column_stack([gp, revenue, ni, psd, aos, assets, liabilities, equity])


@dataclass
class SyntheticMarket:
    bundle: DatasetBundle
    spec: SyntheticSpec
    planted: np.ndarray          # days x n: planted return realised over (t-1, t]; row 0 is NaN
    signal: np.ndarray           # days x n own-factor signal s
    spill_mask: np.ndarray       # n x n: pairs sharing a bilateral triangle
    triangles: list = field(default_factory=list)


def simulate_market(spec: SyntheticSpec) -> SyntheticMarket:
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    tickers = tuple(f"S{k:03d}" for k in range(n))
    universe = StockUniverse(tickers)
    dates = _calendar(spec.start, spec.days)

    adj, tris = _wiki_graph(spec, rng)
    wiki = RelationTensor("wiki", ("partner",), adj[:, :, None].astype(np.float64))
    ind = np.zeros((n, n, spec.industry_channels))
    for c in range(spec.industry_channels):
        upper = np.triu(rng.random((n, n)) < spec.industry_density, 1)
        ind[:, :, c] = upper | upper.T
    industry = RelationTensor("industry", tuple(f"sector{c}" for c in range(spec.industry_channels)), ind)

    quarters = _quarter_ends(dates[0], dates[-1])
    fund = FundamentalPanel({t: QuarterlyStatements(quarters, _statements(spec, quarters, rng))
                             for t in tickers})
    z = daily_fundamentals(fund, tickers, dates, spec.lag_days)         # days x n x 5
    s = z @ np.asarray(spec.coef, dtype=np.float64)                      # days x n

    m4 = motif_adjacency(build_union_graph(wiki), get_motif("M4")).matrix > 0
    deg = m4.sum(axis=1)
    spill = np.where(deg > 0, (s @ m4.T.astype(np.float64)) / np.maximum(deg, 1), 0.0)

    eps = rng.standard_normal((spec.days, n))
    planted = np.full((spec.days, n), np.nan)
    planted[1:] = spec.scale * (s[:-1] + spec.spillover * spill[:-1]) + spec.noise * eps[1:]
    growth = np.vstack([np.ones(n), np.cumprod(1.0 + planted[1:], axis=0)])
    if np.any(growth <= 0):
        raise ValidationError("planted returns wiped out a stock; lower scale or noise")
    p0 = np.maximum(rng.uniform(20, 80, n), MIN_PRICE / growth.min(axis=0))
    close = growth * p0
    prices = PricePanel(dates, tickers, close)
    bundle = DatasetBundle(universe, prices, fund, wiki, industry)
    return SyntheticMarket(bundle, spec, planted, s, m4, [t.tolist() for t in tris])


def generate_synthetic(spec: SyntheticSpec, directory) -> DatasetBundle:
    """Write the synthetic bundle plus the generating spec; same seed, same bytes."""
    market = simulate_market(spec)
    directory = Path(directory)
    write_bundle(market.bundle, directory)
    body = asdict(spec)
    body["coef"] = list(spec.coef)
    (directory / "synthetic_spec.json").write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
    return market.bundle
