"""CSV dataset files: loading with line-level validation, and writing back.

prices.csv      date,ticker,close
statements.csv  ticker,quarter_end,gp,revenue,ni,psd,aos,assets,liabilities,equity
relations.csv   source_ticker,target_ticker,relation_id,category,directed

``directed=0`` rows expand to both directions. Blank statement cells are missing values.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import STATEMENT_FIELDS, FundamentalPanel, PricePanel, QuarterlyStatements
from .graph import CATEGORIES, RelationTensor, StockUniverse

PRICE_HEADER = ("date", "ticker", "close")
STATEMENT_HEADER = ("ticker", "quarter_end") + STATEMENT_FIELDS
RELATION_HEADER = ("source_ticker", "target_ticker", "relation_id", "category", "directed")
FILES = {"prices": "prices.csv", "statements": "statements.csv", "relations": "relations.csv"}


@dataclass
class DatasetBundle:
    universe: StockUniverse
    prices: PricePanel
    fundamentals: FundamentalPanel
    wiki: RelationTensor
    industry: RelationTensor
    row_counts: dict = field(default_factory=dict)

    def relation(self, category: str) -> RelationTensor:
        return {"wiki": self.wiki, "industry": self.industry}[category]

    def equals(self, other: "DatasetBundle") -> bool:
        if self.universe.tickers != other.universe.tickers:
            return False
        if not (np.array_equal(self.prices.dates, other.prices.dates)
                and np.array_equal(self.prices.close, other.prices.close, equal_nan=True)):
            return False
        for t in self.universe.tickers:
            a, b = self.fundamentals.statements[t], other.fundamentals.statements[t]
            if not (np.array_equal(a.quarter_end, b.quarter_end)
                    and np.array_equal(a.values, b.values, equal_nan=True)):
                return False
        for cat in CATEGORIES:
            a, b = self.relation(cat), other.relation(cat)
            if a.channels != b.channels or not np.array_equal(a.values, b.values):
                return False
        return True


class _Reader:
    """Iterate a CSV file as dicts while remembering where each row came from."""

    def __init__(self, path: Path, header: tuple[str, ...]):
        self.path = Path(path)
        self.header = header

    def fail(self, line: int, column: str | None, msg: str):
        where = f"{self.path}:{line}" + (f": column {column}" if column else "")
        raise ValidationError(f"{where}: {msg}")

    def rows(self):
        if not self.path.exists():
            raise ValidationError(f"{self.path}: file not found")
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            head = next(reader, None)
            if head is None or tuple(h.strip() for h in head) != self.header:
                self.fail(1, None, f"header must be {','.join(self.header)}")
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(self.header):
                    self.fail(line, None, f"expected {len(self.header)} fields, got {len(row)}")
                yield line, dict(zip(self.header, (c.strip() for c in row)))

    def date(self, line, col, text):
        if len(text) != 10:
            self.fail(line, col, f"bad date {text!r}, expected YYYY-MM-DD")
        try:
            return np.datetime64(text, "D")
        except ValueError:
            self.fail(line, col, f"bad date {text!r}, expected YYYY-MM-DD")

    def number(self, line, col, text, allow_blank=False):
        if text == "" and allow_blank:
            return math.nan
        try:
            v = float(text)
        except ValueError:
            self.fail(line, col, f"not a number: {text!r}")
        if not math.isfinite(v):
            self.fail(line, col, f"not a finite number: {text!r}")
        return v


def load_prices(path) -> PricePanel:
    rd = _Reader(path, PRICE_HEADER)
    series: dict[str, dict] = {}
    for line, row in rd.rows():
        d = rd.date(line, "date", row["date"])
        t = row["ticker"]
        if not t:
            rd.fail(line, "ticker", "empty ticker")
        p = rd.number(line, "close", row["close"])
        if p <= 0:
            rd.fail(line, "close", f"price must be positive, got {p}")
        s = series.setdefault(t, {})
        if s and d <= max(s):
            rd.fail(line, "date", f"dates for {t} are not strictly increasing ({d})")
        s[d] = p
    if not series:
        raise ValidationError(f"{path}: no price rows")
    tickers = tuple(series)
    calendar = np.array(sorted({d for s in series.values() for d in s}), dtype="datetime64[D]")
    pos = {d: k for k, d in enumerate(calendar)}
    close = np.full((len(calendar), len(tickers)), np.nan)
    for i, t in enumerate(tickers):
        for d, p in series[t].items():
            close[pos[d], i] = p
    return PricePanel(calendar, tickers, close)


def load_statements(path, universe: StockUniverse) -> FundamentalPanel:
    rd = _Reader(path, STATEMENT_HEADER)
    rows: dict[str, list] = {}
    for line, row in rd.rows():
        t = row["ticker"]
        if t not in universe.index:
            rd.fail(line, "ticker", f"unknown ticker {t!r}")
        q = rd.date(line, "quarter_end", row["quarter_end"])
        vals = [rd.number(line, f, row[f], allow_blank=True) for f in STATEMENT_FIELDS]
        aos = vals[STATEMENT_FIELDS.index("aos")]
        if not math.isnan(aos) and aos <= 0:
            rd.fail(line, "aos", f"average outstanding shares must be positive, got {aos}")
        prev = rows.setdefault(t, [])
        if prev and q <= prev[-1][0]:
            rd.fail(line, "quarter_end", f"quarters for {t} are not strictly increasing ({q})")
        prev.append((q, vals))
    out = {}
    for t in universe.tickers:
        if t in rows:
            out[t] = QuarterlyStatements(np.array([r[0] for r in rows[t]]), np.array([r[1] for r in rows[t]]))
        else:
            out[t] = QuarterlyStatements(np.array([], dtype="datetime64[D]"),
                                         np.zeros((0, len(STATEMENT_FIELDS))))
    return FundamentalPanel(out)


def load_relations(path, universe: StockUniverse) -> tuple[RelationTensor, RelationTensor]:
    rd = _Reader(path, RELATION_HEADER)
    edges = {c: [] for c in CATEGORIES}
    for line, row in rd.rows():
        for col in ("source_ticker", "target_ticker"):
            if row[col] not in universe.index:
                rd.fail(line, col, f"unknown ticker {row[col]!r}")
        i, j = universe.index[row["source_ticker"]], universe.index[row["target_ticker"]]
        if i == j:
            rd.fail(line, "target_ticker", f"self-relation on {row['source_ticker']}")
        if not row["relation_id"]:
            rd.fail(line, "relation_id", "empty relation id")
        cat = row["category"]
        if cat not in CATEGORIES:
            rd.fail(line, "category", f"category must be wiki or industry, got {cat!r}")
        if row["directed"] not in ("0", "1"):
            rd.fail(line, "directed", f"directed must be 0 or 1, got {row['directed']!r}")
        edges[cat].append((i, j, row["relation_id"]))
        if row["directed"] == "0":
            edges[cat].append((j, i, row["relation_id"]))
    n = universe.n
    return tuple(RelationTensor.from_edges(c, n, edges[c]) for c in CATEGORIES)


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    prices = load_prices(directory / FILES["prices"])
    universe = StockUniverse(prices.tickers)
    fund = load_statements(directory / FILES["statements"], universe)
    wiki, industry = load_relations(directory / FILES["relations"], universe)
    counts = {
        "prices": int(np.isfinite(prices.close).sum()),
        "statements": sum(len(s.quarter_end) for s in fund.statements.values()),
        "relations": {"wiki": int(wiki.values.sum()), "industry": int(industry.values.sum())},
    }
    return DatasetBundle(universe, prices, fund, wiki, industry, counts)


# ---------------------------------------------------------------- writing

def _num(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_bundle(bundle: DatasetBundle, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / v for k, v in FILES.items()}
    with open(paths["prices"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_HEADER)
        for i, t in enumerate(bundle.prices.tickers):
            for d, p in zip(bundle.prices.dates, bundle.prices.close[:, i]):
                if np.isfinite(p):
                    w.writerow([str(d), t, repr(float(p))])
    with open(paths["statements"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATEMENT_HEADER)
        for t in bundle.universe.tickers:
            s = bundle.fundamentals.statements[t]
            for q, vals in zip(s.quarter_end, s.values):
                w.writerow([t, str(q)] + [_num(v) for v in vals])
    with open(paths["relations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RELATION_HEADER)
        tk = bundle.universe.tickers
        for cat in CATEGORIES:
            rel = bundle.relation(cat)
            for c, name in enumerate(rel.channels):
                v = rel.values[:, :, c]
                for i, j in zip(*np.nonzero(v)):
                    if v[j, i] and j < i:
                        continue   # already written as the undirected row (j, i)
                    w.writerow([tk[i], tk[j], name, cat, "0" if v[j, i] else "1"])
    return paths


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
