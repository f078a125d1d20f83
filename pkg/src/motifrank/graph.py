"""Stock universe, typed relation tensors and the directed weighted relation graph."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphError, ValidationError

CATEGORIES = ("wiki", "industry")


@dataclass(frozen=True)
class StockUniverse:
    """Ordered tickers; the order is the canonical tie-break order everywhere."""

    tickers: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tickers = tuple(self.tickers)
        if len(set(tickers)) != len(tickers):
            dupes = sorted({t for t in tickers if tickers.count(t) > 1})
            raise ValidationError(f"duplicate tickers in universe: {dupes}")
        object.__setattr__(self, "tickers", tickers)
        object.__setattr__(self, "index", {t: k for k, t in enumerate(tickers)})

    def __len__(self) -> int:
        return len(self.tickers)

    @property
    def n(self) -> int:
        return len(self.tickers)

    def subset(self, keep: Iterable[str]) -> "StockUniverse":
        keep = set(keep)
        return StockUniverse(tuple(t for t in self.tickers if t in keep))


@dataclass(frozen=True)
class RelationTensor:
    """N x N x C multi-hot encoding of typed relations of one category."""

    category: str
    channels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown relation category {self.category!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"relation values must be N x N x C, got {v.shape}")
        if v.shape[2] != len(self.channels):
            raise ValidationError(
                f"{v.shape[2]} relation channels but {len(self.channels)} channel names")
        if not np.all((v == 0) | (v == 1)):
            raise ValidationError("relation values must be binary")
        if v.shape[0] and np.any(v[np.arange(v.shape[0]), np.arange(v.shape[0]), :]):
            raise ValidationError("relation tensor has a self-relation on the diagonal")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def empty(cls, category: str, n: int) -> "RelationTensor":
        return cls(category, (), np.zeros((n, n, 0)))

    @classmethod
    def from_edges(cls, category: str, n: int, edges: Iterable[tuple[int, int, str]],
                   channels: Sequence[str] | None = None) -> "RelationTensor":
        """Build from ``(source, target, relation_id)`` directed triples."""
        edges = list(edges)
        names = list(channels) if channels is not None else sorted({e[2] for e in edges})
        pos = {c: k for k, c in enumerate(names)}
        v = np.zeros((n, n, len(names)))
        for i, j, rel in edges:
            if i == j:
                raise ValidationError(f"self-relation on node {i} ({rel})")
            v[i, j, pos[rel]] = 1.0
        return cls(category, tuple(names), v)


def stack_relations(*rels: RelationTensor) -> np.ndarray:
    """Concatenate the channel axes of several relation tensors."""
    if not rels:
        raise ValidationError("nothing to stack")
    n = rels[0].n
    for r in rels:
        if r.n != n:
            raise ValidationError(f"relation tensors disagree on N: {r.n} vs {n}")
    return np.concatenate([r.values for r in rels], axis=2)


@dataclass(frozen=True)
class DirectedWeightedGraph:
    """Edge set and positive weights, stored as a dense matrix (0 = no edge)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError(f"weight matrix must be square, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise GraphError("edge weights must be finite and positive")
        if np.any(np.diag(w) != 0):
            raise GraphError("graph has self-loops")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights > 0

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.weights))]

    def weight(self, i: int, j: int) -> float:
        return float(self.weights[i, j])

    def fingerprint(self) -> str:
        return hashlib.sha256(self.weights.tobytes()).hexdigest()[:16]

    @classmethod
    def from_edges(cls, n: int, edges) -> "DirectedWeightedGraph":
        """``edges`` is a mapping ``{(i, j): weight}`` or an iterable of pairs (unit weight)."""
        w = np.zeros((n, n))
        items = edges.items() if isinstance(edges, dict) else ((e, 1.0) for e in edges)
        for (i, j), wt in items:
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            if not wt > 0:
                raise GraphError(f"edge ({i}, {j}) has non-positive weight {wt}")
            w[i, j] = wt
        return cls(w)


def build_union_graph(rel: RelationTensor | np.ndarray,
                      channel_weights: Sequence[float] | None = None) -> DirectedWeightedGraph:
    """Collapse relation channels into one graph: ``w(i, j) = sum_c weight_c * rel[i, j, c]``."""
    values = rel.values if isinstance(rel, RelationTensor) else np.asarray(rel, dtype=np.float64)
    c = values.shape[2]
    cw = np.ones(c) if channel_weights is None else np.asarray(channel_weights, dtype=np.float64)
    if cw.shape != (c,):
        raise ValidationError(f"expected {c} channel weights, got {cw.shape}")
    if np.any(cw < 0):
        raise ValidationError("channel weights must be nonnegative")
    return DirectedWeightedGraph(values @ cw)


@dataclass(frozen=True)
class IndicatorMatrices:
    J: np.ndarray
    Js: np.ndarray
    Jd: np.ndarray
    J0: np.ndarray
    Jn: np.ndarray


@dataclass(frozen=True)
class WeightMatrices:
    W: np.ndarray
    Ws: np.ndarray
    Wd: np.ndarray


def indicator_matrices(g: DirectedWeightedGraph) -> IndicatorMatrices:
    a = g.adjacency.astype(np.float64)
    at = a.T
    jn = 1.0 - np.eye(g.n)
    return IndicatorMatrices(
        J=a,
        Js=a * (1.0 - at),
        Jd=a * at,
        J0=(1.0 - a) * (1.0 - at) * jn,
        Jn=jn,
    )


def weight_matrices(g: DirectedWeightedGraph) -> WeightMatrices:
    ind = indicator_matrices(g)
    w = g.weights.copy()
    return WeightMatrices(W=w, Ws=w * ind.Js, Wd=(w + w.T) * ind.Jd)
