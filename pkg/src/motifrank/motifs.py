"""Third-order motif catalog, motif adjacency matrices and motif densities.

Motif vertices are labelled 1, 2, 3 (k1, k2, k3). Vertices 1 and 3 are the
anchors: ``A_h[i, j]`` accumulates weighted instances in which graph nodes
``i`` and ``j`` sit on the anchors and any third node sits on vertex 2.

The catalog follows the usual directed-triad numbering (Benson et al.'s
M1..M13). Closed triads M1..M7 map Benson's (u, v, w) to (1, 2, 3); open
triads M8..M13 put the centre vertex u on label 2, so their anchors are the
two non-adjacent ends.

========  ==============================  =========================
motif     directed edges on (1, 2, 3)     shape
========  ==============================  =========================
M1        1>2 2>3 3>1                     cycle
M2        1<>2 2>3 3>1
M3        1<>2 2<>3 3>1
M4        1<>2 2<>3 1<>3                  fully bilateral triangle
M5        1>2 2>3 1>3                     feed-forward loop
M6        1<>3 1>2 3>2
M7        1<>3 2>1 2>3
M8        2>1 2>3                         out-star
M9        2>1 3>2                         path
M10       1>2 3>2                         in-star
M11       1<>2 2>3
M12       1<>2 3>2
M13       1<>2 2<>3                       bilateral wedge
========  ==============================  =========================
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import GraphError
from .graph import DirectedWeightedGraph, indicator_matrices, weight_matrices

LABELS = (1, 2, 3)
ANCHORS = frozenset({1, 3})
PAIRS = ((1, 2), (2, 3), (1, 3))

_CATALOG_EDGES = {
    "M1": [(1, 2), (2, 3), (3, 1)],
    "M2": [(1, 2), (2, 1), (2, 3), (3, 1)],
    "M3": [(1, 2), (2, 1), (2, 3), (3, 2), (3, 1)],
    "M4": [(1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1)],
    "M5": [(1, 2), (2, 3), (1, 3)],
    "M6": [(1, 3), (3, 1), (1, 2), (3, 2)],
    "M7": [(1, 3), (3, 1), (2, 1), (2, 3)],
    "M8": [(2, 1), (2, 3)],
    "M9": [(2, 1), (3, 2)],
    "M10": [(1, 2), (3, 2)],
    "M11": [(1, 2), (2, 1), (2, 3)],
    "M12": [(1, 2), (2, 1), (3, 2)],
    "M13": [(1, 2), (2, 1), (2, 3), (3, 2)],
}

# pair classes, oriented from the lower to the higher label of the pair
EMPTY, FORWARD, BACKWARD, BILATERAL = "0", ">", "<", "d"


@dataclass(frozen=True)
class MotifSpec:
    id: str
    edges: frozenset[tuple[int, int]]

    def pair_class(self, a: int, b: int) -> str:
        fwd, bwd = (a, b) in self.edges, (b, a) in self.edges
        if fwd and bwd:
            return BILATERAL
        if fwd:
            return FORWARD
        if bwd:
            return BACKWARD
        return EMPTY

    @property
    def classification(self) -> dict[tuple[int, int], str]:
        return {p: self.pair_class(*p) for p in PAIRS}

    @property
    def closed(self) -> bool:
        return EMPTY not in self.classification.values()

    def relabel(self, sigma: dict[int, int]) -> "MotifSpec":
        return MotifSpec(self.id, frozenset((sigma[a], sigma[b]) for a, b in self.edges))


@lru_cache(maxsize=None)
def motif_catalog() -> tuple[MotifSpec, ...]:
    return tuple(MotifSpec(k, frozenset(v)) for k, v in _CATALOG_EDGES.items())


def get_motif(motif_id: str) -> MotifSpec:
    for spec in motif_catalog():
        if spec.id == motif_id.upper():
            return spec
    raise KeyError(f"unknown motif {motif_id!r}; expected one of M1..M13")


def parse_motifs(text: str | Iterable[str]) -> list[MotifSpec]:
    ids = text.split(",") if isinstance(text, str) else list(text)
    return [get_motif(m.strip()) for m in ids if m.strip()]


@dataclass(frozen=True)
class AnchoredAutomorphismSet:
    motif_id: str
    representatives: tuple[tuple[int, int, int], ...]  # images of (1, 2, 3)


def anchored_automorphisms(spec: MotifSpec) -> AnchoredAutomorphismSet:
    """Anchor-preserving permutations, one per class modulo motif automorphisms."""
    seen: dict[frozenset, tuple[int, int, int]] = {}
    for perm in itertools.permutations(LABELS):
        sigma = dict(zip(LABELS, perm))
        if {sigma[a] for a in ANCHORS} != ANCHORS:
            continue
        image = spec.relabel(sigma).edges
        seen.setdefault(image, perm)
    return AnchoredAutomorphismSet(spec.id, tuple(seen.values()))


def _instances(spec: MotifSpec) -> list[MotifSpec]:
    """The motif relabelled by each anchored representative."""
    reps = anchored_automorphisms(spec).representatives
    return [spec.relabel(dict(zip(LABELS, perm))) for perm in reps]


@dataclass(frozen=True)
class MotifAdjacency:
    motif_id: str
    matrix: np.ndarray
    graph_fingerprint: str


def motif_adjacency(g: DirectedWeightedGraph, spec: MotifSpec) -> MotifAdjacency:
    """Weighted motif adjacency ``A_h`` via indicator/weight matrix products.

    For an instance with anchors ``(i, j)`` and middle node ``m`` the three pair
    terms factor as rows ``i, m`` / ``m, j`` / ``i, j``, so the middle-node sum
    is a matrix product. Zero diagonals of every indicator exclude ``m = i``,
    ``m = j`` and ``i = j``.
    """
    if g.num_edges == 0:
        raise GraphError("cannot normalise a motif adjacency matrix: graph has no edges")
    ind, wts = indicator_matrices(g), weight_matrices(g)
    by_class = {
        BILATERAL: (ind.Jd, wts.Wd),
        FORWARD: (ind.Js, wts.Ws),
        BACKWARD: (ind.Js.T, wts.Ws.T),
        EMPTY: (ind.J0, np.zeros_like(ind.J0)),
    }
    total = np.zeros((g.n, g.n))
    for inst in _instances(spec):
        (x12, w12), (x23, w23), (x13, w13) = (by_class[inst.pair_class(*p)] for p in PAIRS)
        inner = (x12 * w12) @ x23 + x12 @ (x23 * w23) + (x12 @ x23) * w13
        total += x13 * inner
    return MotifAdjacency(spec.id, total / g.num_edges, g.fingerprint())


ORACLE_MAX_NODES = 64


def motif_adjacency_oracle(g: DirectedWeightedGraph, spec: MotifSpec) -> MotifAdjacency:
    """Reference ``A_h`` by literal enumeration of anchored vertex triples."""
    n = g.n
    if n > ORACLE_MAX_NODES:
        raise GraphError(f"oracle refuses graphs above {ORACLE_MAX_NODES} nodes (got {n})")
    edges = set(g.edges())
    if not edges:
        raise GraphError("cannot normalise a motif adjacency matrix: graph has no edges")

    def cls(p, q):
        fwd, bwd = (p, q) in edges, (q, p) in edges
        return BILATERAL if fwd and bwd else FORWARD if fwd else BACKWARD if bwd else EMPTY

    def weight(p, q, c):
        if c == FORWARD:
            return g.weight(p, q)
        if c == BACKWARD:
            return g.weight(q, p)
        if c == BILATERAL:
            return g.weight(p, q) + g.weight(q, p)
        return 0.0

    table = [[cls(p, q) if p != q else None for q in range(n)] for p in range(n)]
    neighbours = [[q for q in range(n) if q != p and table[p][q] != EMPTY] for p in range(n)]
    out = np.zeros((n, n))
    for inst in _instances(spec):
        r12, r23, r13 = (inst.pair_class(*p) for p in PAIRS)
        for i in range(n):
            middles = range(n) if r12 == EMPTY else neighbours[i]
            for j in range(n):
                if i == j or table[i][j] != r13:
                    continue
                acc = 0.0
                for m in middles:
                    if m == i or m == j:
                        continue
                    if table[i][m] == r12 and table[m][j] == r23:
                        acc += weight(i, m, r12) + weight(m, j, r23) + weight(i, j, r13)
                out[i, j] += acc
    return MotifAdjacency(spec.id, out / len(edges), g.fingerprint())


def motif_channels(g: DirectedWeightedGraph, selected: Sequence[MotifSpec]) -> np.ndarray:
    """Stack ``A_h`` of each selected motif into an N x N x K tensor."""
    if not selected:
        raise ValueError("select at least one motif")
    return np.stack([motif_adjacency(g, s).matrix for s in selected], axis=2)


# ---------------------------------------------------------------- densities

@dataclass(frozen=True)
class MotifDensityReport:
    density: dict[str, float]
    counts: dict[str, int]
    connected_triads: int

    def to_dict(self) -> dict:
        return {"connected_triads": self.connected_triads,
                "counts": dict(self.counts), "density": dict(self.density)}


def _to_digraph(g: DirectedWeightedGraph) -> nx.DiGraph:
    d = nx.DiGraph()
    d.add_nodes_from(range(g.n))
    d.add_edges_from(g.edges())
    return d


@lru_cache(maxsize=None)
def _census_names() -> dict[str, str]:
    """Map networkx triad-census codes to catalog ids by censusing each motif."""
    names = {}
    for spec in motif_catalog():
        d = nx.DiGraph()
        d.add_nodes_from(LABELS)
        d.add_edges_from(spec.edges)
        census = nx.triadic_census(d)
        (code,) = [k for k, v in census.items() if v == 1]
        names[code] = spec.id
    return names


def motif_density(g: DirectedWeightedGraph,
                  catalog: Sequence[MotifSpec] | None = None) -> MotifDensityReport:
    """Share of weakly connected induced triads isomorphic to each motif."""
    catalog = motif_catalog() if catalog is None else catalog
    names = _census_names()
    census = nx.triadic_census(_to_digraph(g))
    counts = {names[code]: int(v) for code, v in census.items() if code in names}
    total = sum(counts.values())
    if total == 0:
        raise GraphError("motif density undefined: graph has no connected triads")
    wanted = [s.id for s in catalog]
    return MotifDensityReport(
        density={m: counts[m] / total for m in wanted},
        counts={m: counts[m] for m in wanted},
        connected_triads=total,
    )


def default_motif_selection(g: DirectedWeightedGraph) -> list[MotifSpec]:
    """Every catalog motif that actually occurs in ``g``."""
    report = motif_density(g)
    return [s for s in motif_catalog() if report.counts[s.id] > 0]
