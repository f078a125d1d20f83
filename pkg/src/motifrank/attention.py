"""Relation-channel fusion, multi-head attention over related stocks, and propagation.

Everything is dense over the N x N pair grid with a fixed neighbour mask; for the
universe sizes involved this beats per-edge bookkeeping on the tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import DimensionError


@dataclass
class Compressor:
    """Affine map shared by every pair: raw channel vector (C) -> fused vector (d_r)."""

    weight: Parameter  # C x d_r
    bias: Parameter    # d_r

    @classmethod
    def init(cls, channels: int, d_r: int, rng: np.random.Generator, prefix: str = "compress"):
        bound = 1.0 / np.sqrt(max(channels, 1))
        return cls(Parameter(rng.uniform(-bound, bound, (channels, d_r)), name=f"{prefix}.weight"),
                   Parameter(np.zeros(d_r), name=f"{prefix}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def compress_channels(raw, comp: Compressor) -> Tensor:
    """N x N x C raw field -> N x N x d_r fused field ``a_ij = raw_ij @ weight + bias``."""
    raw = np.asarray(raw.data if isinstance(raw, Tensor) else raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[0] != raw.shape[1]:
        raise DimensionError(f"raw relation field must be N x N x C, got {raw.shape}")
    n, _, c = raw.shape
    if comp.weight.shape[0] != c:
        raise DimensionError(f"compressor expects {comp.weight.shape[0]} channels, field has {c}")
    flat = Tensor(raw.reshape(n * n, c))
    fused = flat @ comp.weight + comp.bias
    return ag.reshape(fused, (n, n, comp.weight.shape[1]))


@dataclass(frozen=True)
class NeighborIndex:
    """Neighbour mask from raw channels: ``j`` neighbours ``i`` iff the raw vector of (i, j) sums > 0."""

    mask: np.ndarray     # N x N bool, zero diagonal
    degree: np.ndarray   # N, neighbour count of each node

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "NeighborIndex":
        raw = np.asarray(raw, dtype=np.float64)
        if np.any(raw < 0):
            raise DimensionError("raw relation channels must be nonnegative")
        mask = raw.sum(axis=2) > 0
        np.fill_diagonal(mask, False)
        mask.setflags(write=False)
        deg = mask.sum(axis=1)
        deg.setflags(write=False)
        return cls(mask, deg)

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.nonzero(self.mask[i])[0]]


@dataclass
class AttentionParams:
    weight: Parameter  # K x (2u + d_r)
    bias: Parameter    # K

    @property
    def heads(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, heads: int, hidden: int, d_r: int, rng: np.random.Generator, prefix: str = "attn"):
        if heads < 1:
            raise DimensionError("need at least one attention head")
        width = 2 * hidden + d_r
        bound = 1.0 / np.sqrt(width)
        return cls(Parameter(rng.uniform(-bound, bound, (heads, width)), name=f"{prefix}.weight"),
                   Parameter(np.zeros(heads), name=f"{prefix}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def raw_scores(E_s: Tensor, fused: Tensor, params: AttentionParams, head: int) -> Tensor:
    """``w_k . [e_i; e_j; a_ij] + b_k`` for every ordered pair, as an N x N matrix."""
    E_s = ag.as_tensor(E_s)
    n, u = E_s.shape
    d_r = fused.shape[2]
    if params.weight.shape[1] != 2 * u + d_r:
        raise DimensionError(
            f"attention weight width {params.weight.shape[1]} != 2u + d_r = {2 * u + d_r}")
    w = ag.reshape(params.weight[head], (-1, 1))
    w_i, w_j, w_a = w[0:u], w[u:2 * u], w[2 * u:]
    s_i = E_s @ w_i                                   # N x 1, receiver term
    s_j = ag.transpose(E_s @ w_j)                     # 1 x N, neighbour term
    s_a = ag.reshape(ag.reshape(fused, (n * n, d_r)) @ w_a, (n, n))
    return s_i + s_j + s_a + params.bias[head]


def attention_scores(E_s: Tensor, fused: Tensor, params: AttentionParams, head: int,
                     nbrs: NeighborIndex) -> Tensor:
    """Softmax of the raw scores across each receiver's neighbour list (row); isolated rows are 0."""
    return ag.masked_softmax(raw_scores(E_s, fused, params, head), nbrs.mask, axis=1)


def propagate(E_s: Tensor, scores: list[Tensor], nbrs: NeighborIndex) -> Tensor:
    """``e_bar_i = sum_j sigmoid(mean_k g^k_ij) / d_j * e_j`` over neighbours ``j`` of ``i``."""
    if not scores:
        raise DimensionError("propagation needs at least one head")
    g = scores[0]
    for s in scores[1:]:
        g = g + s
    g = g * (1.0 / len(scores))
    inv_deg = np.where(nbrs.degree > 0, 1.0 / np.maximum(nbrs.degree, 1), 0.0)
    coeff = ag.sigmoid(g) * (nbrs.mask * inv_deg[None, :])
    return coeff @ ag.as_tensor(E_s)


def relational_embed(E_s: Tensor, raw: np.ndarray, comp: Compressor, params: AttentionParams,
                     nbrs: NeighborIndex) -> Tensor:
    fused = compress_channels(raw, comp)
    heads = [attention_scores(E_s, fused, params, k, nbrs) for k in range(params.heads)]
    return propagate(E_s, heads, nbrs)
