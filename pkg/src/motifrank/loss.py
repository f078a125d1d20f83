"""Prediction head, squared error plus pairwise ranking hinge, and deterministic ranking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import DimensionError, NumericalError, ValidationError


@dataclass
class PredictionHead:
    weight: Parameter  # 2u
    bias: Parameter    # scalar, stored as shape (1,)

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, prefix: str = "head"):
        bound = 1.0 / np.sqrt(2 * hidden)
        return cls(Parameter(rng.uniform(-bound, bound, 2 * hidden), name=f"{prefix}.weight"),
                   Parameter(np.zeros(1), name=f"{prefix}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def predict(E_s, E_r, head: PredictionHead) -> Tensor:
    """Per-stock score from the affine map over ``[e_i; e_bar_i]``."""
    E_s, E_r = ag.as_tensor(E_s), ag.as_tensor(E_r)
    if E_s.shape != E_r.shape:
        raise DimensionError(f"sequential {E_s.shape} and relational {E_r.shape} embeddings differ")
    if head.weight.shape != (2 * E_s.shape[1],):
        raise DimensionError(
            f"head expects {head.weight.shape[0]} inputs, embeddings give {2 * E_s.shape[1]}")
    z = ag.concat([E_s, E_r], axis=1) @ ag.reshape(head.weight, (-1, 1)) + head.bias
    return ag.reshape(z, (-1,))


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValidationError(f"ranking weight alpha must be >= 0, got {self.alpha}")


def _prepare(pred, target, mask):
    pred = ag.as_tensor(pred)
    r = np.asarray(target, dtype=np.float64)
    if pred.shape != r.shape or pred.ndim != 1:
        raise DimensionError(f"prediction {pred.shape} and target {r.shape} must be equal-length vectors")
    m = np.isfinite(r) if mask is None else np.asarray(mask, dtype=bool) & np.isfinite(r)
    return pred, np.where(m, r, 0.0), m.astype(np.float64)


def regression_term(pred, target, mask=None) -> Tensor:
    pred, r, m = _prepare(pred, target, mask)
    return ag.tsum(ag.square(pred - r) * m)


def ranking_term(pred, target, mask=None) -> Tensor:
    """Sum over all ordered pairs of ``max(0, -(p_i - p_j)(r_i - r_j))``."""
    pred, r, m = _prepare(pred, target, mask)
    n = pred.shape[0]
    dp = ag.reshape(pred, (n, 1)) - ag.reshape(pred, (1, n))
    dr = (r[:, None] - r[None, :]) * (m[:, None] * m[None, :])
    return ag.tsum(ag.relu(-(dp * dr)))


def combined_loss(pred, target, alpha: float | LossConfig = 1.0, mask=None) -> Tensor:
    """``||p - r||^2 + alpha * ranking_term``; stocks with no target (NaN or masked) drop out."""
    alpha = alpha.alpha if isinstance(alpha, LossConfig) else LossConfig(alpha).alpha
    reg = regression_term(pred, target, mask)
    if alpha == 0:
        return reg
    return reg + alpha * ranking_term(pred, target, mask)


@dataclass(frozen=True)
class RankedList:
    order: np.ndarray   # stock indices, best first
    scores: np.ndarray

    def top(self, k: int) -> np.ndarray:
        return self.order[:k]

    def rank_of(self, stock: int) -> int:
        """1-based position of ``stock``."""
        return int(np.nonzero(self.order == stock)[0][0]) + 1


def rank_stocks(scores, tickers: Sequence[str] | None = None) -> RankedList:
    """Descending stable sort; equal scores keep universe order."""
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    bad = np.nonzero(~np.isfinite(s))[0]
    if len(bad):
        who = tickers[bad[0]] if tickers is not None else f"index {bad[0]}"
        raise NumericalError(f"non-finite score for stock {who}")
    return RankedList(np.argsort(-s, kind="stable"), s.copy())
