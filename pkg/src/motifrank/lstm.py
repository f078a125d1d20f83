"""LSTM over each stock's feature window; the final hidden state is the sequential embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import DimensionError

GATES = ("f", "i", "c", "o")


@dataclass
class LstmParams:
    W_f: Parameter
    W_i: Parameter
    W_c: Parameter
    W_o: Parameter
    b_f: Parameter
    b_i: Parameter
    b_c: Parameter
    b_o: Parameter

    @property
    def hidden(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[1] - self.hidden

    def parameters(self) -> list[Parameter]:
        return [self.W_f, self.W_i, self.W_c, self.W_o, self.b_f, self.b_i, self.b_c, self.b_o]

    def check(self) -> None:
        u = self.hidden
        for g in GATES:
            W, b = getattr(self, f"W_{g}"), getattr(self, f"b_{g}")
            if W.shape != (u, self.W_f.shape[1]):
                raise DimensionError(f"gate {g}: weight shape {W.shape}, expected {(u, self.W_f.shape[1])}")
            if b.shape != (u,):
                raise DimensionError(f"gate {g}: bias shape {b.shape}, expected {(u,)}")

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: np.random.Generator, prefix: str = "lstm"):
        """Weights uniform in +-1/sqrt(u), biases zero."""
        bound = 1.0 / np.sqrt(hidden)
        kw = {}
        for g in GATES:
            kw[f"W_{g}"] = Parameter(rng.uniform(-bound, bound, (hidden, hidden + input_dim)),
                                     name=f"{prefix}.W_{g}")
        for g in GATES:
            kw[f"b_{g}"] = Parameter(np.zeros(hidden), name=f"{prefix}.b_{g}")
        return cls(**kw)

    @classmethod
    def zeros(cls, hidden: int, input_dim: int, prefix: str = "lstm"):
        kw = {f"W_{g}": Parameter(np.zeros((hidden, hidden + input_dim)), name=f"{prefix}.W_{g}")
              for g in GATES}
        kw.update({f"b_{g}": Parameter(np.zeros(hidden), name=f"{prefix}.b_{g}") for g in GATES})
        return cls(**kw)


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def _stacked(params: LstmParams):
    W = ag.concat([params.W_f, params.W_i, params.W_c, params.W_o], axis=0)
    b = ag.concat([params.b_f, params.b_i, params.b_c, params.b_o], axis=0)
    return ag.transpose(W), b


def _step(x: Tensor, state: LstmState, WT: Tensor, b: Tensor, u: int) -> LstmState:
    z = ag.concat([state.h, x], axis=1) @ WT + b
    f = ag.sigmoid(z[:, 0:u])
    i = ag.sigmoid(z[:, u:2 * u])
    cand = ag.tanh(z[:, 2 * u:3 * u])
    o = ag.sigmoid(z[:, 3 * u:4 * u])
    c = f * state.c + i * cand
    return LstmState(o * ag.tanh(c), c)


def lstm_cell(x, state: LstmState, params: LstmParams) -> LstmState:
    """One step. ``x`` is a d-vector or a batch (rows) of them; the state matches."""
    params.check()
    x = ag.as_tensor(x)
    vector = x.ndim == 1
    if vector:
        x = ag.reshape(x, (1, -1))
    if x.shape[1] != params.input_dim:
        raise DimensionError(
            f"gate f: input has {x.shape[1]} features, weights expect {params.input_dim}")
    h, c = ag.as_tensor(state.h), ag.as_tensor(state.c)
    if h.ndim == 1:
        h, c = ag.reshape(h, (1, -1)), ag.reshape(c, (1, -1))
    if h.shape[1] != params.hidden:
        raise DimensionError(f"gate f: hidden state has {h.shape[1]} units, weights expect {params.hidden}")
    WT, b = _stacked(params)
    out = _step(x, LstmState(h, c), WT, b, params.hidden)
    if vector:
        return LstmState(ag.reshape(out.h, (-1,)), ag.reshape(out.c, (-1,)))
    return out


def sequence_embed(chi, params: LstmParams) -> Tensor:
    """N x S x D window tensor -> N x u matrix of final hidden states (zero initial state)."""
    params.check()
    chi = np.asarray(chi.data if isinstance(chi, Tensor) else chi, dtype=np.float64)
    if chi.ndim != 3 or chi.shape[1] < 1:
        raise DimensionError(f"expected an N x S x D window tensor with S >= 1, got {chi.shape}")
    n, steps, d = chi.shape
    if d != params.input_dim:
        raise DimensionError(f"gate f: input has {d} features, weights expect {params.input_dim}")
    u = params.hidden
    WT, b = _stacked(params)
    state = LstmState.zeros(n, u)
    for s in range(steps):
        state = _step(Tensor(chi[:, s, :]), state, WT, b, u)
    return state.h
