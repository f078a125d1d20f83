"""Finite-difference checks over every differentiable primitive and the model stack."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .attention import AttentionParams, Compressor, NeighborIndex, relational_embed
from .autograd import Tensor, grad_check
from .loss import PredictionHead, combined_loss, predict
from .lstm import LstmParams, sequence_embed

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _away_from_zero(rng, shape, low=0.2):
    x = rng.uniform(low, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable, list]]:
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    m = rng.standard_normal((4, 2))
    mask = rng.random((3, 4)) < 0.6
    mask[0] = False      # an empty row
    return {
        "add": (lambda x, y: x + y, [a, b]),
        "add_broadcast": (lambda x, y: x + y, [a, rng.standard_normal(4)]),
        "sub": (lambda x, y: x - y, [a, b]),
        "mul": (lambda x, y: x * y, [a, b]),
        "div": (lambda x, y: x / y, [a, pos]),
        "neg": (lambda x: -x, [a]),
        "sigmoid": (ag.sigmoid, [a * 3]),
        "tanh": (ag.tanh, [a]),
        "relu": (ag.relu, [_away_from_zero(rng, (3, 4))]),
        "exp": (ag.exp, [a]),
        "square": (ag.square, [a]),
        "matmul": (lambda x, y: x @ y, [a, m]),
        "transpose": (ag.transpose, [a]),
        "reshape": (lambda x: ag.reshape(x, (4, 3)), [a]),
        "concat": (lambda x, y: ag.concat([x, y], axis=1), [a, b]),
        "index": (lambda x: x[1:, ::2], [a]),
        "sum": (lambda x: ag.tsum(x, axis=0), [a]),
        "mean": (lambda x: ag.mean(x, axis=1), [a]),
        "softmax": (lambda x: ag.softmax(x, axis=1), [a]),
        "masked_softmax": (lambda x: ag.masked_softmax(x, mask, axis=1), [a]),
    }


def _lstm_case(rng, steps: int):
    n, d, u = 3, 4, 5
    chi = rng.standard_normal((n, steps, d))
    shapes = [(u, u + d)] * 4 + [(u,)] * 4
    init = [rng.uniform(-0.5, 0.5, s) for s in shapes]

    def fn(*ps):
        params = LstmParams(*ps)
        return sequence_embed(chi, params)

    return fn, init


def _model_pieces(rng, n=5, steps=4, d=3, u=4, c=3, d_r=2, heads=2):
    chi = rng.standard_normal((n, steps, d))
    raw = (rng.random((n, n, c)) < 0.4).astype(np.float64)
    for k in range(c):
        np.fill_diagonal(raw[:, :, k], 0.0)
    raw[n - 1, :, :] = 0.0      # one node with no neighbours
    nbrs = NeighborIndex.from_raw(raw)
    return chi, raw, nbrs, dict(n=n, d=d, u=u, c=c, d_r=d_r, heads=heads)


def model_cases(seed: int = 0) -> dict[str, tuple[Callable, list]]:
    rng = np.random.default_rng(seed)
    cases = {
        "lstm_S1": _lstm_case(rng, 1),
        "lstm_S8": _lstm_case(rng, 8),
        "lstm_S32": _lstm_case(rng, 32),
    }

    chi, raw, nbrs, k = _model_pieces(rng)
    lstm = LstmParams.init(k["u"], k["d"], rng)
    E_s = sequence_embed(chi, lstm).data

    def attention_fn(cw, cb, aw, ab):
        return relational_embed(E_s, raw, Compressor(cw, cb), AttentionParams(aw, ab), nbrs)

    cases["attention_propagation"] = (attention_fn, [
        rng.uniform(-1, 1, (k["c"], k["d_r"])), rng.uniform(-1, 1, k["d_r"]),
        rng.uniform(-1, 1, (k["heads"], 2 * k["u"] + k["d_r"])), rng.uniform(-1, 1, k["heads"])])

    def embedding_input_fn(E):
        comp = Compressor(Tensor(np.full((k["c"], k["d_r"]), 0.3)), Tensor(np.zeros(k["d_r"])))
        attn = AttentionParams(Tensor(np.linspace(-1, 1, k["heads"] * (2 * k["u"] + k["d_r"]))
                                      .reshape(k["heads"], -1)), Tensor(np.zeros(k["heads"])))
        return relational_embed(E, raw, comp, attn, nbrs)

    cases["propagation_wrt_embeddings"] = (embedding_input_fn, [E_s])

    E_r = relational_embed(E_s, raw, Compressor.init(k["c"], k["d_r"], rng),
                           AttentionParams.init(k["heads"], k["u"], k["d_r"], rng), nbrs).data
    cases["prediction_head"] = (lambda w, b: predict(E_s, E_r, PredictionHead(w, b)),
                                [rng.uniform(-1, 1, 2 * k["u"]), rng.uniform(-1, 1, 1)])

    target = rng.standard_normal(k["n"]) * 0.02
    cases["combined_loss_wrt_prediction"] = (
        lambda p: combined_loss(p, target, 2.0), [rng.standard_normal(k["n"]) * 0.02])

    def end_to_end(*flat):
        params = LstmParams(*flat[:8])
        comp = Compressor(flat[8], flat[9])
        attn = AttentionParams(flat[10], flat[11])
        head = PredictionHead(flat[12], flat[13])
        e_s = sequence_embed(chi, params)
        e_r = relational_embed(e_s, raw, comp, attn, nbrs)
        return combined_loss(predict(e_s, e_r, head), target, 1.0)

    init = ([p.data.copy() for p in LstmParams.init(k["u"], k["d"], rng).parameters()]
            + [rng.uniform(-1, 1, (k["c"], k["d_r"])), rng.uniform(-1, 1, k["d_r"]),
               rng.uniform(-1, 1, (k["heads"], 2 * k["u"] + k["d_r"])), rng.uniform(-1, 1, k["heads"]),
               rng.uniform(-1, 1, 2 * k["u"]), rng.uniform(-1, 1, 1)])
    cases["end_to_end_loss"] = (end_to_end, init)
    return cases


def run_suite(seed: int = 0) -> list[CheckResult]:
    out = []
    for group, tol in ((primitive_cases(seed), PRIMITIVE_TOL), (model_cases(seed), MODEL_TOL)):
        for name, (fn, inputs) in group.items():
            start = time.perf_counter()
            err = grad_check(fn, inputs, seed=seed)
            out.append(CheckResult(name, err, tol, time.perf_counter() - start))
    return out
