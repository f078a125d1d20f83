"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (shown even under pytest's
output capture) and then asserts. Run directly with ``python3 tests/test_acceptance.py``
to get the nine lines without pytest.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from motifrank.backtest import irr_solve, mrr, sharpe, simulate
from motifrank.graph import DirectedWeightedGraph, build_union_graph
from motifrank.gradsuite import run_suite
from motifrank.loss import combined_loss, ranking_term
from motifrank.motifs import (default_motif_selection, get_motif, motif_adjacency, motif_adjacency_oracle,
                              motif_catalog)
from motifrank.pipeline import RunConfig, backtest, prepare, rank_day
from motifrank.synthetic import SyntheticSpec, simulate_market
from motifrank.training import Model, TrainConfig, save_checkpoint, train

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
RANDOM_MRR_30 = sum(1.0 / k for k in range(1, 31)) / 30


class Reporter:
    def __init__(self, capsys=None):
        self.capsys = capsys

    def __call__(self, n: int, ok: bool, detail: str, started: float) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  ({time.perf_counter() - started:.1f}s)  {detail}"
        if self.capsys is not None:
            with self.capsys.disabled():
                print("\n" + line)
        else:
            print(line)
        assert ok, line


@pytest.fixture
def report(capsys):
    return Reporter(capsys)


# ---------------------------------------------------------------- 1, 2: motifs

def test_criterion_1_motif_oracle_equivalence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst, graphs = 0.0, 0
    while graphs < 200:
        n = int(rng.integers(3, 31))
        density = rng.uniform(0.02, 0.3)
        w = (rng.random((n, n)) < density) * rng.uniform(0.1, 5.0, (n, n))
        np.fill_diagonal(w, 0.0)
        if not w.any():
            continue
        g = DirectedWeightedGraph(w)
        for spec in motif_catalog():
            diff = np.abs(motif_adjacency(g, spec).matrix - motif_adjacency_oracle(g, spec).matrix)
            worst = max(worst, float(diff.max()))
        graphs += 1
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-12 and elapsed < 120,
           f"200 graphs x 13 motifs, max |fast - oracle| = {worst:.1e} (tol 1e-12)", start)


def test_criterion_2_motif_fixtures(report):
    start = time.perf_counter()

    def bilateral(pairs):
        return DirectedWeightedGraph.from_edges(3, {e: 1.0 for i, j in pairs for e in ((i, j), (j, i))})

    tri, path = bilateral([(0, 1), (1, 2), (0, 2)]), bilateral([(0, 1), (1, 2)])
    vals = []
    for fn in (motif_adjacency, motif_adjacency_oracle):
        m4, m13 = fn(tri, get_motif("M4")).matrix, fn(path, get_motif("M13")).matrix
        vals.append((float(m4[0, 2]), float(m13[0, 2]), float(m13[0, 1])))
    ok = all(v == (1.0, 1.0, 0.0) for v in vals)
    report(2, ok, f"M4 triangle [1,3], M13 path [1,3] and [1,2] = {vals[0]}", start)


# ---------------------------------------------------------------- 3: gradients

def test_criterion_3_gradient_suite(report):
    start = time.perf_counter()
    results = run_suite(0)
    failed = [f"{r.name}={r.error:.1e}" for r in results if not r.passed]
    worst = max(results, key=lambda r: r.error / r.tol)
    elapsed = time.perf_counter() - start
    report(3, not failed and elapsed < 180,
           f"{len(results)} checks, worst {worst.name} {worst.error:.1e} < {worst.tol:.0e}"
           + (f"; failed {failed}" if failed else ""), start)


# ---------------------------------------------------------------- 4, 5: fixtures

def test_criterion_4_loss_fixture(report):
    start = time.perf_counter()
    two = combined_loss(np.array([0.1, 0.2]), np.array([0.3, 0.1]), 1.0).item()
    rng = np.random.default_rng(4)
    r = rng.standard_normal(12) * 0.02
    p = rng.standard_normal(12) * 0.02
    zero = combined_loss(r, r, 1.0).item()
    shift = max(abs(ranking_term(p + c, r).item() - ranking_term(p, r).item()) for c in (-1.0, 0.37, 5.0))
    ok = abs(two - 0.09) <= 1e-15 and zero == 0.0 and shift <= 1e-12
    report(4, ok, f"n=2 loss {two!r}, loss(r,r)={zero}, shift drift {shift:.1e}", start)


def test_criterion_5_metric_fixtures(report):
    start = time.perf_counter()
    returns = np.array([[0.0, 0.1, 0.05], [0.3, 0.1, 0.2]])
    m = mrr([np.array([0, 2, 1]), np.array([0, 1, 2])], returns)
    rep = simulate([np.array([0, 1])] * 3, np.array([[0.01, 0.0], [-0.005, 0.0], [0.02, 0.0]]))
    rate = irr_solve([-1000, 1100])
    z = np.random.default_rng(5).standard_normal(252)
    z = (z - z.mean()) / z.std(ddof=1)
    sr = sharpe(0.001 + 0.01 * z)
    ok = (m == 2 / 3 and abs(rep.irr - 0.025) <= 1e-15 and abs(rate - 0.10) <= 1e-9
          and abs(sr - 1.5875) <= 1e-4)
    report(5, ok, f"MRR {m!r}, IRR {rep.irr!r}, irr_solve {rate:.12f}, Sharpe {sr:.5f}", start)


# ---------------------------------------------------------------- 6, 7: learning

ACCEPT_EPOCHS = 30


@pytest.mark.slow
def test_criterion_6_learning_signal(report):
    start = time.perf_counter()
    rows, hits = [], 0
    for s in range(5):
        market = simulate_market(SyntheticSpec(seed=100 + s, n=30, days=400))
        cfg = RunConfig(train=TrainConfig(seed=s, hidden=32, epochs=ACCEPT_EPOCHS))
        prep = prepare(market.bundle, cfg)
        model, _ = train(cfg.train, prep.dataset, prep.context)
        rep = backtest(model, prep, cfg, "test")
        ok = rep.mrr >= 2 * RANDOM_MRR_30 and rep.irr > 0
        hits += ok
        rows.append(f"{rep.mrr:.3f}/{rep.irr:+.3f}")
    elapsed = time.perf_counter() - start
    report(6, hits >= 4 and elapsed < 600,
           f"{hits}/5 seeds with test MRR >= {2 * RANDOM_MRR_30:.4f} and IRR > 0 (MRR/IRR: {', '.join(rows)})",
           start)


ABLATION_SPEC = dict(n=30, days=400, coef=(0.5, 0.25, 0.25, 0.25, -0.25), spillover=3.0)


@pytest.mark.slow
def test_criterion_7_m4_ablation(report):
    start = time.perf_counter()
    full_irr, ablated_irr = [], []
    for s in range(5):
        market = simulate_market(SyntheticSpec(seed=100 + s, **ABLATION_SPEC))
        cfg = RunConfig(train=TrainConfig(seed=s, hidden=32, epochs=ACCEPT_EPOCHS))
        chosen = [m.id for m in default_motif_selection(build_union_graph(market.bundle.wiki))]
        assert "M4" in chosen
        for motifs, sink in ((chosen, full_irr), ([m for m in chosen if m != "M4"], ablated_irr)):
            prep = prepare(market.bundle, cfg, motifs=tuple(motifs))
            model, _ = train(cfg.train, prep.dataset, prep.context)
            sink.append(backtest(model, prep, cfg, "test").irr)
    full, ablated = float(np.mean(full_irr)), float(np.mean(ablated_irr))
    wins = sum(f > a for f, a in zip(full_irr, ablated_irr))
    elapsed = time.perf_counter() - start
    report(7, full > ablated and elapsed < 600,
           f"mean test IRR full {full:.4f} vs without M4 {ablated:.4f} (full ahead on {wins}/5 seeds)", start)


# ---------------------------------------------------------------- 8, 9: contracts

def _train_and_report(tmp: Path, tag: str) -> tuple[bytes, bytes]:
    from motifrank.data import load_bundle
    cfg = RunConfig(train=TrainConfig(seed=7, window=4, hidden=16, epochs=3))
    prep = prepare(load_bundle(FIXTURES), cfg)
    model, _ = train(cfg.train, prep.dataset, prep.context)
    ck = tmp / f"{tag}.ckpt.json"
    save_checkpoint(ck, model, cfg.train, prep.context, {"run": cfg.to_dict()})
    rep = backtest(model, prep, cfg, "test")
    rp = tmp / f"{tag}.report.json"
    rep.write(rp)
    return ck.read_bytes(), rp.read_bytes()


def test_criterion_8_determinism(report, tmp_path):
    start = time.perf_counter()
    a = _train_and_report(tmp_path, "a")
    b = _train_and_report(tmp_path, "b")
    ok = a[0] == b[0] and a[1] == b[1]
    report(8, ok, f"checkpoint {len(a[0])} bytes and report {len(a[1])} bytes identical across two runs", start)


def test_criterion_9_no_lookahead(report):
    from motifrank.data import load_bundle
    from motifrank.features import FundamentalPanel, PricePanel, QuarterlyStatements
    start = time.perf_counter()
    base = load_bundle(FIXTURES)
    cfg = RunConfig(train=TrainConfig(seed=1, window=8, hidden=16))
    prep = prepare(base, cfg)
    model = Model.init(cfg.train, prep.features.X.shape[-1], prep.context.channels)
    checked, bad = 0, []
    for t in (40, 70, 100):
        day = str(base.prices.dates[t])
        # perturb every input dated t+1 or later: prices and a new statement row
        close = base.prices.close.copy()
        close[t + 1:] *= np.linspace(1.3, 0.8, close.shape[1])
        nxt = base.prices.dates[t + 1]
        stmts = {}
        for k, (tk, s) in enumerate(base.fundamentals.statements.items()):
            keep = s.quarter_end <= base.prices.dates[t]
            vals = s.values[keep]
            extra = vals[-1] * (1.0 + 0.5 * np.sin(k + np.arange(vals.shape[1])))
            stmts[tk] = QuarterlyStatements(np.append(s.quarter_end[keep], nxt), np.vstack([vals, extra]))
        bumped = type(base)(base.universe, PricePanel(base.prices.dates, base.prices.tickers, close),
                            FundamentalPanel(stmts), base.wiki, base.industry)
        other = prepare(bumped, cfg)
        k0, k1 = prep.features.position(t), other.features.position(t)
        same_x = np.array_equal(prep.features.X[k0], other.features.X[k1])
        changed_later = not np.array_equal(prep.features.X[k0 + 1], other.features.X[k1 + 1])
        r0 = rank_day(model, prep, day)[1].order
        r1 = rank_day(model, other, day)[1].order
        if not (same_x and np.array_equal(r0, r1) and changed_later):
            bad.append(day)
        checked += 1
    report(9, not bad, f"{checked} anchor days: chi^t and day-t ranking unchanged after perturbing t+1 inputs"
           + (f"; differs on {bad}" if bad else ""), start)


if __name__ == "__main__":
    import tempfile

    rep = Reporter()
    failures = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion_")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(rep, Path(d))
            else:
                fn(rep)
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
