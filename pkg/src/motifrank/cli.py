"""Command line: generate | motif | train | backtest | rank | gradcheck.

Every run writes ``manifest.json`` (command, arguments, configuration, seed and
input/output digests) into its output directory. Failures print one JSON line on
stderr and exit with 2 (invalid input or configuration) or 3 (numerical failure).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backtest import TradingConfig
from .data import file_digest, load_bundle, load_prices, load_relations
from .errors import MotifRankError, NumericalError
from .graph import StockUniverse
from .gradsuite import run_suite
from .motifs import motif_adjacency, motif_density, parse_motifs
from .pipeline import RunConfig, backtest, prepare, rank_day
from .synthetic import SyntheticSpec, generate_synthetic
from .training import load_checkpoint, model_from_checkpoint, motif_source_graph, save_checkpoint, train

log = logging.getLogger("motifrank")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_manifest(out: Path, args, inputs: dict, outputs: dict, config=None, seed=None) -> None:
    argv = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    _dump(out / "manifest.json", {
        "command": args.command,
        "arguments": argv,
        "config": config,
        "seed": seed,
        "inputs": {k: file_digest(p) for k, p in sorted(inputs.items())},
        "outputs": {k: file_digest(p) for k, p in sorted(outputs.items())},
        "version": __version__,
    })


def _data_files(directory: Path) -> dict:
    return {name: directory / f"{name}.csv" for name in ("prices", "statements", "relations")}


def _run_config(args, checkpoint_body: dict | None = None) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.load(args.config, getattr(args, "seed", None))
    if checkpoint_body and "run" in checkpoint_body:
        return RunConfig.from_dict(checkpoint_body["run"])
    seed = getattr(args, "seed", None)
    return RunConfig.from_dict({"train": {"seed": 0 if seed is None else seed}})


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> None:
    spec = SyntheticSpec(seed=args.seed, n=args.n, days=args.days, noise=args.noise,
                         spillover=args.spillover, scale=args.scale)
    bundle = generate_synthetic(spec, args.out)
    files = _data_files(args.out)
    _write_manifest(args.out, args, {}, {**files, "spec": args.out / "synthetic_spec.json"},
                    json.loads((args.out / "synthetic_spec.json").read_text()), args.seed)
    print(json.dumps({"out": str(args.out), "stocks": bundle.universe.n,
                      "days": len(bundle.prices.dates)}, sort_keys=True))


def _relation_universe(path: Path) -> StockUniverse:
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for col in ("source_ticker", "target_ticker"):
                if row.get(col):
                    seen.setdefault(row[col].strip(), None)
    return StockUniverse(tuple(seen))


def cmd_motif(args) -> None:
    if args.prices:
        universe = StockUniverse(load_prices(args.prices).tickers)
    else:
        universe = _relation_universe(args.relations)
    wiki, industry = load_relations(args.relations, universe)
    g = motif_source_graph(wiki, industry, args.source)
    specs = parse_motifs(args.motifs)
    args.out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for spec in specs:
        path = args.out / f"{spec.id}.csv"
        A = motif_adjacency(g, spec).matrix
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + list(universe.tickers))
            for t, row in zip(universe.tickers, A):
                w.writerow([t] + [repr(float(v)) for v in row])
        outputs[spec.id] = path
    report = motif_density(g)
    _dump(args.out / "density.json", report.to_dict())
    outputs["density"] = args.out / "density.json"
    inputs = {"relations": args.relations}
    if args.prices:
        inputs["prices"] = args.prices
    _write_manifest(args.out, args, inputs, outputs, {"motifs": [s.id for s in specs], "source": args.source})
    print(json.dumps({"density": report.density, "written": sorted(str(p) for p in outputs.values())},
                     sort_keys=True))


def cmd_train(args) -> None:
    cfg = _run_config(args)
    bundle = load_bundle(args.data)
    prep = prepare(bundle, cfg)
    model, hist = train(cfg.train, prep.dataset, prep.context, cfg.trading)
    args.out.mkdir(parents=True, exist_ok=True)
    ck = args.out / "checkpoint.json"
    dg = save_checkpoint(ck, model, cfg.train, prep.context, {"run": cfg.to_dict()})
    _dump(args.out / "history.json", hist.to_dict())
    _dump(args.out / "access.json", dict(prep.dataset.access))
    _write_manifest(args.out, args, _data_files(args.data),
                    {"checkpoint": ck, "history": args.out / "history.json"}, cfg.to_dict(), cfg.train.seed)
    print(json.dumps({"checkpoint": str(ck), "digest": dg, "best_epoch": hist.best_epoch,
                      "val_irr": hist.val_irr[hist.best_epoch] if hist.best_epoch >= 0 else None},
                     sort_keys=True))


def _restore(args):
    _, _, body = load_checkpoint(args.checkpoint)
    cfg = _run_config(args, body)
    if args.top_k is not None:
        cfg = RunConfig(cfg.train, TradingConfig(args.top_k, cfg.trading.principal, cfg.trading.risk_free,
                                                 cfg.trading.annualization),
                        cfg.split, cfg.universe, cfg.lag_days, cfg.ffill_limit)
    bundle = load_bundle(args.data)
    prep = prepare(bundle, cfg, motifs=body.get("motifs", cfg.train.motifs))
    model, _ = model_from_checkpoint(args.checkpoint, prep.features.X.shape[-1], prep.context)
    return cfg, prep, model


def cmd_backtest(args) -> None:
    cfg, prep, model = _restore(args)
    report = backtest(model, prep, cfg, args.split)
    args.out.mkdir(parents=True, exist_ok=True)
    report.write(args.out / "report.json", args.out / "daily.csv")
    _write_manifest(args.out, args, {**_data_files(args.data), "checkpoint": args.checkpoint},
                    {"report": args.out / "report.json", "daily": args.out / "daily.csv"},
                    cfg.to_dict(), cfg.train.seed)
    print(json.dumps({k: report.summary()[k] for k in ("irr", "mrr", "mse", "sharpe", "days")},
                     sort_keys=True))


def cmd_rank(args) -> None:
    cfg, prep, model = _restore(args)
    day, ranked = rank_day(model, prep, args.date)
    k = cfg.trading.top_k
    top = [{"rank": r + 1, "ticker": prep.features.tickers[i], "score": float(ranked.scores[i])}
           for r, i in enumerate(ranked.top(k))]
    args.out.mkdir(parents=True, exist_ok=True)
    _dump(args.out / "ranking.json", {"date": day, "top": top})
    _write_manifest(args.out, args, {**_data_files(args.data), "checkpoint": args.checkpoint},
                    {"ranking": args.out / "ranking.json"}, cfg.to_dict(), cfg.train.seed)
    print(json.dumps({"date": day, "top": top}, sort_keys=True))


def cmd_gradcheck(args) -> None:
    results = run_suite(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = [{"check": r.name, "max_rel_error": r.error, "tolerance": r.tol, "passed": r.passed}
            for r in results]
    _dump(args.out / "gradcheck.json", rows)
    _write_manifest(args.out, args, {}, {"gradcheck": args.out / "gradcheck.json"}, None, args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {r.error:.3e}  < {r.tol:.0e}  {'pass' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"gradient check failed for: {', '.join(failed)}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motifrank", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic market")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--n", type=int, default=30)
    g.add_argument("--days", type=int, default=400)
    g.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    g.add_argument("--spillover", type=float, default=SyntheticSpec.spillover)
    g.add_argument("--scale", type=float, default=SyntheticSpec.scale)
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("motif", help="motif adjacency matrices and densities")
    m.add_argument("--relations", type=Path, required=True)
    m.add_argument("--prices", type=Path, help="take the stock order from this price file")
    m.add_argument("--motifs", default="M4,M13")
    m.add_argument("--source", choices=("wiki", "industry", "all"), default="wiki")
    m.add_argument("--out", type=Path, default=Path("motifrank-out/motif"))
    m.set_defaults(func=cmd_motif)

    t = sub.add_parser("train", help="train and write a checkpoint")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--config", type=Path)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, default=Path("motifrank-out/train"))
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("backtest", cmd_backtest, "trade the top-k on a split"),
                              ("rank", cmd_rank, "top-k list for one day")):
        b = sub.add_parser(name, help=help_)
        b.add_argument("--data", type=Path, required=True)
        b.add_argument("--checkpoint", type=Path, required=True)
        b.add_argument("--config", type=Path)
        b.add_argument("--top-k", type=int)
        b.add_argument("--out", type=Path, default=Path(f"motifrank-out/{name}"))
        if name == "backtest":
            b.add_argument("--split", choices=("train", "validation", "test"), default="test")
        else:
            b.add_argument("--date", help="YYYY-MM-DD; defaults to the last day with a window")
        b.set_defaults(func=func)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, default=Path("motifrank-out/gradcheck"))
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(json.dumps({"error": "numerical", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    except (MotifRankError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": "invalid", "message": str(msg)}), file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
