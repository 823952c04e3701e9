"""Command-line entry point: ``thermoq <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import artifacts as io
from .bn import infer, load_network
from .grid import build_masks, load_layout
from .net import TwoStageNet
from .predictor import DEFAULT_N_PRE, metrics, predict_mcqr
from .reliability import DEFAULT_LAMBDA, ComponentThresholds, empirical_cdf
from .solver import SolverConfig
from .stochastic import stream
from .trainer import TrainConfig, train

log = logging.getLogger("thermoq")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INVALID = 4
EXIT_NUMERIC = 5


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def _read_config(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise CliError("schema", f"config {path} must hold a JSON object", EXIT_INVALID)
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ subcommands


def cmd_gen_data(args) -> int:
    cfg = _read_config(args.config)
    domain, layout = load_layout(args.layout)
    n = args.n if args.n is not None else int(cfg.get("n", 0))
    splits = cfg.get("splits") or {"train": n - args.val - args.test, "val": args.val,
                                   "test": args.test}
    solver = SolverConfig(**cfg.get("solver", {}))
    ds = io.generate_dataset(domain, layout, n, args.seed, splits, solver)
    io.save_dataset(ds, _out_dir(args))
    log.info("wrote %d samples to %s", n, args.out)
    return 0


def cmd_train(args) -> int:
    cfg_doc = _read_config(args.config)
    cfg_doc["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_doc)
    ds = io.load_dataset(args.data)
    sl = ds.split("train")
    resume = io.load_checkpoint(args.resume) if args.resume else None
    val = None
    if cfg.patience is not None:
        v = ds.split("val")
        val = (ds.mps[v], ds.fields[v])
    out = _out_dir(args)
    res = train(ds.mps[sl], ds.masks, ds.domain, cfg, resume=resume, checkpoint_dir=out, val=val)
    io.write_history(res.history, out / "history.csv")
    return 0


def _load_model(path):
    ck = io.load_checkpoint(path)
    net = TwoStageNet(ck.net)
    net.bn_stats = ck.bn
    return ck, net


def cmd_predict(args) -> int:
    ck, net = _load_model(args.checkpoint)
    ds = io.load_dataset(args.data)
    masks = ds.masks
    out = _out_dir(args)
    if args.index is not None:
        rec = predict_mcqr(net, ck.params, ds.mps[args.index], masks, args.n_pre,
                           stream(args.seed, "mc", args.index), normalized=ck.normalized)
        io.write_f32(out / "mean.f32", rec.mean)
        io.write_f32(out / "sigma.f32", rec.sigma)
        if args.heatmaps:
            io.write_heatmap(out / "mean.pgm", rec.mean)
            io.write_heatmap(out / "sigma.pgm", rec.sigma)
        return 0
    indices = list(range(len(ds.fields)))[ds.split(args.split)]
    for j, i in enumerate(indices):
        rec = predict_mcqr(net, ck.params, ds.mps[i], masks, args.n_pre, stream(args.seed, "mc", i),
                           normalized=ck.normalized)
        io.write_f32(out / f"field_{j:06d}.f32", rec.mean)
        io.write_f32(out / f"sigma_{j:06d}.f32", rec.sigma)
    io.write_json(out / "meta.json", {"format": "thermoq-predictions/1", "n": len(indices),
                                      "shape": list(ds.domain.shape), "indices": indices,
                                      "n_pre": args.n_pre, "seed": args.seed,
                                      "streams": ["mc"]})
    return 0


def _read_fields(folder: Path):
    meta = json.loads((folder / "meta.json").read_text())
    shape = tuple(meta["shape"])
    fields = np.stack([io.read_f32(folder / f"field_{i:06d}.f32", shape) for i in range(meta["n"])])
    return fields, meta.get("indices")


def cmd_evaluate(args) -> int:
    preds, indices = _read_fields(Path(args.pred))
    truths, _ = _read_fields(Path(args.truth))
    if indices is not None:
        truths = truths[indices]
    if len(preds) != len(truths):
        raise CliError("schema", f"{len(preds)} predictions vs {len(truths)} truth fields", EXIT_INVALID)
    m = metrics(preds, truths, args.r2_mode)
    _write_csv(_out_dir(args) / "metrics.csv", ["metric", "value"],
               [[k, _fmt(m[k])] for k in ("rmse", "mae", "mre", "r2")])
    return 0


def cmd_reliability(args) -> int:
    from .pipeline import monte_carlo_reconstructions, reliability_report

    ck, net = _load_model(args.checkpoint)
    domain, layout = load_layout(args.layout)
    thresholds = ComponentThresholds(json.loads(Path(args.thresholds).read_text()))
    recons = monte_carlo_reconstructions(net, ck.params, domain, layout, args.n_mcs, args.n_pre,
                                         args.seed, normalized=ck.normalized)
    masks = build_masks(domain, layout)
    report = reliability_report(recons, masks, thresholds, args.lam)
    out = _out_dir(args)
    _write_csv(out / "component_intervals.csv", ["id", "pr_lo", "pr_hi"],
               [[cid, _fmt(p.lo), _fmt(p.hi)] for cid, p in report.intervals.items()])
    if args.ecdf:
        for cid, recs in report.maxima.items():
            for label, vals in (("lower", [r[0] for r in recs]), ("upper", [r[1] for r in recs])):
                xs, fs = empirical_cdf(vals).steps()
                _write_csv(out / f"ecdf_{cid}_{label}.csv", ["temperature", "cdf"],
                           [[_fmt(x), _fmt(f)] for x, f in zip(xs, fs)])
    if args.network:
        from .bn import BNGraph, BNNode

        graph = load_network(args.network)
        nodes = dict(graph.nodes)
        for cid, p in report.intervals.items():
            if cid in nodes and nodes[cid].is_root:
                nodes[cid] = BNNode(cid, prob=p)
        r = infer(BNGraph(nodes=nodes, system=graph.system))
        _write_csv(out / "system.csv", ["id", "pr_lo", "pr_hi"], [[graph.system, _fmt(r.lo), _fmt(r.hi)]])
    return 0


def _parse_evidence(items) -> dict[str, int]:
    ev = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep or val not in ("0", "1"):
            raise CliError("usage", f"evidence must look like NODE=0 or NODE=1, got {item!r}", EXIT_USAGE)
        ev[key] = int(val)
    return ev


def cmd_bn_infer(args) -> int:
    graph = load_network(args.network)
    r = infer(graph, _parse_evidence(args.evidence))
    print(f"[{r.lo:.12g}, {r.hi:.12g}]")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import DEFAULT_TOL, run

    failed = 0
    for r in run(seed=args.seed, h=args.step):
        ok = r.passed(args.tol)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {r.name} max_rel_error={r.max_rel_error:.3e}")
    print(f"{failed} failed" if failed else "all gradient checks passed")
    return 1 if failed else 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all random streams")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    common.add_argument("--config", default=None, help="JSON config for the subcommand")

    p = _Parser(prog="thermoq", description="Temperature field reconstruction with quantile "
                                            "uncertainty and interval reliability.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate a solver dataset")
    g.add_argument("--layout", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--val", type=int, default=0)
    g.add_argument("--test", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="Monte Carlo mean and sigma fields")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    sel = pr.add_mutually_exclusive_group()
    sel.add_argument("--index", type=int, default=None, help="single sample -> mean.f32, sigma.f32")
    sel.add_argument("--split", default="test", choices=["train", "val", "test"])
    pr.add_argument("--n-pre", type=int, default=DEFAULT_N_PRE)
    pr.add_argument("--heatmaps", action="store_true", help="also write 8-bit PGM heatmaps")
    pr.add_argument("--out", required=True)
    pr.set_defaults(fn=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common], help="metrics of predicted vs truth fields")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--r2-mode", default="pooled", choices=["pooled", "conventional"])
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("reliability", parents=[common], help="component normal-probability intervals")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--layout", required=True)
    r.add_argument("--thresholds", required=True, help="JSON map component id -> T_lim (K)")
    r.add_argument("--n-mcs", type=int, default=100)
    r.add_argument("--n-pre", type=int, default=DEFAULT_N_PRE)
    r.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    r.add_argument("--network", default=None, help="optional BN file; writes system.csv")
    r.add_argument("--ecdf", action="store_true", help="also write per-component ECDF CSVs")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_reliability)

    b = sub.add_parser("bn-infer", parents=[common], help="interval system reliability")
    b.add_argument("--network", required=True)
    b.add_argument("--evidence", action="append", metavar="NODE=STATE")
    b.set_defaults(fn=cmd_bn_infer)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(fn=cmd_gradcheck)
    return p


def _emit_error(kind: str, message: str, command: str | None) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}) + "\n")


def main(argv=None) -> int:
    level = os.environ.get("THERMOQ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(args.threads)
        else:
            limiter = nullcontext()
        with limiter:
            return args.fn(args)
    except CliError as e:
        _emit_error(e.kind, str(e), command)
        return e.code
    except FileNotFoundError as e:
        _emit_error("missing_file", str(e), command)
        return EXIT_MISSING
    except (FloatingPointError, ArithmeticError) as e:
        _emit_error("numeric", str(e), command)
        return EXIT_NUMERIC
    except RuntimeError as e:
        _emit_error("runtime", str(e), command)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        _emit_error("invalid_input", str(e), command)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
