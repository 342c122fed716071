"""Command-line front end.

Subcommands: gen-traces, train, allocate, run, report.  Machine-readable
JSON summaries go to stdout, diagnostics to stderr.  Exit codes: 0 success,
2 configuration error (including argparse usage errors), 3 input/output
error, 4 insufficient history for training, 5 decodability violation (the
offending emitted streams are dumped next to the reports).

The seed is taken from --seed, else the FVV_SEED environment variable, else
the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import config as config_mod
from .allocator import (
    QoeParams,
    RateBounds,
    allocate,
    uniform_allocate,
    write_allocation_csv,
)
from .errors import (
    ConfigError,
    DecodabilityViolation,
    FvsimError,
    InsufficientHistory,
    InvalidView,
    ParseError,
)
from .gnn import StGnn, TrainConfig
from .graph import path_graph
from .harness import run_experiment
from .popularity import ppc_predict
from .reports import emit_report, load_summary, write_summary_csvs
from .session import write_emitted_csv
from .traces import (
    gen_mixed_traces,
    high_interactivity,
    load_traces,
    low_interactivity,
    save_traces,
    switch_rate,
)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_HISTORY = 4
EXIT_DECODABILITY = 5


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_cfg(args) -> dict:
    cfg = config_mod.load_config(getattr(args, "config", None))
    cfg = config_mod.apply_overrides(cfg, getattr(args, "set", None) or [])
    # direct flags override the file; FVV_SEED fills in when no flag is given
    for flag, dotted in (
        ("users", "run.users"),
        ("chunks", "run.chunks"),
        ("scheme", "run.scheme"),
        ("out_dir", "run.out_dir"),
        ("traces", "run.trace_file"),
        ("n_views", "stream.n_views"),
        ("fps", "stream.fps"),
        ("chunk_seconds", "stream.chunk_seconds"),
        ("model", "behavior.kind"),
        ("epochs", "train.epochs"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            section, key = dotted.split(".")
            cfg[section][key] = value
    seed = getattr(args, "seed", None)
    if seed is None and "FVV_SEED" in os.environ:
        try:
            seed = int(os.environ["FVV_SEED"])
        except ValueError as exc:
            raise ConfigError(f"FVV_SEED must be an integer: {exc}") from exc
    if seed is not None:
        cfg["run"]["seed"] = seed
    return cfg


def _behavior_models(cfg: dict, kind: str):
    if kind == "mixed":
        return [low_interactivity(), high_interactivity()]
    section = dict(cfg["behavior"])
    section["kind"] = kind
    return [config_mod.build_behavior(section)]


def cmd_gen_traces(args) -> int:
    cfg = _load_cfg(args)
    models = _behavior_models(cfg, cfg["behavior"]["kind"])
    run = cfg["run"]
    traces = gen_mixed_traces(
        models,
        run["users"],
        run["chunks"],
        cfg["stream"]["n_views"],
        frames_per_chunk=round(cfg["stream"]["fps"] * cfg["stream"]["chunk_seconds"]),
        seed=run["seed"],
    )
    save_traces(traces, args.out)
    _emit(
        {
            "users": run["users"],
            "chunks": run["chunks"],
            "n_views": cfg["stream"]["n_views"],
            "model": cfg["behavior"]["kind"],
            "seed": run["seed"],
            "switch_rate": round(switch_rate(traces, run["chunks"]), 6),
            "out": args.out,
        }
    )
    return 0


def _history_from_traces(cfg: dict, half: str) -> np.ndarray:
    """Simulate the trace file under uniform allocation to get a popularity
    history; training data then reflects what an edge server would log."""
    exp = config_mod.build_experiment(cfg)
    exp = dataclasses.replace(exp, scheme="uniform")
    traces = load_traces(cfg["run"]["trace_file"], exp.stream.n_views)
    result = run_experiment(exp, traces=traces)
    if half == "constant":
        return np.array([o.x for o in result.observations])
    return np.array([o.x_hat for o in result.observations])


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if cfg["run"]["trace_file"] is None:
        raise ConfigError("train needs --traces (or run.trace_file in the config)")
    history = _history_from_traces(cfg, args.half)
    tr = dict(cfg["train"])
    if tr["seed"] is None:
        tr["seed"] = cfg["run"]["seed"]
    train_cfg = TrainConfig(**tr)
    n_views = cfg["stream"]["n_views"]

    if args.online:
        if not args.checkpoint:
            raise ConfigError("--online requires --checkpoint")
        model = StGnn.load(args.checkpoint)
        if model.graph.n_views != n_views:
            raise ConfigError(
                f"checkpoint is for {model.graph.n_views} views, config says {n_views}"
            )
        warm = cfg["run"]["initial_history"]
        if history.shape[0] <= warm:
            raise InsufficientHistory(
                f"online evaluation needs more than {warm} chunks"
            )
        model_err, ppc_err = [], []
        for u in range(warm, history.shape[0]):
            pred = model.predict_next(history[:u])
            ppc, _ = ppc_predict(history[u - 1], n_views)
            model_err.append(float(np.mean(np.abs(pred - history[u]))))
            ppc_err.append(float(np.mean(np.abs(ppc - history[u]))))
            model.observe(history[: u + 1])
        model.save(args.out)
        _emit(
            {
                "mode": "online",
                "chunks_evaluated": len(model_err),
                "online_mae": float(np.mean(model_err)),
                "ppc_mae": float(np.mean(ppc_err)),
                "checkpoint": args.out,
            }
        )
        return 0

    model = StGnn(path_graph(n_views), train_cfg)
    epoch_mae = model.train_initial(history)
    model.save(args.out)
    final_mae = epoch_mae[-1] if epoch_mae else model.evaluate_mae(
        model.build_samples(history)
    )
    _emit(
        {
            "mode": "initial",
            "half": args.half,
            "n_views": n_views,
            "tau": train_cfg.tau,
            "cheb_order": train_cfg.cheb_order,
            "blocks": train_cfg.blocks,
            "lr": train_cfg.lr,
            "batch_size": train_cfg.batch_size,
            "epochs": train_cfg.epochs,
            "epoch1_mae": epoch_mae[0] if epoch_mae else None,
            "final_mae": final_mae,
            "checkpoint": args.out,
        }
    )
    return 0


def _read_popularity_csv(path, n_views: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-chunk (p, p_hat) pairs from a chunk,view,p,p_hat CSV."""
    import csv as _csv

    rows: dict[int, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or not {
            "chunk", "view", "p", "p_hat"
        }.issubset(reader.fieldnames):
            raise ParseError(f"{path}: need columns chunk,view,p,p_hat")
        for row in reader:
            rows.setdefault(int(row["chunk"]), {})[int(row["view"])] = (
                float(row["p"]),
                float(row["p_hat"]),
            )
    out = []
    for j in sorted(rows):
        entry = rows[j]
        if sorted(entry) != list(range(1, n_views + 1)):
            raise ParseError(f"{path}: chunk {j} must cover views 1..{n_views}")
        p = np.array([entry[v][0] for v in range(1, n_views + 1)])
        p_hat = np.array([entry[v][1] for v in range(1, n_views + 1)])
        out.append((p, p_hat))
    return out


def cmd_allocate(args) -> int:
    cfg = _load_cfg(args)
    n = cfg["stream"]["n_views"]
    al = cfg["allocator"]
    params = QoeParams(
        eta=al["eta"], eta_hat=al["eta_hat"], mu1=al["mu1"], mu2=al["mu2"],
        mu3=al["mu3"], epsilon=al["epsilon"], lambda_min=al["lambda_min"],
        lambda_max=al["lambda_max"],
    )
    b = al["bounds"]
    if all(v is not None for v in b.values()):
        bounds = RateBounds(b["r_min"], b["r_max"], b["rhat_min"], b["rhat_max"])
    else:
        bounds = RateBounds.default_for(args.budget, n)
    scheme = args.scheme
    if scheme == "uniform":
        allocations = [uniform_allocate(0, args.budget, n, bounds)]
    else:
        if not args.popularity:
            raise ConfigError("allocate --scheme adaptive requires --popularity")
        pairs = _read_popularity_csv(args.popularity, n)
        prev = np.full(n, args.budget / (2 * n))
        allocations = []
        for j, (p, p_hat) in enumerate(pairs):
            alloc = allocate(j, args.budget, p, p_hat, prev, params, bounds)
            allocations.append(alloc)
            prev = alloc.constant
    write_allocation_csv(allocations, args.out)
    _emit(
        {
            "scheme": scheme,
            "chunks": len(allocations),
            "budget": args.budget,
            "lambda": [round(a.lam, 9) for a in allocations],
            "flags": ["|".join(a.flags) for a in allocations],
            "out": args.out,
        }
    )
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    exp = config_mod.build_experiment(cfg)
    traces = None
    if cfg["run"]["trace_file"]:
        traces = load_traces(cfg["run"]["trace_file"], exp.stream.n_views)
    out_dir = cfg["run"]["out_dir"]
    try:
        result = run_experiment(exp, traces=traces)
    except DecodabilityViolation as err:
        os.makedirs(out_dir, exist_ok=True)
        dump = os.path.join(out_dir, "decodability_dump.csv")
        write_emitted_csv(getattr(err, "sessions", []), dump)
        for line in err.violations[:20]:
            print(line, file=sys.stderr)
        print(f"emitted streams dumped to {dump}", file=sys.stderr)
        return EXIT_DECODABILITY
    summary = emit_report(result, out_dir)
    delays_ms = [ms for _, _, _, ms in result.delays]
    _emit(
        {
            "scheme": exp.scheme,
            "users": len(result.sessions),
            "chunks": exp.chunks,
            "n_views": exp.stream.n_views,
            "seed": exp.seed,
            "qoe_median": float(np.median(result.qoe)) if result.qoe else None,
            "precision_median": (
                float(np.median(result.precision)) if result.precision else None
            ),
            "delay_mean_ms": float(np.mean(delays_ms)) if delays_ms else None,
            "frames_reencoded": result.frames_reencoded,
            "decodable": True,
            "out_dir": out_dir,
        }
    )
    return 0


def cmd_report(args) -> int:
    summary = load_summary(args.summary)
    files = write_summary_csvs(summary, args.out_dir)
    _emit({"summary": args.summary, "files": files})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvsim",
        description="Trace-driven free-view streaming simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="dotted config override, e.g. allocator.mu2=0.03125",
        )
        p.add_argument("--seed", type=int, help="overrides config and FVV_SEED")

    p = sub.add_parser("gen-traces", help="generate synthetic view traces")
    common(p)
    p.add_argument("--model", choices=["low", "high", "mixed"], default=None)
    p.add_argument("--users", type=int)
    p.add_argument("--chunks", type=int)
    p.add_argument("--n-views", dest="n_views", type=int, required=True)
    p.add_argument("--out", default="traces.csv")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("train", help="train the popularity forecaster")
    common(p)
    p.add_argument("--traces", help="trace CSV to learn from")
    p.add_argument("--n-views", dest="n_views", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--chunks", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument(
        "--half", choices=["switching", "constant"], default="switching",
        help="which popularity series to model",
    )
    p.add_argument("--checkpoint", help="existing checkpoint to continue from")
    p.add_argument("--online", action="store_true",
                   help="one-step-per-chunk online evaluation of --checkpoint")
    p.add_argument("--out", default="model.npz")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("allocate", help="solve one bit allocation")
    common(p)
    p.add_argument("--budget", type=float, required=True, help="units per chunk")
    p.add_argument("--n-views", dest="n_views", type=int)
    p.add_argument("--scheme", choices=["adaptive", "uniform"], default="adaptive")
    p.add_argument("--popularity", help="CSV with chunk,view,p,p_hat")
    p.add_argument("--out", default="allocation.csv")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("run", help="run the closed-loop experiment")
    common(p)
    p.add_argument("--scheme", choices=["adaptive", "uniform", "ppc-only", "gnn-only"])
    p.add_argument("--users", type=int)
    p.add_argument("--chunks", type=int)
    p.add_argument("--n-views", dest="n_views", type=int)
    p.add_argument("--fps", type=int)
    p.add_argument("--chunk-seconds", dest="chunk_seconds", type=float)
    p.add_argument("--model", choices=["low", "high"])
    p.add_argument("--traces", help="trace CSV instead of generated behavior")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="regenerate CSVs from a summary.json")
    p.add_argument("--summary", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, InvalidView, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except InsufficientHistory as err:
        print(f"insufficient history: {err}", file=sys.stderr)
        return EXIT_HISTORY
    except FvsimError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
