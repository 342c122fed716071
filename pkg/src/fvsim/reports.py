"""Report emission and reload.

A run is summarized into one JSON file (config echo, seeds, every recorded
series) plus CSVs for the distribution plots: precision CDF, QoE CDF for the
scheme, switch-delay histogram, bandwidth table, and per-chunk popularity.
The summary contains everything needed to regenerate the CSVs, so reports
are reproducible from the JSON alone; nothing here writes timestamps and all
runs with equal seeds produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

from .errors import ParseError
from .harness import RunResult
from .popularity import write_popularity_csv
from .allocator import write_allocation_csv

SUMMARY_VERSION = 1

CSV_NAMES = ("precision.csv", "delay.csv", "bandwidth.csv", "popularity.csv")


def _cdf_rows(values: list[float]) -> list[tuple[float, float]]:
    ordered = sorted(values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]


def _write_cdf(path, column: str, values: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([column, "cdf"])
        for v, c in _cdf_rows(values):
            writer.writerow([f"{v:.9f}", f"{c:.9f}"])


def summarize(result: RunResult) -> dict:
    """Flatten a run into a JSON-serializable summary."""
    return {
        "version": SUMMARY_VERSION,
        "config": dataclasses.asdict(result.config),
        "seed": result.config.seed,
        "scheme": result.config.scheme,
        "series": {
            "budgets": result.budgets,
            "budget_floored": result.budget_floored,
            "lambda": [a.lam for a in result.allocations],
            "flags": ["|".join(a.flags) for a in result.allocations],
            "qoe": result.qoe,
            "precision": result.precision,
        },
        "popularity": {
            "x": [o.x.tolist() for o in result.observations],
            "x_hat": [o.x_hat.tolist() for o in result.observations],
            "p": [p.p.tolist() for p in result.predictions],
            "p_hat": [p.p_hat.tolist() for p in result.predictions],
        },
        "delays": [list(row) for row in result.delays],
        "startups": [list(row) for row in result.startups],
        "bandwidth": [list(row) for row in result.bandwidth],
        "counters": {
            "frames_reassembled": result.frames_reassembled,
            "frames_reencoded": result.frames_reencoded,
            "emitted_frames": result.emitted_frames,
            "users": len(result.sessions),
            "chunks": len(result.qoe),
        },
        # wall-clock timings stay on RunResult: the summary must be
        # byte-identical across equal-seed runs
    }


def write_summary_csvs(summary: dict, out_dir) -> list[str]:
    """Write the four distribution CSVs for a summary; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "precision.csv")
    _write_cdf(path, "precision", summary["series"]["precision"])
    written.append(path)

    path = os.path.join(out_dir, f"qoe_{summary['scheme']}.csv")
    _write_cdf(path, "qoe", summary["series"]["qoe"])
    written.append(path)

    path = os.path.join(out_dir, "delay.csv")
    counts: dict[float, int] = {}
    for _, _, _, ms in summary["delays"]:
        counts[ms] = counts.get(ms, 0) + 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delay_ms", "count"])
        for ms in sorted(counts):
            writer.writerow([f"{ms:.3f}", counts[ms]])
    written.append(path)

    path = os.path.join(out_dir, "bandwidth.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["chunk", "user_id", "reassembly_bits", "has10_bits", "conventional_bits"]
        )
        for chunk, uid, own, has10, conv in summary["bandwidth"]:
            writer.writerow([chunk, uid, own, has10, conv])
    written.append(path)
    return written


def emit_report(result: RunResult, out_dir) -> dict:
    """Write all report files for a finished run; returns the summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(result)
    write_summary_csvs(summary, out_dir)
    write_popularity_csv(
        result.observations, result.predictions, result.precision,
        os.path.join(out_dir, "popularity.csv"),
    )
    write_allocation_csv(result.allocations, os.path.join(out_dir, "allocation.csv"))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def load_summary(path) -> dict:
    """Reload a summary.json; validates the version and the series lengths."""
    with open(path) as fh:
        summary = json.load(fh)
    if summary.get("version") != SUMMARY_VERSION:
        raise ParseError(f"{path}: unsupported summary version {summary.get('version')}")
    series = summary.get("series", {})
    lengths = {k: len(v) for k, v in series.items()}
    if len(set(lengths.values())) > 1:
        raise ParseError(f"{path}: series lengths disagree: {lengths}")
    return summary
