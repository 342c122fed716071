"""Configuration schema, file loading, and dotted-key overrides.

The config file is JSON with these sections and defaults (a missing file or
section means "all defaults"; unknown keys anywhere are rejected):

    stream:    n_views (23), fps (25), chunk_seconds (1.0), gop_constant (25),
               gop_switching (2), i_to_p_ratio (4.0)
    run:       users (50), chunks (60), scheme ("adaptive"), seed (0),
               bits_per_unit (1000), initial_history (10),
               trace_file (null), out_dir ("reports")
    behavior:  kind ("low"), dwell_mean_chunks, sweep_views_mean, view_skew,
               home_bias, burst_every_chunks, burst_chunks, burst_dwell_chunks
    allocator: eta (1.0), eta_hat (4.0), mu1 (1.0), mu2 (0.0625), mu3 (1.0),
               epsilon (0.005), lambda_min (0.0), lambda_max (100.0),
               sw (4), r_tar (null: 10 per view), t_d (null: chunk_seconds),
               bounds {r_min, r_max, rhat_min, rhat_max} (null: fair-share
               defaults; set all four or none)
    train:     tau (10), horizon (1), cheb_order (2), blocks (2), lr (0.005),
               batch_size (32), epochs (50), seed (null: run seed)

Overrides use dotted keys, e.g. ``allocator.mu2=0.03125`` or
``stream.n_views=8``; values are parsed as JSON with a bare-string fallback.
"""

from __future__ import annotations

import copy
import json

from .allocator import QoeParams, RateBounds
from .errors import ConfigError
from .gnn import TrainConfig
from .harness import ExperimentConfig
from .streams import StreamConfig
from .traces import BehaviorModel, high_interactivity, low_interactivity

DEFAULTS: dict = {
    "stream": {
        "n_views": 23,
        "fps": 25,
        "chunk_seconds": 1.0,
        "gop_constant": 25,
        "gop_switching": 2,
        "i_to_p_ratio": 4.0,
    },
    "run": {
        "users": 50,
        "chunks": 60,
        "scheme": "adaptive",
        "seed": 0,
        "bits_per_unit": 1000,
        "initial_history": 10,
        "trace_file": None,
        "out_dir": "reports",
    },
    "behavior": {
        "kind": "low",
        "dwell_mean_chunks": None,   # null: the kind's preset value
        "sweep_views_mean": None,
        "view_skew": 1.1,
        "home_bias": 0.7,
        "burst_every_chunks": 0,
        "burst_chunks": 0,
        "burst_dwell_chunks": 0.2,
    },
    "allocator": {
        "eta": 1.0,
        "eta_hat": 4.0,
        "mu1": 1.0,
        "mu2": 0.0625,
        "mu3": 1.0,
        "epsilon": 0.005,
        "lambda_min": 0.0,
        "lambda_max": 100.0,
        "sw": 4,
        "r_tar": None,
        "t_d": None,
        "bounds": {"r_min": None, "r_max": None, "rhat_min": None, "rhat_max": None},
    },
    "train": {
        "tau": 10,
        "horizon": 1,
        "cheb_order": 2,
        "blocks": 2,
        "lr": 0.005,
        "batch_size": 32,
        "epochs": 50,
        "seed": None,
    },
}


def _merge(defaults: dict, given: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a section")
            out[key] = _merge(defaults[key], value, prefix=path + ".")
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Defaults merged with the JSON file at ``path`` (if given)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path) as fh:
            given = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _merge(DEFAULTS, given)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` pairs on top of a loaded config."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[k]
        last = keys[-1]
        if not isinstance(node, dict) or last not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(node[last], dict):
            raise ConfigError(f"config key {dotted!r} is a section, not a value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings like scheme=adaptive
        node[last] = value
    return cfg


def build_behavior(section: dict) -> BehaviorModel:
    kind = section["kind"]
    if kind == "low":
        preset = low_interactivity()
    elif kind == "high":
        preset = high_interactivity()
    else:
        raise ConfigError(f"behavior.kind must be low or high, got {kind!r}")
    return BehaviorModel(
        kind=kind,
        dwell_mean_chunks=(
            section["dwell_mean_chunks"]
            if section["dwell_mean_chunks"] is not None
            else preset.dwell_mean_chunks
        ),
        sweep_views_mean=(
            section["sweep_views_mean"]
            if section["sweep_views_mean"] is not None
            else preset.sweep_views_mean
        ),
        view_skew=section["view_skew"],
        home_bias=section["home_bias"],
        burst_every_chunks=section["burst_every_chunks"],
        burst_chunks=section["burst_chunks"],
        burst_dwell_chunks=section["burst_dwell_chunks"],
    )


def build_experiment(cfg: dict) -> ExperimentConfig:
    """Construct the typed experiment description from a config dict."""
    stream = StreamConfig(**cfg["stream"])
    al = cfg["allocator"]
    if al["t_d"] is not None and al["t_d"] != stream.chunk_seconds:
        raise ConfigError(
            f"allocator.t_d ({al['t_d']}) disagrees with stream.chunk_seconds "
            f"({stream.chunk_seconds}); set only one"
        )
    qoe = QoeParams(
        eta=al["eta"], eta_hat=al["eta_hat"], mu1=al["mu1"], mu2=al["mu2"],
        mu3=al["mu3"], epsilon=al["epsilon"], lambda_min=al["lambda_min"],
        lambda_max=al["lambda_max"],
    )
    b = al["bounds"]
    bound_values = [b["r_min"], b["r_max"], b["rhat_min"], b["rhat_max"]]
    if all(v is None for v in bound_values):
        bounds = None
    elif any(v is None for v in bound_values):
        raise ConfigError("allocator.bounds: set all four values or none")
    else:
        bounds = RateBounds(*bound_values)
    run = cfg["run"]
    tr = dict(cfg["train"])
    if tr["seed"] is None:
        tr["seed"] = run["seed"]
    return ExperimentConfig(
        stream=stream,
        users=run["users"],
        chunks=run["chunks"],
        scheme=run["scheme"],
        seed=run["seed"],
        behavior=build_behavior(cfg["behavior"]),
        qoe=qoe,
        train=TrainConfig(**tr),
        bounds=bounds,
        r_tar=al["r_tar"],
        sw=al["sw"],
        bits_per_unit=run["bits_per_unit"],
        initial_history=run["initial_history"],
    )
