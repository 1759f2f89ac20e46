"""Experiment configuration: one JSON document, overridable by dotted keys."""

from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from .environment import ConfigError, EnvDistribution
from .observables import FunctionSpec
from .particles import ENGINES
from .valleys import GammaParams

# committed configuration behind the acceptance suite (seeds, scales, thresholds)
ACCEPTANCE_CONFIG = Path(__file__).parent / "configs" / "acceptance.json"

DEFAULTS: dict = {
    "env": {"kind": "two_point_symmetric", "rho0": 0.25, "seed": 1},
    "sim": {"lambda": 1.0, "t": 1.0e5, "trials": 10, "engine": "split",
            "window_margin": 64, "workers": 1},
    "valleys": {"gamma": 0.0, "K": 5.0, "chunk_factor": 4.0, "cap_factor": 512.0},
    "observables": {"f_kind": "triangle_bump", "amplitude": 1.0, "cte": 1.0,
                    "lambdas": [0.0, 0.5, 1.0, 2.0], "n_starts": 10},
    "renewal": {"Gamma": 40.0, "n_envs": 200, "target_extrema": 30,
                "nf_envs": 200, "nf_K": 10.0, "n_boot": 400},
    "output": {"dir": "out", "formats": ["json", "csv"]},
    "check": {"criteria": [1, 2, 3, 4, 5, 6, 7, 8], "scale": "quick"},
    "thresholds": {
        "c3_z": 4.0, "c3_site_frac": 0.99, "c3_fano_low": 0.9, "c3_fano_high": 1.1,
        "c4_mass": 0.9, "c4_bottom_frac": 0.8, "c4_start_frac": 0.7,
        "c5_rel_err": 0.25, "c5_env_frac": 0.6,
        "c6_cross_frac": 0.02, "c6_influx_factor": 0.05,
        "c7_mean": 2.0, "c7_mean_rel": 0.03, "c7_laplace_abs": 0.02, "c7_lag1": 0.03,
        "c8_mean_rel": 0.10,
    },
}
THRESHOLDS = DEFAULTS["thresholds"]


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[k] = _merge(out[k], v, where + ".")
        else:
            out[k] = v
    return out


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, doc)
    for k, v in (overrides or {}).items():
        set_dotted(cfg, k, v)
    validate(cfg)
    return cfg


def _positive(cfg, section, key, integer=False):
    v = cfg[section][key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0
    if integer:
        ok = ok and float(v).is_integer()
    if not ok:
        kind = "positive integer" if integer else "positive number"
        raise ConfigError(f"{section}.{key} must be a {kind}, got {v!r}")


def validate(cfg: dict) -> None:
    """Check every precondition up front so no run fails halfway on bad input."""
    EnvDistribution(cfg["env"]["kind"], cfg["env"]["rho0"])
    if not isinstance(cfg["env"]["seed"], int) or cfg["env"]["seed"] < 0:
        raise ConfigError("env.seed must be a non-negative integer")
    _positive(cfg, "sim", "lambda")
    _positive(cfg, "sim", "t")
    _positive(cfg, "sim", "trials", integer=True)
    _positive(cfg, "sim", "workers", integer=True)
    if cfg["sim"]["engine"] not in ENGINES:
        raise ConfigError(f"sim.engine must be one of {ENGINES}")
    m = cfg["sim"]["window_margin"]
    if not isinstance(m, int) or m < 0:
        raise ConfigError("sim.window_margin must be a non-negative integer")
    _positive(cfg, "valleys", "K")
    g = cfg["valleys"]["gamma"]
    if not isinstance(g, (int, float)) or not math.isfinite(g):
        raise ConfigError("valleys.gamma must be a finite number")
    try:
        GammaParams(float(cfg["sim"]["t"]), float(g))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    FunctionSpec(cfg["observables"]["f_kind"], cfg["valleys"]["K"], cfg["observables"]["amplitude"])
    _positive(cfg, "observables", "cte")
    _positive(cfg, "observables", "n_starts", integer=True)
    lams = cfg["observables"]["lambdas"]
    if not isinstance(lams, list) or any(not isinstance(x, (int, float)) or x < 0 for x in lams):
        raise ConfigError("observables.lambdas must be a list of non-negative numbers")
    for key in ("Gamma", "nf_K"):
        _positive(cfg, "renewal", key)
    for key in ("n_envs", "target_extrema", "nf_envs"):
        _positive(cfg, "renewal", key, integer=True)
    if cfg["renewal"]["target_extrema"] < 3:
        raise ConfigError("renewal.target_extrema must be at least 3")
    if not isinstance(cfg["output"]["dir"], str):
        raise ConfigError("output.dir must be a string")
    if cfg["check"]["scale"] not in ("quick", "full"):
        raise ConfigError("check.scale must be 'quick' or 'full'")
    if any(c not in range(1, 10) for c in cfg["check"]["criteria"]):
        raise ConfigError("check.criteria must list criterion numbers 1-9")


def distribution(cfg: dict) -> EnvDistribution:
    return EnvDistribution(cfg["env"]["kind"], cfg["env"]["rho0"])


def function_spec(cfg: dict) -> FunctionSpec:
    o = cfg["observables"]
    return FunctionSpec(o["f_kind"], cfg["valleys"]["K"], o["amplitude"])
