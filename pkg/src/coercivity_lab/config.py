"""Run configuration: JSON files validated against a fixed schema.

Every section and key is known in advance; anything else is rejected with
the dotted path of the offending key.
"""

from __future__ import annotations

import copy
import json
import math
from typing import Any, Callable

PIPELINES = ("check-a1", "conjecture", "diffuse", "inkspots", "coercivity", "local", "gallery")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _int(lo=None, hi=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "expected an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
    return check


def _real(lo=None, hi=None, open_lo=False, open_hi=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            return "expected a finite number"
        if lo is not None and (v <= lo if open_lo else v < lo):
            return f"must be {'>' if open_lo else '>='} {lo}"
        if hi is not None and (v >= hi if open_hi else v > hi):
            return f"must be {'<' if open_hi else '<='} {hi}"
    return check


def _opt(check):
    return lambda v: None if v is None else check(v)


def _bool(v):
    if not isinstance(v, bool):
        return "expected true or false"


def _str(choices=None):
    def check(v):
        if not isinstance(v, str):
            return "expected a string"
        if choices is not None and v not in choices:
            return f"must be one of {list(choices)}"
    return check


def _list(item, min_len=0):
    def check(v):
        if not isinstance(v, list) or len(v) < min_len:
            return f"expected a list with at least {min_len} entries"
        for x in v:
            msg = item(x)
            if msg:
                return f"entry {x!r}: {msg}"
    return check


def _dict(v):
    if not isinstance(v, dict):
        return "expected an object"


VARIANTS = ("fractional_laplacian", "one_sided", "directional", "stripes", "tabulated")

# section -> key -> (validator, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[Any], Any], Any]]] = {
    "grid": {
        "dim": (_int(1, 3), 1),
        "cells_per_axis": (_int(2), 64),
        "box_length": (_real(0, open_lo=True), 1.0),
        "periodic": (_bool, True),
    },
    "kernel": {
        "variant": (_str(VARIANTS), "fractional_laplacian"),
        "s": (_real(0, 1, open_lo=True, open_hi=True), 0.5),
        "lambda": (_real(0, open_lo=True), 1.0),
        "params": (_dict, {}),
    },
    "solver": {
        "tol": (_real(0, open_lo=True), 1e-12),
        "soundness_tol": (_real(0), 0.05),
        "check_soundness": (_bool, True),
    },
    "iteration": {
        "max_iterations": (_int(0), 8),
        "delta": (_opt(_real(0, 1, open_lo=True, open_hi=True)), None),
        "c1_ladder": (_list(_real(0, open_lo=True), 1), [1.0, 1.5, 2.0, 3.0, 5.0, 7.0]),
        "radii_h": (_list(_real(0, open_lo=True), 1), [1.5, 2.5, 4.5, 6.5, 8.5, 10.5]),
        "tolerance_cells": (_int(0), 1),
        "near_field_h": (_real(0), 10.0),
        "steps": (_int(1), 1),
        "dump_kernels": (_bool, False),
    },
    "sampling": {
        "variant": (_str(("A1", "A2", "A3")), "A1"),
        "radii_h": (_list(_real(0, open_lo=True), 1), [1.5, 2.5, 3.5, 4.5, 6.5, 8.5, 12.5]),
        "c_offset": (_real(0, open_lo=True), 0.5),
        "exhaustive_limit": (_int(1), 4096),
        "max_centers": (_int(1), 256),
        "max_base_points": (_int(1), 256),
    },
    "conjecture": {
        "radii": (_list(_real(0, open_lo=True), 1), [0.25, 0.3125, 0.375, 0.4375, 0.5]),
        "direction": (_opt(_list(_real(), 1)), None),
        "base_point": (_int(0), 0),
    },
    "local": {
        "max_cover_n": (_int(0, 3), 2),
        "chain_pairs": (_int(0), 40),
    },
}

TOP_LEVEL = {
    "pipeline": (_opt(_str(PIPELINES)), None),
    "seed": (_int(0), 0),
    "workers": (_int(1), 1),
    "output_dir": (_opt(_str()), None),
    "gallery": (_opt(_list(_dict)), None),
}


def _fill(section: str, given: dict, schema: dict) -> dict:
    out = {}
    for key in given:
        if key not in schema:
            raise ConfigError(f"{section}.{key}" if section else key, "unknown key")
    for key, (check, default) in schema.items():
        path = f"{section}.{key}" if section else key
        if key in given:
            msg = check(given[key])
            if msg:
                raise ConfigError(path, msg)
            out[key] = copy.deepcopy(given[key])
        else:
            out[key] = copy.deepcopy(default)
    return out


def validate(raw: dict) -> dict:
    """Return the full configuration with defaults filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    top = {k: v for k, v in raw.items() if k not in SCHEMA}
    cfg = _fill("", top, TOP_LEVEL)
    for section, schema in SCHEMA.items():
        sub = raw.get(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(section, "expected an object")
        cfg[section] = _fill(section, sub, schema)
    if cfg["gallery"] is not None:
        cfg["gallery"] = [_fill(f"gallery[{i}]", k, SCHEMA["kernel"]) for i, k in enumerate(cfg["gallery"])]
    return cfg


def load(path) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    return validate(raw)


def hashed_view(cfg: dict) -> dict:
    """The part of the configuration that determines the numbers (no workers, no paths)."""
    return {k: v for k, v in cfg.items() if k not in ("workers", "output_dir")}
