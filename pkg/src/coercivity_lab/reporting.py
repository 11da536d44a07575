"""Report serialization: JSON reports, CSV plot data and the binary kernel file."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .grid import Grid
from .kernels import KernelError, TabulatedKernel

__all__ = [
    "KERNEL_MAGIC",
    "save_kernel",
    "load_kernel",
    "to_jsonable",
    "dump_json",
    "config_hash",
    "reproducibility",
    "write_csv",
    "emit_plot_data",
    "GROWTH_COLUMNS",
]

KERNEL_MAGIC = b"CLABKRN1"
GROWTH_COLUMNS = ["j", "x_index", "ball_id", "outcome", "count_j", "count_j1", "ball_cells", "ratio"]


def save_kernel(path, K: TabulatedKernel) -> None:
    """Magic, a length-prefixed JSON header, then row-major little-endian float64 entries."""
    g = K.grid
    header = json.dumps({"dim": g.dim, "N": g.cells_per_axis, "L": g.box_length,
                         "periodic": g.periodic, "s": K.s}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(KERNEL_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(K.entries, dtype="<f8").tobytes())


def load_kernel(path, kernel_id: str = "loaded") -> TabulatedKernel:
    with open(path, "rb") as f:
        if f.read(len(KERNEL_MAGIC)) != KERNEL_MAGIC:
            raise KernelError(f"{path}: not a kernel file")
        (n,) = struct.unpack("<I", f.read(4))
        head = json.loads(f.read(n))
        data = np.frombuffer(f.read(), dtype="<f8")
    g = Grid(int(head["dim"]), int(head["N"]), float(head["L"]), bool(head["periodic"]))
    if data.size != g.size ** 2:
        raise KernelError(f"{path}: expected {g.size ** 2} entries, found {data.size}")
    return TabulatedKernel(g, data.reshape(g.size, g.size), float(head["s"]), kernel_id)


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return str(obj)


def dump_json(path, obj) -> None:
    # sorted keys and one key per line keep the timestamp on a line of its own
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(to_jsonable(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def reproducibility(cfg: dict, seed: int) -> dict:
    return {"config_hash": config_hash(cfg), "seed": int(seed), "version": __version__}


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in r])


def emit_plot_data(result: dict, out_dir) -> list:
    """Write the CSV/JSON plot files present in ``result``; returns the written paths.

    Recognized entries: ``thresholds`` (a_j sequence), ``growth`` (GrowthReports),
    ``trace`` (quotient per sweep), ``minimizer`` (GridFunction), ``cover`` and
    ``chains`` (geometry), ``conjecture`` rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "thresholds" in result:
        p = out / "thresholds.csv"
        write_csv(p, ["j", "a_j"], [(j, a) for j, a in enumerate(result["thresholds"])])
        written.append(p)
    if "growth" in result:
        p = out / "growth.csv"
        write_csv(p, GROWTH_COLUMNS, [r.to_row() for r in result["growth"]])
        written.append(p)
    if "trace" in result:
        p = out / "quotient_trace.csv"
        write_csv(p, ["sweep", "quotient"], [(i + 1, q) for i, q in enumerate(result["trace"])])
        written.append(p)
    if "minimizer" in result:
        u = result["minimizer"]
        g = u.grid
        coords = [f"x{k}" for k in range(g.dim)]
        p = out / "minimizer.csv"
        write_csv(p, ["index"] + coords + ["value"],
                  [[i] + [float(c) for c in g.centers[i]] + [float(u.values[i])] for i in range(g.size)])
        written.append(p)
    if "cover" in result:
        p = out / "cover.json"
        dump_json(p, result["cover"])
        written.append(p)
    if "chains" in result:
        p = out / "chains.json"
        dump_json(p, result["chains"])
        written.append(p)
    if "conjecture" in result:
        p = out / "conjecture.csv"
        write_csv(p, ["r", "ratio", "reference"], result["conjecture"])
        written.append(p)
    return [os.fspath(p) for p in written]
