"""Command-line entry point: one subcommand per pipeline.

Exit status: 0 on success, 2 for an invalid configuration (the message names
the key), 1 for a pipeline fault (structured JSON on stderr).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod
from .coercivity import ConvergenceError, PipelineSpec, SoundnessError, global_pipeline, local_pipeline
from .diffusion import NormalizationError, diffuse_step, initial_state
from .geometry import ball_chain, cover_unit_ball
from .grid import Grid, GridError
from .inkspots import SaturationSpec, calibrate_a_next, saturation_iterations
from .kernels import KernelError, KernelSpec, SamplingPlan, check_assumption, conjecture_ratio, singular_profile, tabulate
from .reporting import dump_json, emit_plot_data, reproducibility, save_kernel

ENV_OUT = "COERCIVITY_LAB_OUT"

__all__ = ["main", "run", "ENV_OUT"]


def _grid(cfg) -> Grid:
    return Grid.from_config(cfg["grid"])


def _kernel(cfg, kcfg=None):
    k = KernelSpec.from_config(kcfg or cfg["kernel"])
    return k, tabulate(k, _grid(cfg))


def _sampling(cfg) -> SamplingPlan:
    s = cfg["sampling"]
    return SamplingPlan(tuple(s["radii_h"]), s["c_offset"], cfg["seed"], s["exhaustive_limit"],
                        s["max_centers"], s["max_base_points"])


def _saturation(cfg) -> SaturationSpec:
    it = cfg["iteration"]
    return SaturationSpec(max_iterations=it["max_iterations"], delta=it["delta"],
                          c1_ladder=tuple(it["c1_ladder"]), radii_h=tuple(it["radii_h"]),
                          tolerance_cells=it["tolerance_cells"], near_field_h=it["near_field_h"],
                          workers=cfg["workers"])


def _pipeline_spec(cfg) -> PipelineSpec:
    sv = cfg["solver"]
    return PipelineSpec(saturation=_saturation(cfg), sampling=_sampling(cfg), solver_tol=sv["tol"],
                        soundness_tol=sv["soundness_tol"], check_soundness=sv["check_soundness"],
                        seed=cfg["seed"], max_cover_n=cfg["local"]["max_cover_n"],
                        chain_pairs=cfg["local"]["chain_pairs"])


def _check_a1(cfg, out):
    spec, K = _kernel(cfg)
    rep = check_assumption(K, spec.lam, cfg["sampling"]["variant"], _sampling(cfg))
    return {"kernel_id": K.kernel_id, "assumption": rep.to_dict()}, {}


def _conjecture(cfg, out):
    spec, K = _kernel(cfg)
    c = cfg["conjecture"]
    d = K.grid.dim
    e = np.asarray(c["direction"] if c["direction"] is not None else [1.0] + [0.0] * (d - 1), dtype=float)
    ref = spec.lam / (2.0 - 2.0 * spec.s)
    rows = [(r, conjecture_ratio(K, c["base_point"], r, e), ref) for r in c["radii"]]
    return {"kernel_id": K.kernel_id, "reference": ref,
            "ratios": [{"r": r, "ratio": q} for r, q, _ in rows]}, {"conjecture": rows}


def _diffuse(cfg, out):
    spec, K = _kernel(cfg)
    rep = check_assumption(K, spec.lam, "A1", _sampling(cfg))
    if not rep.mu_hat > 0:
        raise KernelError("precondition failed: kernel does not satisfy (A1) (mu_hat = 0)")
    it = cfg["iteration"]
    state = initial_state(K, spec.lam, rep.mu_hat, it["delta"], workers=cfg["workers"])
    prof = singular_profile(K.grid, K.s)
    steps = []
    for _ in range(it["steps"]):
        nxt = diffuse_step(state, K)
        cal = calibrate_a_next(nxt, state.a, it["tolerance_cells"])
        nxt = nxt.with_threshold(cal.a)
        off = prof > 0
        ratio = float(np.min(nxt.K.entries[off] / prof[off]))
        entry = {"j": nxt.j, "a_j": cal.a, "delta": nxt.eta.delta,
                 "domination_constant": nxt.domination_constant, "min_ratio": ratio,
                 "calibration": cal.to_dict()}
        steps.append(entry)
        if it["dump_kernels"]:
            save_kernel(out / f"K{nxt.j}.bin", nxt.K)
            dump_json(out / f"K{nxt.j}.json", {k: entry[k] for k in
                                                ("j", "a_j", "delta", "domination_constant", "min_ratio")})
        state = nxt
    return {"kernel_id": K.kernel_id, "mu_hat": rep.mu_hat, "eta": state.eta.to_dict(), "steps": steps}, \
        {"thresholds": [spec.lam] + [s["a_j"] for s in steps]}


def _inkspots(cfg, out):
    spec, K = _kernel(cfg)
    rep = check_assumption(K, spec.lam, "A1", _sampling(cfg))
    sat = saturation_iterations(K, spec.lam, rep.mu_hat, _saturation(cfg))
    return {"kernel_id": K.kernel_id, "assumption": rep.to_dict(), "saturation": sat.to_dict()}, \
        {"thresholds": sat.thresholds, "growth": sat.reports}


def _coercivity(cfg, out):
    spec, K = _kernel(cfg)
    r = global_pipeline(K, spec.lam, _pipeline_spec(cfg))
    plot = {"thresholds": r.saturation.thresholds, "growth": r.saturation.reports,
            "trace": r.iterations["trace"], "minimizer": r.minimizer}
    return {"kernel_id": K.kernel_id, "report": r.to_dict()}, plot


def _local(cfg, out):
    spec, K = _kernel(cfg)
    r = local_pipeline(K, spec.lam, _pipeline_spec(cfg))
    plot = {"trace": r.iterations["trace"], "minimizer": r.minimizer}
    geo = r.extras.get("geometry", {})
    if "n" in geo:
        cover = cover_unit_ball(geo["n"], K.grid.dim)
        plot["cover"] = cover.to_json()
        rng = np.random.default_rng(cfg["seed"])
        pairs = rng.choice(len(cover), size=(min(5, len(cover)), 2), replace=True)
        plot["chains"] = [ball_chain(cover.balls[i], cover.balls[j], geo["n"]).to_json() for i, j in pairs]
    if "thresholds" in r.extras.get("saturation", {}):
        plot["thresholds"] = r.extras["saturation"]["thresholds"]
    return {"kernel_id": K.kernel_id, "report": r.to_dict()}, plot


def default_gallery(s: float = 0.5) -> list:
    return [
        {"variant": "fractional_laplacian", "s": s, "lambda": 1.0, "params": {}},
        {"variant": "stripes", "s": s, "lambda": 1.0, "params": {}},
        {"variant": "stripes", "s": 0.25, "lambda": 1.0, "params": {}},
        {"variant": "stripes", "s": 0.75, "lambda": 1.0, "params": {}},
        {"variant": "directional", "s": s, "lambda": 1.0, "params": {"b": [1.0, 2.0]}},
        {"variant": "one_sided", "s": s, "lambda": 1.0, "params": {}},
        {"variant": "tabulated", "s": s, "lambda": 1.0, "params": {"density": 0.8, "seed": 1}},
    ]


def _gallery(cfg, out):
    entries = []
    for kc in cfg["gallery"] or default_gallery(cfg["kernel"]["s"]):
        spec, K = _kernel(cfg, kc)
        a1 = check_assumption(K, spec.lam, "A1", _sampling(cfg))
        row = {"kernel_id": K.kernel_id, "mu_hat": a1.mu_hat}
        if not a1.mu_hat > 0:
            row["status"] = "skipped: fails (A1)"
        else:
            try:
                r = global_pipeline(K, spec.lam, _pipeline_spec(cfg))
                row.update(status="ok", constructive_bound=r.constructive_bound,
                           rayleigh_min=r.rayleigh_min, n=r.n, sound=r.extras["sound"])
            except (KernelError, GridError, ConvergenceError, SoundnessError) as exc:
                row.update(status=f"fault: {type(exc).__name__}: {exc}")
        entries.append(row)
    return {"kernels": entries}, {}


PIPELINE_FUNCS = {
    "check-a1": _check_a1,
    "conjecture": _conjecture,
    "diffuse": _diffuse,
    "inkspots": _inkspots,
    "coercivity": _coercivity,
    "local": _local,
    "gallery": _gallery,
}

FAULTS = (KernelError, GridError, ConvergenceError, SoundnessError, NormalizationError,
          AssertionError, OSError, np.linalg.LinAlgError)


def output_dir(cfg, pipeline, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    root = os.environ.get(ENV_OUT, "coercivity_runs")
    return Path(root) / pipeline


def run(pipeline: str, cfg: dict, out_dir=None) -> Path:
    """Execute one pipeline and write report.json plus plot data; returns the output directory."""
    out = output_dir(cfg, pipeline, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result, plot = PIPELINE_FUNCS[pipeline](cfg, out)
    files = emit_plot_data(plot, out)
    report = {
        "pipeline": pipeline,
        "result": result,
        "files": sorted(Path(f).name for f in files),
        "reproducibility": reproducibility(cfgmod.hashed_view(cfg), cfg["seed"]),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    dump_json(out / "report.json", report)
    return out


def _fault(exc, code=1):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, cfgmod.ConfigError):
        payload["key"] = exc.key
    partial = getattr(exc, "partial", None)
    if partial is not None and hasattr(partial, "to_dict"):
        payload["partial"] = partial.to_dict()
    from .reporting import to_jsonable
    print(json.dumps(to_jsonable(payload), sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coercivity-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name in cfgmod.PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help=f"output directory (default: ${ENV_OUT}/<pipeline>)")
    args = parser.parse_args(argv)
    try:
        raw = {}
        if args.config:
            cfg = cfgmod.load(args.config)
        else:
            cfg = cfgmod.validate(raw)
        if cfg["pipeline"] is not None and cfg["pipeline"] != args.pipeline:
            raise cfgmod.ConfigError("pipeline", f"config is for {cfg['pipeline']!r}, not {args.pipeline!r}")
        if args.workers is not None:
            if args.workers < 1:
                raise cfgmod.ConfigError("workers", "must be >= 1")
            cfg["workers"] = args.workers
        if args.seed is not None:
            if args.seed < 0:
                raise cfgmod.ConfigError("seed", "must be >= 0")
            cfg["seed"] = args.seed
        try:
            _grid(cfg)
            KernelSpec.from_config(cfg["kernel"])
        except (GridError, KernelError) as exc:
            raise cfgmod.ConfigError("grid" if isinstance(exc, GridError) else "kernel", str(exc)) from exc
    except cfgmod.ConfigError as exc:
        return _fault(exc, 2)
    try:
        out = run(args.pipeline, cfg, args.out)
    except FAULTS as exc:
        return _fault(exc, 1)
    print(out / "report.json")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
