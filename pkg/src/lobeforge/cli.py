"""Command-line entry point: generate, simulate, bistable-check, reopen, analyze, plot."""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BOXPLOT,
    CURVE,
    MAX_FORCE,
    WORK,
    ObservationTable,
    build_report,
    emit_plots,
    parse_trace_csv,
    read_observations,
    write_report,
)
from .config import (
    MATERIAL_PROPERTIES,
    PRINT_SETTINGS,
    RunConfig,
    build_model,
    load_config,
    material_from,
)
from .errors import EmptyData, LobeforgeError
from .geometry import export_stl, is_watertight, read_stl, solid_volume, weld
from .protocol import (
    DIRECTIONS,
    LOADING,
    SNAPPING,
    compute_work,
    detect_transition_points,
    make_scene,
    run_indentation,
    run_reopening,
    slenderness,
    write_batch_manifest,
    write_trace_csv,
)
from .solver import check_bistability, find_equilibrium, holder_constraints, opening_angle

log = logging.getLogger("lobeforge")

ALL_ACTUATORS = ("SG-const", "SG-taper", "ATL-const", "ATL-taper")
TRACE_NAME = re.compile(r"^(SG-const|SG-taper|ATL-const|ATL-taper)_(Loading|Snapping)_r(\d+)\.csv$")
SUMMARY_HEADER = ["actuator", "direction", "repetition", "thickness_offset_mm", "offset_mm",
                  "x1_mm", "x2_mm", "max_force_n", "work_mj", "snap", "complete", "note"]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _setup_logging() -> None:
    level = os.environ.get("LOBEFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic(path: Path, writer) -> None:
    """Call ``writer(tmp_path)`` then move the result into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(model=getattr(args, "model", None),
                              thickness=getattr(args, "thickness", None),
                              seed=getattr(args, "seed", None))


def _direction_arg(value):
    return {"loading": LOADING, "snapping": SNAPPING}[value] if value else None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def mesh_to_dict(mesh) -> dict:
    return {
        "vertices": np.round(mesh.vertices, 12).tolist(),
        "triangles": mesh.triangles.tolist(),
        "thickness": np.round(np.asarray(mesh.thickness, dtype=float), 12).tolist(),
        "tags": {k: np.flatnonzero(v).tolist() for k, v in sorted(mesh.tags.items())},
        "apex": int(mesh.apex),
        "kind": mesh.kind,
    }


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    label = cfg.actuator
    mesh, _ = build_model(cfg)
    mat = material_from(cfg)
    sl = slenderness(mesh)
    stl = out / f"{label}.stl"
    _atomic(stl, lambda p: export_stl(mesh, p))
    corners, _ = read_stl(stl)
    rv, rf = weld(corners)
    meta = {
        "actuator": label,
        "units": {"length": "mm", "force": "N", "modulus": "MPa", "energy": "mJ"},
        "print_settings": PRINT_SETTINGS,
        "material_properties": MATERIAL_PROPERTIES,
        "material_model": {"E_mpa": mat.E, "nu": mat.nu, "datasheet_secants_mpa": list(mat.secants)},
        "mesh": {"vertices": int(mesh.n_vertices), "triangles": int(len(mesh.triangles)),
                 "target_edge_mm": cfg["geometry"]["target_edge_mm"]},
        "thickness_mm": {"min": float(np.min(mesh.thickness)), "max": float(np.max(mesh.thickness)),
                         "mean": sl.thickness},
        "solid": {"volume_mm3": solid_volume(rv, rf), "watertight": bool(is_watertight(rf)),
                  "stl_triangles": int(len(rf)), "stl_vertices": int(len(rv))},
        "slenderness": {"length_mm": sl.length, "thickness_mm": sl.thickness,
                        "ratio": sl.slenderness, "predicted_reopening": sl.predicted_mode},
        "version": __version__,
    }
    _atomic_write_text(out / f"{label}_mesh.json", json.dumps(mesh_to_dict(mesh)) + "\n")
    _atomic_write_text(out / f"{label}_metadata.json", _json_text(meta))
    _atomic_write_text(out / f"{label}_config.json", cfg.to_json())
    print(f"wrote {label}.stl, {label}_mesh.json, {label}_metadata.json, {label}_config.json to {out}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    actuator: str
    direction: str
    repetition: int
    row: dict
    stroke: np.ndarray | None = None
    force: np.ndarray | None = None
    error: str | None = None

    @property
    def trace_name(self) -> str:
        return f"{self.actuator}_{self.direction}_r{self.repetition:02d}.csv"


def trace_metrics(stroke, force, snap_index=None, f_thresh=0.01, drop_fraction=0.2):
    """(x1, x2, peak force up to x2, work) for one trace."""
    samples = np.column_stack([stroke, force])
    x1, x2 = detect_transition_points(samples, f_thresh, drop_fraction)
    if snap_index is not None:
        x2 = min(x2, float(stroke[snap_index]))
    peak = float(np.max(np.asarray(force)[np.asarray(stroke) <= x2 + 1e-12]))
    return x1, x2, peak, compute_work(samples, x1, x2)


def _run_seed(seed: int, actuator: str, direction: str, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(ALL_ACTUATORS.index(actuator), DIRECTIONS.index(direction), rep))


def simulate_run(cfg: RunConfig, actuator: str, direction: str, rep: int) -> RunResult:
    """One indentation test on a specimen with seeded print variation."""
    batch, proto, tol = cfg["batch"], cfg["protocol"], cfg["solver"]["grad_tol_n"]
    rng = np.random.default_rng(_run_seed(cfg["seed"], actuator, direction, rep))
    dt = float(rng.uniform(-1.0, 1.0) * batch["thickness_noise_mm"])
    row = {"actuator": actuator, "direction": direction, "repetition": rep, "thickness_offset_mm": dt}
    try:
        acfg = cfg.for_actuator(actuator)
        mesh, shell = build_model(acfg, dt)
        holder = holder_constraints(mesh, proto["holder_width_mm"])
        if direction == LOADING:
            guess = mesh.vertices + rng.normal(scale=batch["guess_noise_mm"], size=mesh.vertices.shape)
            start = find_equilibrium(shell, holder.enforce(guess, mesh.vertices), holder, tol=tol,
                                     reference=mesh.vertices, compute_lambda=False).positions
        else:
            rep_b = check_bistability(shell, holder, tol=tol)
            if not rep_b.bistable:
                raise LobeforgeError("model is not bistable; no loaded state to snap from")
            start = rep_b.state_b.positions
        offsets = [proto["offset_mm"]]
        if proto["retry_offset_mm"] > 0 and proto["retry_offset_mm"] != proto["offset_mm"]:
            offsets.append(proto["retry_offset_mm"])
        note = ""
        for k, off in enumerate(offsets):
            scene = make_scene(shell, direction, start, proto["holder_width_mm"], off, proto["indenter_radius_mm"])
            trace = run_indentation(scene, proto["stroke_max_mm"], proto["stroke_step_mm"], tol=tol,
                                    f_thresh=proto["f_thresh_n"])
            x1, x2, peak, work = trace_metrics(trace.stroke, trace.force, trace.snap_index, proto["f_thresh_n"])
            # a snap marker or a force drop before the end both count as a transition
            changed = bool(trace.snap_detected or x2 < trace.stroke[-1])
            if changed or k == len(offsets) - 1:
                break
            note = f"no snap at {off:g} mm offset; retried {offsets[k + 1]:g} mm toward the hinge"
        if not changed:
            note = (note + "; " if note else "") + "no configuration change within stroke range"
        row.update(offset_mm=off, x1_mm=x1, x2_mm=x2, max_force_n=peak, work_mj=work,
                   snap=changed, complete=trace.complete, note=note)
        return RunResult(actuator, direction, rep, row, trace.stroke, trace.force)
    except LobeforgeError as exc:
        row.update(complete=False, note=f"error: {exc}")
        return RunResult(actuator, direction, rep, row, error=str(exc))


def planned_runs(cfg: RunConfig, actuator=None, direction=None):
    actuators = [actuator] if actuator else list(cfg["batch"]["actuators"])
    directions = [direction] if direction else list(cfg["batch"]["directions"])
    reps = range(1, cfg["batch"]["repetitions"] + 1)
    return [(a, d, r) for a in actuators for d in directions for r in reps]


def run_batch(cfg: RunConfig, runs, threads: int = 1) -> list[RunResult]:
    if threads <= 1:
        return [simulate_run(cfg, *r) for r in runs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: simulate_run(cfg, *r), runs))


def write_batch_outputs(out: Path, results: list[RunResult], speed: float = 40.0) -> None:
    traces = out / "traces"
    for res in results:
        if res.stroke is not None:
            _atomic(traces / res.trace_name, lambda p, r=res: write_trace_csv(p, r.stroke, r.force, speed))
    lines = [",".join(SUMMARY_HEADER)]
    obs = []
    counts = {}
    for res in results:
        lines.append(",".join(_csv_cell(_fmt(res.row.get(k))) for k in SUMMARY_HEADER))
        if res.error is None:
            obs.append((res.actuator, res.direction, MAX_FORCE, res.row["max_force_n"]))
            obs.append((res.actuator, res.direction, WORK, res.row["work_mj"]))
            model, kind = res.actuator.split("-")
            counts.setdefault((model, kind), {}).setdefault(res.direction, 0)
            counts[(model, kind)][res.direction] += 1
    _atomic_write_text(out / "summary.csv", "\n".join(lines) + "\n")
    _atomic(out / "observations.csv", lambda p: ObservationTable.from_rows(obs).to_csv(p))
    _atomic(out / "manifest.json", lambda p: write_batch_manifest(p, counts))


def _csv_cell(s: str) -> str:
    return f'"{s}"' if ("," in s or '"' in s) else s


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    actuator = None
    if args.model or args.thickness:
        actuator = cfg.actuator
    runs = planned_runs(cfg, actuator, _direction_arg(args.direction))
    results = run_batch(cfg, runs, args.threads)
    out = Path(args.out)
    write_batch_outputs(out, results)
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"run {r.trace_name[:-4]} failed: {r.error}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} runs written to {out}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# bistable-check / reopen
# ---------------------------------------------------------------------------

def cmd_bistable_check(args) -> int:
    cfg = _config_from_args(args)
    mesh, shell = build_model(cfg)
    holder = holder_constraints(mesh, cfg["protocol"]["holder_width_mm"])
    rep = check_bistability(shell, holder, tol=cfg["solver"]["grad_tol_n"])
    result = {
        "actuator": cfg.actuator,
        "bistable": rep.bistable,
        "distinct": rep.distinct,
        "both_stable": rep.both_stable,
        "max_vertex_distance_mm": rep.distance,
        "states": [
            {"name": name, "energy_mj": st.energy, "lambda_min": st.lambda_min,
             "grad_norm_n": st.grad_norm, "opening_angle_deg": opening_angle(mesh, st.positions)}
            for name, st in (("open", rep.state_a), ("loaded", rep.state_b))
        ],
    }
    out = Path(args.out)
    _atomic_write_text(out / f"{cfg.actuator}_bistability.json", _json_text(result))
    print(_json_text(result), end="")
    return 0


def cmd_reopen(args) -> int:
    cfg = _config_from_args(args)
    mesh, shell = build_model(cfg)
    holder = holder_constraints(mesh, cfg["protocol"]["holder_width_mm"])
    tol = cfg["solver"]["grad_tol_n"]
    rep = check_bistability(shell, holder, tol=tol)
    if not rep.bistable:
        raise LobeforgeError("model is not bistable; nothing to reopen from")
    schedule = np.linspace(0.0, args.alpha_max, args.steps + 1)
    res = run_reopening(shell, rep.state_b, schedule, holder, tol=tol)
    out = Path(args.out)
    _atomic(out / f"{cfg.actuator}_reopening.csv", res.path.to_csv)
    sl = slenderness(mesh)
    summary = {"actuator": cfg.actuator, "mode": res.mode, "snaps": list(res.path.snaps),
               "complete": res.path.complete, "slenderness": sl.slenderness,
               "predicted_mode": sl.predicted_mode}
    _atomic_write_text(out / f"{cfg.actuator}_reopening.json", _json_text(summary))
    print(_json_text(summary), end="")
    return 0 if res.path.complete else 1


# ---------------------------------------------------------------------------
# analyze / plot
# ---------------------------------------------------------------------------

def observations_from_traces(directory: Path):
    """Observation table and parsed traces from ``<actuator>_<direction>_rNN.csv`` files."""
    files = sorted(p for p in directory.rglob("*.csv") if TRACE_NAME.match(p.name))
    rows, traces = [], {}
    for p in files:
        actuator, direction, _ = TRACE_NAME.match(p.name).groups()
        tr = parse_trace_csv(p)
        x1, x2, peak, work = trace_metrics(tr.stroke, tr.force)
        rows.append((actuator, direction, MAX_FORCE, peak))
        rows.append((actuator, direction, WORK, work))
        traces[p.stem] = tr
    return ObservationTable.from_rows(rows), traces


def cmd_analyze(args) -> int:
    src = Path(args.input)
    traces = {}
    if src.is_dir():
        table, traces = observations_from_traces(src)
        if len(table) == 0 and (src / "observations.csv").exists():
            table = read_observations(src / "observations.csv")
    elif src.is_file():
        table = read_observations(src)
    else:
        raise EmptyData(f"no such input: {src}")
    if len(table) == 0:
        raise EmptyData(f"no observations found in {src}")
    out = Path(args.out)
    report = build_report(table, alpha=args.alpha)
    _atomic(out / "report.json", lambda p: write_report(report, p))
    for metric in table.metrics():
        _atomic(out / f"boxplot_{metric}.svg", lambda p, m=metric: emit_plots(table, BOXPLOT, p, metric=m))
    for name, tr in sorted(traces.items()):
        _atomic(out / "curves" / f"{name}.svg", lambda p, t=tr, n=name: emit_plots(t, CURVE, p, title=n))
    print(f"report and {len(table.metrics()) + len(traces)} plots written to {out}")
    return 0


def cmd_plot(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    target = out / f"{src.stem}_{args.kind}.svg"
    if args.kind == CURVE:
        tr = parse_trace_csv(src)
        _atomic(target, lambda p: emit_plots(tr, CURVE, p, title=src.stem))
    else:
        table = read_observations(src)
        if len(table) == 0:
            raise EmptyData(f"no observations in {src}")
        metric = args.metric or table.metrics()[0]
        _atomic(target, lambda p: emit_plots(table, BOXPLOT, p, metric=metric))
    print(f"wrote {target}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batch runs")
    common.add_argument("--model", choices=("sg", "atl"))
    common.add_argument("--thickness", choices=("const", "taper"))
    common.add_argument("--direction", choices=("loading", "snapping"))

    parser = argparse.ArgumentParser(prog="lobeforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="mesh, STL and metadata for one actuator").set_defaults(
        func=cmd_generate)
    sub.add_parser("simulate", parents=[common], help="batch of virtual indentation tests").set_defaults(
        func=cmd_simulate)
    sub.add_parser("bistable-check", parents=[common], help="relax both configurations").set_defaults(
        func=cmd_bistable_check)
    p = sub.add_parser("reopen", parents=[common], help="reverse actuation from the loaded state")
    p.add_argument("--alpha-max", type=float, default=0.05, help="final actuation strain")
    p.add_argument("--steps", type=int, default=20)
    p.set_defaults(func=cmd_reopen)
    p = sub.add_parser("analyze", parents=[common], help="statistics over traces or observations")
    p.add_argument("input", help="observations CSV or directory of trace CSVs")
    p.add_argument("--alpha", type=float, default=0.005, help="significance threshold")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("plot", parents=[common], help="single SVG plot")
    p.add_argument("input", help="trace CSV (curve) or observations CSV (boxplot)")
    p.add_argument("--kind", choices=(BOXPLOT, CURVE), default=CURVE)
    p.add_argument("--metric", choices=(MAX_FORCE, WORK))
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (LobeforgeError, ValueError, OSError) as exc:
        print(f"lobeforge {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
