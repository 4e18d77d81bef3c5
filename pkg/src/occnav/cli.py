"""``occnav`` command-line entry point.

Exit codes: 0 success, 1 navigation failure of a single ``plan`` episode,
2 usage, input or generation errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import sys
from pathlib import Path

import numpy as np

from ._validation import OccnavError, StructuralError
from .bench import bench, run_scene, scene_for_seed
from .config import RunConfig
from .deadreckon import DeadReckoner, read_sensor_csv
from .grid import fuse_traversability
from .gridio import read_logits, read_occgrid, write_occgrid
from .occmetrics import occupancy_report
from .planner import SUCCESS, emit_samples, trajectory_records
from .render import render_svg
from .sim import load_scene, save_scene

EXIT_OK, EXIT_NAV_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from clobbering a value given before it
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    p.add_argument("--set", action="append", dest="overrides", metavar="BLOCK.KEY=VALUE", default=argparse.SUPPRESS,
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return p


def _scene_sources(p: argparse.ArgumentParser):
    p.add_argument("--scenes", nargs="+", metavar="GLOB", help="scene files (.occ with .json sidecar)")
    p.add_argument("--generate", type=int, metavar="N", help="generate N scenes from consecutive seeds")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(prog="occnav", parents=[common],
                                description="Occupancy-map navigation: planning, benchmarks, datasets, dead reckoning.")
    p.add_argument("--dump-config", action="store_true", help="print the effective config as JSON and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("gen-scene", parents=[common], help="generate a seeded scene")
    g.add_argument("--size", type=float)
    g.add_argument("--density", type=float)
    g.add_argument("--dynamic", type=int)
    g.add_argument("--out", required=True, help="output stem; writes STEM.occ and STEM.json")

    pl = sub.add_parser("plan", parents=[common], help="run one episode on a scene")
    pl.add_argument("--scene", required=True)
    pl.add_argument("--out", help="trajectory JSONL (default stdout)")

    b = sub.add_parser("bench", parents=[common], help="run a batch of episodes and report metrics")
    _scene_sources(b)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out-dir", required=True)

    d = sub.add_parser("make-dataset", parents=[common], help="export egocentric waypoint windows and crops")
    _scene_sources(d)
    d.add_argument("--M", type=int, dest="horizon")
    d.add_argument("--stride", type=int)
    d.add_argument("--out-dir", required=True)

    r = sub.add_parser("reckon", parents=[common], help="dead-reckon a t,wheel_speed,mx,my CSV log")
    r.add_argument("--csv", required=True)
    r.add_argument("--out", help="trajectory JSONL (default stdout)")

    o = sub.add_parser("occ-metrics", parents=[common], help="IoU, BCE and Lovasz hinge of a prediction")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="predicted OCCGRID file")
    src.add_argument("--logits", help="float32 logits file with a .json shape sidecar")
    o.add_argument("--gt", required=True, help="ground-truth OCCGRID file")
    o.add_argument("--out", help="JSON report (default stdout)")

    v = sub.add_parser("render", parents=[common], help="draw a scene and optional trajectory as SVG")
    v.add_argument("--scene", required=True)
    v.add_argument("--trajectory", help="JSONL with x, y fields per line")
    v.add_argument("--out", required=True)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.with_overrides(getattr(args, "overrides", None) or [])
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _sources(args, cfg: RunConfig) -> list:
    if args.scenes and args.generate is not None:
        raise UsageError("use either --scenes or --generate")
    if args.generate is not None:
        if args.generate < 1:
            raise UsageError("--generate needs N >= 1")
        return list(range(cfg.seed, cfg.seed + args.generate))
    stems = set()
    for pattern in args.scenes or []:
        for path in glob.glob(pattern):
            stems.add(str(Path(path).with_suffix("")))
    if not stems:
        raise UsageError("no scenes matched")
    return sorted(stems)


def _load_scene(path):
    try:
        return load_scene(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read scene {path}: {exc}") from None


def cmd_gen_scene(args, cfg: RunConfig) -> int:
    sim = cfg.sim
    for flag, name in (("size", "size"), ("density", "density"), ("dynamic", "n_dynamic")):
        if getattr(args, flag) is not None:
            sim = dataclasses.replace(sim, **{name: getattr(args, flag)})
    cfg = cfg.replace(sim=sim)
    scene = scene_for_seed(cfg.seed, cfg)
    occ, side = save_scene(scene, args.out)
    print(json.dumps({"occ": str(occ), "sidecar": str(side), "seed": scene.seed, "boxes": len(scene.boxes)}))
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig) -> int:
    scene = _load_scene(args.scene)
    rec = run_scene(scene, cfg)
    _emit(_jsonl(trajectory_records(rec.run)), args.out)
    summary = rec.row()
    summary["path_length"] = rec.result.path_length
    summary["ref_length"] = rec.reference.length
    print(json.dumps(summary, sort_keys=True), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK if rec.run.outcome == SUCCESS else EXIT_NAV_FAILURE


def cmd_bench(args, cfg: RunConfig) -> int:
    sources = _sources(args, cfg)
    if not isinstance(sources[0], int):
        for s in sources:
            _load_scene(s)
    report = bench(sources, cfg, args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.csv_text())
    (out / "metrics.json").write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    (out / "episodes.jsonl").write_text(report.jsonl_text())
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_make_dataset(args, cfg: RunConfig) -> int:
    planner = cfg.planner
    if args.horizon is not None:
        planner = dataclasses.replace(planner, horizon=args.horizon)
    if args.stride is not None:
        planner = dataclasses.replace(planner, stride=args.stride)
    cfg = cfg.replace(planner=planner)
    out = Path(args.out_dir)
    (out / "crops").mkdir(parents=True, exist_ok=True)
    rows = []
    for src in _sources(args, cfg):
        scene = scene_for_seed(src, cfg) if isinstance(src, int) else _load_scene(src)
        rec = run_scene(scene, cfg)
        traj = rec.run.trajectory
        for sample in emit_samples(traj, scene.voxels, planner.horizon, planner.stride):
            name = f"crops/scene{scene.seed:06d}_t{sample.t:05d}.occ"
            write_occgrid(out / name, sample.crop)
            a = traj.poses[sample.t]
            rows.append({"scene": scene.seed, "t": sample.t, "anchor": [a.x, a.y, a.yaw],
                         "waypoints": sample.waypoints.tolist(), "crop_file": name})
    (out / "dataset.jsonl").write_text(_jsonl(rows))
    print(json.dumps({"records": len(rows), "out_dir": str(out)}))
    return EXIT_OK


def cmd_reckon(args, cfg: RunConfig) -> int:
    log = read_sensor_csv(args.csv)
    traj = DeadReckoner.from_config(cfg.deadreckon).fit_transform(log)
    _emit(_jsonl(traj.records()), args.out)
    return EXIT_OK


def cmd_occ_metrics(args, cfg: RunConfig) -> int:
    gt = read_occgrid(args.gt).cells
    if args.logits:
        logits = read_logits(args.logits)
        if logits.shape != gt.shape:
            raise StructuralError(f"logits shape {logits.shape} does not match ground truth {gt.shape}")
        report = occupancy_report(None, gt, logits)
    else:
        pred = read_occgrid(args.pred).cells
        if pred.shape != gt.shape:
            raise StructuralError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
        report = occupancy_report(pred, gt)
    _emit(json.dumps(report, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _read_xy(path) -> np.ndarray:
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pts.append((float(obj["x"]), float(obj["y"])))
            except (ValueError, KeyError, TypeError):
                raise StructuralError(f"{path} line {lineno}: expected an object with x and y") from None
    return np.array(pts, float).reshape(-1, 2)


def cmd_render(args, cfg: RunConfig) -> int:
    stem = Path(args.scene).with_suffix("")
    if stem.with_suffix(".json").exists():
        scene = _load_scene(args.scene)
        trav, start, goal, obstacles = fuse_traversability(scene.voxels), scene.start.position, scene.goal, scene.dynamic
    else:
        trav, start, goal, obstacles = fuse_traversability(read_occgrid(stem.with_suffix(".occ"))), None, None, ()
    traj = _read_xy(args.trajectory) if args.trajectory else None
    Path(args.out).write_text(render_svg(trav, traj, start, goal, obstacles))
    return EXIT_OK


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "make-dataset": cmd_make_dataset,
    "reckon": cmd_reckon,
    "occ-metrics": cmd_occ_metrics,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.to_json())
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args, cfg)
    except (UsageError, OccnavError, OSError) as exc:
        print(f"occnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
