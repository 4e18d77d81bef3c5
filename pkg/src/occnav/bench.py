"""Batch episode runner: scenes in, per-episode rows and aggregate metrics out."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import DomainError
from .config import RunConfig
from .grid import segments_clear
from .guide import GuideCost, _clearance_batch, _snap, astar
from .planner import SUCCESS, EpisodeRun, World, run_episode
from .sim import EpisodeResult, MetricsReport, Reference, Scene, compute_metrics, generate_scene, load_scene

METRIC_FIELDS = ("SR", "SPL", "NE", "Cost", "nDTW")


def shortcut(points, world: World, r_eff: float) -> np.ndarray:
    """Shortest chain through a subsequence of ``points`` whose legs keep clearance.

    A leg qualifies when its cells are traversable and sampled clearance stays
    at or above ``r_eff``; consecutive points always qualify, so the result is
    never longer than the input.
    """
    pts = np.asarray(points, float)
    n = len(pts)
    if n < 3:
        return pts.copy()
    best = np.full(n, np.inf)
    prev = np.zeros(n, np.int64)
    best[0] = 0.0
    blocked = world.trav.blocked
    for i in range(n - 1):
        js = np.arange(i + 1, n)
        a = np.broadcast_to(pts[i], (len(js), 2))
        ok = segments_clear(blocked, world.meta, a, pts[js]) & (_clearance_batch(world.dist, a, pts[js]) >= r_eff)
        ok[0] = True
        js = js[ok]
        cand = best[i] + np.hypot(*(pts[js] - pts[i]).T)
        better = cand < best[js]
        best[js[better]] = cand[better]
        prev[js[better]] = i
    chain = [n - 1]
    while chain[-1] != 0:
        chain.append(int(prev[chain[-1]]))
    return pts[chain[::-1]]


def reference_path(world: World, start, goal, snap_radius: float = 1.0, r_eff: float | None = None) -> Reference | None:
    """Oracle shortest path on the ground-truth roadmap (pure length cost).

    With ``r_eff`` the lattice path is pulled taut by :func:`shortcut`.
    """
    ok = np.ones(world.roadmap.n_nodes, bool)
    s = _snap(world.roadmap, ok, np.asarray(start, float), snap_radius)
    g = _snap(world.roadmap, ok, np.asarray(goal, float), snap_radius)
    if s is None or g is None:
        return None
    path = astar(world.roadmap, s, g, GuideCost(0.0, 0.0))
    if path is None:
        return None
    pts = np.vstack([np.asarray(start, float)[None], path.waypoints, np.asarray(goal, float)[None]])
    if r_eff is not None:
        pts = shortcut(pts, world, r_eff)
    return Reference(float(np.hypot(*np.diff(pts, axis=0).T).sum()), pts)


@dataclass
class EpisodeRecord:
    scene: Scene
    run: EpisodeRun
    result: EpisodeResult
    reference: Reference

    def row(self, metrics_row: dict | None = None) -> dict:
        r = self.run
        out = {
            "seed": self.scene.seed,
            "outcome": r.outcome,
            "steps": len(r.trajectory) - 1,
            "static_collisions": r.static_collisions,
            "dynamic_collisions": r.dynamic_collisions,
            "collision_steps": r.collision_steps,
            "fallbacks": r.fallbacks,
            "unsafe_selections": r.unsafe_selections,
        }
        if metrics_row:
            out.update({k: metrics_row[k] for k in ("success", "spl", "ne", "cost", "ndtw", "path_length", "ref_length")})
        return out


def run_scene(scene: Scene, cfg: RunConfig = RunConfig()) -> EpisodeRecord:
    world = World.build(scene.voxels, cfg.footprint, cfg.guide, cfg.grid.dist_cap)
    ref = reference_path(world, scene.start.position, scene.goal, cfg.guide.snap_radius, cfg.footprint.r_eff)
    if ref is None:
        raise DomainError(f"scene {scene.seed} has no oracle path")
    run = run_episode(world, scene.start, scene.goal, scene.dynamic, cfg.vo, cfg.footprint, cfg.guide, cfg.planner)
    result = EpisodeResult(run.outcome == SUCCESS, run.trajectory.positions(), scene.goal, run.collision_steps,
                           cfg.planner.dt, run.outcome)
    return EpisodeRecord(scene, run, result, ref)


def scene_for_seed(seed: int, cfg: RunConfig = RunConfig()) -> Scene:
    return generate_scene(seed, cfg.sim, cfg.footprint, cfg.grid.meta(), cfg.guide.spacing)


def _job(args) -> EpisodeRecord:
    source, cfg_dict = args
    cfg = RunConfig.from_dict(cfg_dict)
    if isinstance(source, int):
        scene = scene_for_seed(source, cfg)
    elif isinstance(source, Scene):
        scene = source
    else:
        scene = load_scene(source)
    return run_scene(scene, cfg)


@dataclass
class BenchReport:
    metrics: MetricsReport
    records: list = field(default_factory=list)

    @property
    def rows(self) -> list:
        return [rec.row(m) for rec, m in zip(self.records, self.metrics.rows)]

    def summary(self) -> dict:
        out = self.metrics.summary()
        steps = sum(len(r.run.trajectory) - 1 for r in self.records)
        out["static_collisions"] = sum(r.run.static_collisions for r in self.records)
        out["dynamic_collision_fraction"] = (
            sum(r.run.dynamic_collisions for r in self.records) / steps if steps else 0.0
        )
        out["unsafe_selections"] = sum(r.run.unsafe_selections for r in self.records)
        return out

    def csv_text(self) -> str:
        s = self.summary()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = list(METRIC_FIELDS) + [k for k in s if k not in METRIC_FIELDS]
        w.writerow(keys)
        w.writerow([repr(float(s[k])) if isinstance(s[k], float) else s[k] for k in keys])
        return buf.getvalue()

    def jsonl_text(self, with_trajectory: bool = True) -> str:
        lines = []
        for rec, row in zip(self.records, self.rows):
            if with_trajectory:
                row = row | {"trajectory": [[p.x, p.y, p.yaw] for p in rec.run.trajectory.poses]}
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def bench(sources, cfg: RunConfig = RunConfig(), workers: int = 1) -> BenchReport:
    """Run one episode per source (seed, Scene or scene path).

    Results keep input order whatever the worker count, so aggregates match
    exactly between serial and parallel runs.
    """
    sources = list(sources)
    if not sources:
        raise DomainError("no scenes to benchmark")
    jobs = [(s, cfg.to_dict()) for s in sources]
    if workers <= 1:
        records = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_job, jobs))
    metrics = compute_metrics([r.result for r in records], [r.reference for r in records],
                              cfg.planner.goal_radius)
    return BenchReport(metrics, records)
