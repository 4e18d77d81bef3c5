"""Procedural scenes, dynamic obstacle motion and navigation metrics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from ._validation import DomainError, GenerationError
from .geometry import Pose, polyline_length
from .grid import GridMeta, VoxelGrid, distance_field, fuse_traversability
from .gridio import read_occgrid, write_occgrid
from .guide import GuideCost, _snap, astar, build_roadmap
from .vo import Footprint, ObstacleState

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneParams:
    size: float = 20.0
    density: float = 0.1
    n_dynamic: int = 3
    speed_min: float = 0.2
    speed_max: float = 0.8
    obstacle_radius: float = 0.3
    height: float = 2.0
    box_min: float = 0.3
    box_max: float = 1.5
    overhang_fraction: float = 0.2
    min_start_goal: float = 5.0
    dynamic_keepout: float = 2.0
    # start heading points at the goal (straight line, not the path); else uniform
    face_goal: bool = True


@dataclass(eq=False)
class Scene:
    voxels: VoxelGrid
    boxes: list
    dynamic: list
    start: Pose
    goal: tuple
    seed: int
    params: SceneParams = field(default_factory=SceneParams)

    @property
    def bounds(self) -> tuple:
        return self.voxels.meta.extent

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "params": asdict(self.params),
            "boxes": self.boxes,
            "dynamic": [
                {"center": list(o.center), "velocity": list(o.velocity), "radius": o.radius} for o in self.dynamic
            ],
            "start": {"x": self.start.x, "y": self.start.y, "yaw": self.start.yaw},
            "goal": list(self.goal),
        }


def save_scene(scene: Scene, stem) -> tuple:
    """Write ``<stem>.occ`` and ``<stem>.json``."""
    stem = FsPath(stem)
    occ = write_occgrid(stem.with_suffix(".occ"), scene.voxels)
    side = stem.with_suffix(".json")
    side.write_text(json.dumps(scene.sidecar(), indent=1, sort_keys=True) + "\n")
    return occ, side


def load_scene(path) -> Scene:
    """Load a scene from either its ``.occ`` or ``.json`` file."""
    path = FsPath(path)
    stem = path.with_suffix("")
    voxels = read_occgrid(stem.with_suffix(".occ"))
    meta = json.loads(stem.with_suffix(".json").read_text())
    st = meta["start"]
    return Scene(
        voxels=voxels,
        boxes=meta["boxes"],
        dynamic=[ObstacleState(tuple(o["center"]), tuple(o["velocity"]), o["radius"]) for o in meta["dynamic"]],
        start=Pose(st["x"], st["y"], st["yaw"]),
        goal=tuple(meta["goal"]),
        seed=meta["seed"],
        params=SceneParams(**meta["params"]),
    )


def _place_boxes(rng, meta: GridMeta, params: SceneParams) -> tuple:
    cs = meta.cell_size
    cells = np.zeros((meta.depth, meta.height, meta.width), np.uint8)
    low = meta.n_low_slices
    covered = np.zeros((meta.height, meta.width), bool)
    boxes = []
    target = params.density * meta.width * meta.height
    attempts = 0
    while covered.sum() < target and attempts < 100 * MAX_ATTEMPTS:
        attempts += 1
        w, h = rng.uniform(params.box_min, params.box_max, size=2)
        cx, cy = rng.uniform(0, params.size, size=2)
        x0 = max(int(round((cx - w / 2) / cs)), 0)
        x1 = min(int(round((cx + w / 2) / cs)), meta.width)
        y0 = max(int(round((cy - h / 2) / cs)), 0)
        y1 = min(int(round((cy + h / 2) / cs)), meta.height)
        if x1 <= x0 or y1 <= y0:
            continue
        overhang = rng.random() < params.overhang_fraction and low < meta.depth
        if overhang:
            k0 = low
            k1 = int(rng.integers(low + 1, meta.depth + 1))
        else:
            k0 = 0
            k1 = int(rng.integers(min(low, meta.depth), meta.depth + 1)) if low < meta.depth else meta.depth
            k1 = max(k1, 1)
        cells[k0:k1, y0:y1, x0:x1] = 1
        if not overhang:
            covered[y0:y1, x0:x1] = True
        boxes.append({"ix": [x0, x1], "iy": [y0, y1], "k": [k0, k1], "overhang": bool(overhang)})
    return cells, boxes


def _start_heading(rng, s, g, params: SceneParams) -> float:
    if params.face_goal:
        return math.atan2(g[1] - s[1], g[0] - s[0])
    return float(rng.uniform(-math.pi, math.pi))


def generate_scene(
    seed: int,
    params: SceneParams = SceneParams(),
    footprint: Footprint = Footprint(),
    meta: GridMeta | None = None,
    spacing: float = 0.2,
) -> Scene:
    """Seeded random box world with mutually reachable start and goal."""
    if not 0 <= params.density < 0.4:
        raise DomainError("density must be in [0, 0.4)")
    rng = np.random.default_rng(seed)
    if meta is None:
        meta = GridMeta(1, 1)
    n = int(round(params.size / meta.cell_size))
    meta = GridMeta(n, n, max(1, int(round(params.height / meta.slice_height))), meta.cell_size,
                    meta.slice_height, meta.z_limit, (0.0, 0.0))
    cells, boxes = _place_boxes(rng, meta, params)
    voxels = VoxelGrid(meta, cells)
    trav = fuse_traversability(voxels)
    dist = distance_field(trav, boundary_is_obstacle=True)
    roadmap = build_roadmap(trav, dist, spacing, footprint.r_eff)
    free = np.argwhere(dist.values > footprint.r_eff)
    if len(free) == 0 or roadmap.n_nodes == 0:
        raise GenerationError("scene has no free space for the footprint")
    all_nodes = np.ones(roadmap.n_nodes, bool)
    min_sep = min(params.min_start_goal, 0.5 * params.size)
    for _ in range(MAX_ATTEMPTS):
        i, j = rng.integers(len(free), size=2)
        s = meta.center_of(free[i][1], free[i][0])
        g = meta.center_of(free[j][1], free[j][0])
        if np.hypot(*(g - s)) < min_sep:
            continue
        sn = _snap(roadmap, all_nodes, s, 1.0)
        gn = _snap(roadmap, all_nodes, g, 1.0)
        if sn is None or gn is None:
            continue
        if astar(roadmap, sn, gn, GuideCost(0.0, 0.0)) is None:
            continue
        start = Pose(float(s[0]), float(s[1]), _start_heading(rng, s, g, params))
        goal = (float(g[0]), float(g[1]))
        break
    else:
        raise GenerationError(f"no connected start/goal pair after {MAX_ATTEMPTS} attempts")

    dynamic = []
    r = params.obstacle_radius
    for _ in range(params.n_dynamic):
        for _ in range(MAX_ATTEMPTS):
            c = rng.uniform(r, params.size - r, size=2)
            if np.hypot(*(c - start.position)) >= params.dynamic_keepout + r:
                break
        else:
            raise GenerationError("could not place dynamic obstacle")
        speed = rng.uniform(params.speed_min, params.speed_max)
        heading = rng.uniform(-math.pi, math.pi)
        dynamic.append(ObstacleState((c[0], c[1]), (speed * math.cos(heading), speed * math.sin(heading)), r))
    return Scene(voxels, boxes, dynamic, start, goal, int(seed), params)


def step_obstacles(obstacles: Sequence[ObstacleState], dt: float, bounds) -> list:
    """Constant-velocity motion with elastic reflection off the bounds (disc edge)."""
    xmin, ymin, xmax, ymax = bounds
    out = []
    for o in obstacles:
        r = o.radius
        (x, y), (vx, vy) = o.center, o.velocity
        x += vx * dt
        y += vy * dt
        if x - r < xmin:
            x, vx = 2 * (xmin + r) - x, -vx
        elif x + r > xmax:
            x, vx = 2 * (xmax - r) - x, -vx
        if y - r < ymin:
            y, vy = 2 * (ymin + r) - y, -vy
        elif y + r > ymax:
            y, vy = 2 * (ymax - r) - y, -vy
        out.append(ObstacleState((x, y), (vx, vy), r))
    return out


@dataclass
class EpisodeResult:
    success: bool
    positions: np.ndarray
    goal: tuple
    collision_steps: int
    dt: float
    outcome: str = ""

    @property
    def path_length(self) -> float:
        return polyline_length(self.positions)

    @property
    def final_error(self) -> float:
        p = np.asarray(self.positions)[-1]
        return float(math.hypot(p[0] - self.goal[0], p[1] - self.goal[1]))


@dataclass
class Reference:
    length: float
    path: np.ndarray


@dataclass
class MetricsReport:
    SR: float
    SPL: float
    NE: float
    Cost: float
    nDTW: float
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"SR": self.SR, "SPL": self.SPL, "NE": self.NE, "Cost": self.Cost, "nDTW": self.nDTW,
                "episodes": len(self.rows)}


def resample_polyline(points, spacing: float) -> np.ndarray:
    """Points at equal arc-length spacing, both ends kept."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return p.copy()
    seg = np.hypot(*np.diff(p, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        return p[:1].copy()
    n = max(1, int(math.ceil(total / spacing - 1e-9)))
    q = np.linspace(0.0, total, n + 1)
    return np.stack([np.interp(q, s, p[:, 0]), np.interp(q, s, p[:, 1])], axis=1)


def dtw(a, b) -> float:
    """Dynamic time warping distance with Euclidean ground cost."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    cost = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        prev = acc[i - 1]
        row = acc[i]
        ci = cost[i - 1]
        diag_up = np.minimum(prev[:-1], prev[1:])
        left = row[0]
        for j in range(1, m + 1):
            v = ci[j - 1] + min(diag_up[j - 1], left)
            row[j] = v
            left = v
    return float(acc[n, m])


def ndtw(executed, reference, d_th: float, spacing: float | None = None) -> float:
    if spacing is not None:
        executed = resample_polyline(executed, spacing)
        reference = resample_polyline(reference, spacing)
    return math.exp(-dtw(executed, reference) / (len(reference) * d_th))


def compute_metrics(
    episodes: Sequence[EpisodeResult],
    references: Sequence[Reference],
    goal_radius: float = 0.5,
    ndtw_spacing: float | None = 0.2,
) -> MetricsReport:
    """SR, SPL, NE, Cost (collision-seconds) and nDTW over a batch."""
    if len(references) != len(episodes) or any(r is None for r in references):
        raise DomainError("every episode needs a reference")
    if not episodes:
        raise DomainError("no episodes")
    rows = []
    for ep, ref in zip(episodes, references):
        s = 1.0 if ep.success else 0.0
        p = ep.path_length
        l = ref.length
        denom = max(p, l)
        spl = s * l / denom if denom > 0 else s
        rows.append(
            {
                "success": s,
                "spl": spl,
                "ne": ep.final_error,
                "cost": ep.collision_steps * ep.dt,
                "ndtw": ndtw(ep.positions, ref.path, goal_radius, ndtw_spacing),
                "path_length": p,
                "ref_length": l,
                "outcome": ep.outcome,
            }
        )
    mean = lambda k: float(np.mean([r[k] for r in rows]))  # noqa: E731
    return MetricsReport(mean("success"), mean("spl"), mean("ne"), mean("cost"), mean("ndtw"), rows)
