"""A*+VO fusion loop, episode execution and egocentric dataset samples."""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import ConfigurationError, DomainError
from .geometry import Pose, integrate_holonomic, wrap_angle
from .grid import (
    DEFAULT_DIST_CAP,
    DistanceField,
    TraversabilityMap,
    VoxelGrid,
    crop_egocentric,
    distance_field,
    fuse_traversability,
)
from .guide import (
    DEFAULT_SNAP_RADIUS,
    DEFAULT_SPACING,
    GuideCost,
    KnownMap,
    Path,
    Roadmap,
    build_roadmap,
    disk_offsets,
    inflate_into,
    integrate_observation,
    plan_guide,
    select_local_goal,
)
from .sim import step_obstacles
from .vo import ZERO_CONTROL, ClearanceReport, Control, Footprint, ObstacleState, VOParams, choose_control

SUCCESS = "success"
TIMEOUT = "timeout"
UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class GuideConfig:
    spacing: float = DEFAULT_SPACING
    lam: float = 2.0
    d_pref: float = 0.3
    replan_interval: int = 5
    snap_radius: float = DEFAULT_SNAP_RADIUS

    @property
    def cost(self) -> GuideCost:
        return GuideCost(self.lam, self.d_pref)


@dataclass(frozen=True)
class PlannerConfig:
    dt: float = 0.1
    goal_radius: float = 0.5
    max_steps: int = 1000
    horizon: int = 8
    stride: int = 1


@dataclass(frozen=True, eq=False)
class World:
    """Static ground truth shared read-only by every episode on a scene."""

    trav: TraversabilityMap
    dist: DistanceField
    roadmap: Roadmap
    voxels: VoxelGrid | None = None

    @property
    def meta(self):
        return self.trav.meta

    @classmethod
    def build(cls, source, footprint: Footprint = Footprint(), guide: GuideConfig = GuideConfig(),
              dist_cap: float = DEFAULT_DIST_CAP) -> "World":
        voxels = source if isinstance(source, VoxelGrid) else None
        trav = fuse_traversability(source) if voxels is not None else source
        dist = distance_field(trav, dist_cap, boundary_is_obstacle=True)
        roadmap = build_roadmap(trav, dist, guide.spacing, footprint.r_eff)
        return cls(trav, dist, roadmap, voxels)


@dataclass(frozen=True)
class Trajectory:
    poses: list
    dt: float
    controls: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.controls) != max(len(self.poses) - 1, 0):
            raise DomainError("a trajectory needs one control per transition")

    def positions(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.poses], dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.poses)


@dataclass(frozen=True)
class DatasetSample:
    t: int
    waypoints: np.ndarray  # (M, 3) egocentric (x, y, theta)
    crop: VoxelGrid | None = None


@dataclass
class EpisodeState:
    pose: Pose
    goal: tuple
    known: KnownMap
    obstacles: list = field(default_factory=list)
    v_curr: tuple = (0.0, 0.0)
    step: int = 0
    path: Path | None = None
    outcome: str | None = None
    log: list = field(default_factory=list)
    fallbacks: int = 0
    # known Occupied cells dilated by r_eff; obstructs local-goal sight lines
    sight_blocked: np.ndarray | None = None


@dataclass
class EpisodeRun:
    trajectory: Trajectory
    outcome: str
    static_collisions: int
    dynamic_collisions: int
    log: list
    fallbacks: int = 0
    unsafe_selections: int = 0
    # timesteps in contact with anything (static or dynamic)
    collision_steps: int = 0


def new_state(world: World, start: Pose, goal, obstacles=(), guide: GuideConfig = GuideConfig()) -> EpisodeState:
    return EpisodeState(start, (float(goal[0]), float(goal[1])), KnownMap.fresh(world.meta, guide.replan_interval),
                        list(obstacles))


@lru_cache(maxsize=8)
def _offsets(r_eff: float, cell_size: float) -> np.ndarray:
    return disk_offsets(r_eff, cell_size)


def fusion_step(
    world: World,
    state: EpisodeState,
    vo: VOParams = VOParams(),
    footprint: Footprint = Footprint(),
    guide: GuideConfig = GuideConfig(),
    dt: float = 0.1,
):
    """Observe, replan every K steps, pick a local goal, choose and apply a control.

    Mutates and returns ``state``; a missing guide path ends the episode as
    unreachable with zero control.
    """
    before = state.known.occupied
    state.known = integrate_observation(state.known, state.pose, world.trav)
    if state.sight_blocked is None:
        state.sight_blocked = np.zeros(before.shape, bool)
        before = np.zeros_like(before)
    iy, ix = np.nonzero(state.known.occupied & ~before)
    inflate_into(state.sight_blocked, iy, ix, _offsets(footprint.r_eff, world.meta.cell_size))
    if state.step % state.known.replan_interval == 0 or state.path is None:
        path = plan_guide(state.known, world.roadmap, state.pose.position, state.goal, guide.cost, guide.snap_radius)
        if path is None:
            state.outcome = UNREACHABLE
            state.path = None
            return ZERO_CONTROL, state
        state.path = path
    local_goal = select_local_goal(state.path, state.pose, state.known, state.sight_blocked)
    decision = choose_control(state.pose, state.v_curr, local_goal, state.obstacles, world.dist, vo, footprint)
    u = decision.control
    p = state.pose
    x, y, yaw = integrate_holonomic(p.x, p.y, p.yaw, u.vx, u.vy, u.omega, dt)
    state.pose = Pose(x, y, yaw)
    state.v_curr = (u.vx, u.vy)
    state.step += 1
    if decision.fallback:
        state.fallbacks += 1
    state.log.append({"control": u, "report": decision.report, "fallback": decision.fallback,
                      "local_goal": (float(local_goal[0]), float(local_goal[1]))})
    return u, state


def footprint_hits_cells(pose: Pose, fp: Footprint, trav: TraversabilityMap) -> bool:
    """Exact oriented-rectangle vs blocked-cell overlap (cells off the map count as blocked)."""
    m = trav.meta
    cs = m.cell_size
    hl, hw = 0.5 * fp.length, 0.5 * fp.width
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    ex = abs(c) * hl + abs(s) * hw
    ey = abs(s) * hl + abs(c) * hw
    x0, y0 = m.cell_of(np.array([pose.x - ex, pose.y - ey]))
    x1, y1 = m.cell_of(np.array([pose.x + ex, pose.y + ey]))
    ix, iy = np.meshgrid(np.arange(int(x0), int(x1) + 1), np.arange(int(y0), int(y1) + 1))
    inside = m.in_bounds(ix, iy)
    blocked = np.ones(ix.shape, bool)
    blocked[inside] = trav.cells[iy[inside], ix[inside]].astype(bool)
    if not blocked.any():
        return False
    ix, iy = ix[blocked], iy[blocked]
    ctr = m.center_of(ix, iy)
    dx = ctr[:, 0] - pose.x
    dy = ctr[:, 1] - pose.y
    half = 0.5 * cs
    proj = (abs(c) + abs(s)) * half
    sep = (
        (np.abs(dx) >= half + ex)
        | (np.abs(dy) >= half + ey)
        | (np.abs(c * dx + s * dy) >= hl + proj)
        | (np.abs(-s * dx + c * dy) >= hw + proj)
    )
    return bool((~sep).any())


def footprint_hits_disc(pose: Pose, fp: Footprint, obs: ObstacleState) -> bool:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = obs.center[0] - pose.x
    dy = obs.center[1] - pose.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    qx = min(max(lx, -0.5 * fp.length), 0.5 * fp.length)
    qy = min(max(ly, -0.5 * fp.width), 0.5 * fp.width)
    return math.hypot(lx - qx, ly - qy) < obs.radius


def run_episode(
    world: World,
    start: Pose,
    goal,
    obstacles: Sequence[ObstacleState] = (),
    vo: VOParams = VOParams(),
    footprint: Footprint = Footprint(),
    guide: GuideConfig = GuideConfig(),
    planner: PlannerConfig = PlannerConfig(),
) -> EpisodeRun:
    """Drive from ``start`` toward ``goal`` until success, timeout or no path."""
    d0 = float(world.dist.at(start.position[None, :], outside=-1.0)[0])
    if not d0 > footprint.r_eff:
        raise ConfigurationError(f"start clearance {d0:.3f} m does not exceed r_eff {footprint.r_eff:.3f} m")
    bounds = world.meta.extent
    state = new_state(world, start, goal, obstacles, guide)
    poses = [start]
    controls = []
    n_static = n_dynamic = n_any = unsafe = 0
    goal_xy = np.asarray(goal, float)

    def reached(p: Pose) -> bool:
        return math.hypot(p.x - goal_xy[0], p.y - goal_xy[1]) <= planner.goal_radius

    outcome = SUCCESS if reached(start) else TIMEOUT
    if outcome != SUCCESS:
        for _ in range(planner.max_steps):
            u, state = fusion_step(world, state, vo, footprint, guide, planner.dt)
            if state.outcome == UNREACHABLE:
                outcome = UNREACHABLE
                break
            entry = state.log[-1]
            rep = entry["report"]
            if not entry["fallback"] and (rep.d_stat_min <= 0 or rep.d_dyn_min <= 0):
                unsafe += 1
            state.obstacles = step_obstacles(state.obstacles, planner.dt, bounds)
            poses.append(state.pose)
            controls.append(u)
            hit_s = footprint_hits_cells(state.pose, footprint, world.trav)
            hit_d = any(footprint_hits_disc(state.pose, footprint, o) for o in state.obstacles)
            n_static += hit_s
            n_dynamic += hit_d
            n_any += hit_s or hit_d
            entry["static_hit"] = hit_s
            entry["dynamic_hit"] = hit_d
            if reached(state.pose):
                outcome = SUCCESS
                break
    return EpisodeRun(Trajectory(poses, planner.dt, controls), outcome, n_static, n_dynamic, state.log,
                      state.fallbacks, unsafe, n_any)


def to_egocentric(anchor: Pose, poses: Sequence[Pose]) -> np.ndarray:
    c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
    out = np.empty((len(poses), 3))
    for i, p in enumerate(poses):
        dx, dy = p.x - anchor.x, p.y - anchor.y
        out[i] = (c * dx + s * dy, -s * dx + c * dy, wrap_angle(p.yaw - anchor.yaw))
    return out


def from_egocentric(anchor: Pose, waypoints) -> list:
    c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
    return [Pose(anchor.x + c * x - s * y, anchor.y + s * x + c * y, anchor.yaw + th) for x, y, th in np.asarray(waypoints)]


def emit_samples(traj: Trajectory, world: VoxelGrid | None, M: int = 8, stride: int = 1) -> list:
    """Egocentric M-step waypoint windows, each paired with the anchor's occupancy crop."""
    if M < 1 or stride < 1:
        raise DomainError("M and stride must be >= 1")
    out = []
    n = len(traj.poses)
    for t in range(0, n, stride):
        if t + M > n - 1:
            break
        anchor = traj.poses[t]
        wps = to_egocentric(anchor, traj.poses[t + 1 : t + M + 1])
        crop = crop_egocentric(world, anchor) if world is not None else None
        out.append(DatasetSample(t, wps, crop))
    return out


def traj_error(pred, gt) -> float:
    """Squared L2 distance between two waypoint windows."""
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    if p.shape != g.shape:
        raise DomainError(f"window shapes differ: {p.shape} vs {g.shape}")
    d = (g - p).ravel()
    return float(d @ d)


def trajectory_records(run: EpisodeRun) -> list:
    """Per-pose JSON records for trajectory export."""
    recs = []
    traj = run.trajectory
    for t, p in enumerate(traj.poses):
        rec = {"t": t, "x": p.x, "y": p.y, "yaw": p.yaw, "vx": None, "vy": None, "omega": None,
               "d_stat_min": None, "d_dyn_min": None}
        if t < len(traj.controls):
            u = traj.controls[t]
            rep: ClearanceReport = run.log[t]["report"]
            rec.update(vx=u.vx, vy=u.vy, omega=u.omega, d_stat_min=_finite(rep.d_stat_min),
                       d_dyn_min=_finite(rep.d_dyn_min))
        recs.append(rec)
    return recs


def _finite(v):
    return float(v) if math.isfinite(v) else None
