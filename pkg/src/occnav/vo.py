"""Truncated velocity-obstacle local controller.

Candidates are scored in one vectorized pass.  The scalar entry points
(``vo_rejects``, ``rollout``, ``control_cost``) evaluate exactly the same
floating-point expressions, so an exhaustive per-candidate scan reproduces
``select_control`` bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import ConfigurationError, DomainError, check_positive
from .geometry import Pose, integrate_holonomic, wrap_angle
from .grid import DistanceField


@dataclass(frozen=True)
class Footprint:
    length: float = 0.4
    width: float = 0.3
    r_eff: float | None = None

    def __post_init__(self):
        check_positive("footprint length", self.length)
        check_positive("footprint width", self.width)
        if self.r_eff is None:
            object.__setattr__(self, "r_eff", 0.5 * math.hypot(self.length, self.width))
        elif self.r_eff < 0:
            raise DomainError("r_eff must be >= 0")

    @property
    def corners(self) -> np.ndarray:
        hl, hw = 0.5 * self.length, 0.5 * self.width
        return np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])


class Control(NamedTuple):
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0


ZERO_CONTROL = Control(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ObstacleState:
    center: tuple
    velocity: tuple = (0.0, 0.0)
    radius: float = 0.3

    def __post_init__(self):
        check_positive("obstacle radius", self.radius)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))

    def at(self, t: float) -> tuple:
        return (self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t)


@dataclass(frozen=True)
class VOParams:
    t_vo: float = 3.0
    t_look: float = 1.5
    dt: float = 0.1
    v_max: float = 1.0
    omega_max: float = 1.5
    vx_values: tuple = (-0.2, 0.0, 0.25, 0.5, 0.75, 1.0)
    vy_values: tuple = (-0.4, -0.2, 0.0, 0.2, 0.4)
    n_omega: int = 9
    w_v: float = 1.0
    w_curr: float = 0.5
    w_speed: float = 0.2
    w_omega: float = 0.3
    w_a: float = 0.5
    w_c: float = 0.05
    eps_c: float = 0.01
    d_pref: float = 0.3
    turn_threshold: float = math.pi / 2
    k_p: float = 1.0
    k_omega: float = 4.0
    # r_inflated = obstacle radius + inflation * r_eff for the per-corner cone test
    inflation: float = 0.5

    def __post_init__(self):
        for name in ("t_vo", "t_look", "dt", "v_max", "omega_max", "eps_c"):
            check_positive(name, getattr(self, name))
        for name in ("w_v", "w_curr", "w_speed", "w_omega", "w_a", "w_c", "d_pref", "k_p", "k_omega", "inflation"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.n_omega < 1:
            raise ConfigurationError("n_omega must be >= 1")
        object.__setattr__(self, "vx_values", tuple(float(v) for v in self.vx_values))
        object.__setattr__(self, "vy_values", tuple(float(v) for v in self.vy_values))
        for v in self.vx_values + self.vy_values:
            if abs(v) > self.v_max + 1e-12:
                raise ConfigurationError(f"candidate velocity {v} exceeds v_max")

    @property
    def omega_values(self) -> tuple:
        if self.n_omega == 1:
            return (0.0,)
        vals = np.linspace(-self.omega_max, self.omega_max, self.n_omega)
        vals[np.isclose(vals, 0.0, atol=1e-12)] = 0.0
        return tuple(float(v) for v in vals)

    def candidates(self) -> np.ndarray:
        """(n, 3) candidate grid sorted lexicographically on (vx, vy, omega)."""
        return _candidate_grid(self)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vx_values"] = list(self.vx_values)
        d["vy_values"] = list(self.vy_values)
        return d


class ClearanceReport(NamedTuple):
    d_stat_min: float
    d_dyn_min: float
    collides: bool


def corner_velocities(fp: Footprint, yaw: float, u: Control) -> np.ndarray:
    """World-frame velocity of each footprint corner, shape (4, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    r = fp.corners
    rx = c * r[:, 0] - s * r[:, 1]
    ry = s * r[:, 0] + c * r[:, 1]
    vwx = c * u[0] - s * u[1]
    vwy = s * u[0] + c * u[1]
    return np.stack([vwx - u[2] * ry, vwy + u[2] * rx], axis=1)


def vo_rejects(p_corner, v_corner, obs: ObstacleState, r_inflated: float, t_vo: float) -> bool:
    """Truncated VO test for one corner against one obstacle."""
    px = float(p_corner[0]) - obs.center[0]
    py = float(p_corner[1]) - obs.center[1]
    vx = float(v_corner[0]) - obs.velocity[0]
    vy = float(v_corner[1]) - obs.velocity[1]
    d = math.sqrt(px * px + py * py)
    if d <= r_inflated:
        return True
    dot = px * vx + py * vy
    if not dot < 0.0:
        return False
    speed = math.sqrt(vx * vx + vy * vy)
    sn = min(1.0, r_inflated / d)
    in_cone = -dot >= d * speed * math.sqrt(1.0 - sn * sn)
    reach = speed * t_vo >= d - r_inflated
    return bool(in_cone and reach)


def _vo_rejects_batch(px, py, vx, vy, r, t_vo) -> np.ndarray:
    d = np.sqrt(px * px + py * py)
    dot = px * vx + py * vy
    speed = np.sqrt(vx * vx + vy * vy)
    with np.errstate(divide="ignore", invalid="ignore"):
        sn = np.minimum(1.0, r / d)
    in_cone = -dot >= d * speed * np.sqrt(1.0 - sn * sn)
    reach = speed * t_vo >= d - r
    return (d <= r) | ((dot < 0.0) & in_cone & reach)


def _obstacle_arrays(obstacles: Sequence[ObstacleState]):
    if not obstacles:
        z = np.zeros(0)
        return z, z, z, z, z
    a = np.array([(o.center[0], o.center[1], o.velocity[0], o.velocity[1], o.radius) for o in obstacles])
    return a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4]


def _rollout_steps(params: VOParams) -> list:
    n = max(1, int(math.ceil(params.t_look / params.dt - 1e-9)))
    steps = [params.dt] * n
    last = params.t_look - (n - 1) * params.dt
    if last > 1e-12:
        steps[-1] = last
    return steps


def _yaw_tables(yaw0: float, omegas: np.ndarray, steps: list):
    """cos/sin of the heading before each step, per unique yaw rate (libm, scalar)."""
    uw, inv = np.unique(omegas, return_inverse=True)
    C = np.empty((len(steps), len(uw)))
    S = np.empty((len(steps), len(uw)))
    for j, w in enumerate(uw.tolist()):
        yaw = yaw0
        for k, h in enumerate(steps):
            C[k, j] = math.cos(yaw)
            S[k, j] = math.sin(yaw)
            yaw = yaw + w * h
    return C[:, inv], S[:, inv]


@lru_cache(maxsize=32)
def _candidate_grid(params: "VOParams") -> np.ndarray:
    vx = sorted(set(params.vx_values))
    vy = sorted(set(params.vy_values))
    om = sorted(set(params.omega_values))
    g = np.array([(a, b, c) for a in vx for b in vy for c in om], dtype=float)
    g.setflags(write=False)
    return g


def _lookup(dist: DistanceField, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = dist.meta
    ix = np.floor((x - m.origin[0]) / m.cell_size).astype(np.int64)
    iy = np.floor((y - m.origin[1]) / m.cell_size).astype(np.int64)
    inside = (ix >= 0) & (ix < m.width) & (iy >= 0) & (iy < m.height)
    vals = dist.values[np.where(inside, iy, 0), np.where(inside, ix, 0)]
    return np.where(inside, vals, np.nan)


def _rollout_batch(pose: Pose, U: np.ndarray, params: VOParams, dist: DistanceField, obstacles, r_eff: float):
    n = len(U)
    vx, vy, om = U[:, 0], U[:, 1], U[:, 2]
    steps = _rollout_steps(params)
    C, S = _yaw_tables(pose.yaw, om, steps)
    xs = np.empty((len(steps), n))
    ys = np.empty((len(steps), n))
    ts = []
    x = np.full(n, pose.x)
    y = np.full(n, pose.y)
    t = 0.0
    for k, h in enumerate(steps):
        x, y, _ = integrate_holonomic(x, y, 0.0, vx, vy, 0.0, h, C[k], S[k])
        xs[k] = x
        ys[k] = y
        t = t + h
        ts.append(t)
    cs = dist.meta.cell_size
    vals = _lookup(dist, xs, ys)
    d_stat = np.where(np.isnan(vals), -cs, vals - r_eff).min(axis=0)
    ox, oy, ovx, ovy, orad = _obstacle_arrays(obstacles)
    if len(ox):
        tt = np.array(ts)[:, None]
        qx = ox[None, :] + ovx[None, :] * tt  # (steps, m)
        qy = oy[None, :] + ovy[None, :] * tt
        dx = xs[:, :, None] - qx[:, None, :]
        dy = ys[:, :, None] - qy[:, None, :]
        dd = np.sqrt(dx * dx + dy * dy) - orad - r_eff
        d_dyn = dd.min(axis=(0, 2))
    else:
        d_dyn = np.full(n, np.inf)
    collides = (d_stat <= 0.0) | (d_dyn <= 0.0)
    return d_stat, d_dyn, collides


def rollout(
    pose: Pose,
    u: Control,
    params: VOParams,
    dist: DistanceField,
    obstacles: Sequence[ObstacleState] = (),
    footprint: Footprint | None = None,
) -> ClearanceReport:
    """Forward-simulate a constant control over ``t_look`` and report clearances.

    Samples are taken after each integration step (the start pose is not
    sampled); the final step is shortened when dt does not divide t_look.
    """
    fp = footprint or Footprint()
    ds, dd, col = _rollout_batch(pose, np.array([tuple(u)], float), params, dist, obstacles, fp.r_eff)
    return ClearanceReport(float(ds[0]), float(dd[0]), bool(col[0]))


def clearance_costs(report, params: VOParams) -> tuple:
    """(J_stat, J_dyn) soft clearance penalties."""
    ds, dd = report[0], report[1]
    j_stat = 0.0
    j_dyn = 0.0
    if ds < params.d_pref:
        j_stat = params.w_c / max(ds + params.eps_c, params.eps_c)
    if dd < 1.5 * params.d_pref:
        j_dyn = 2.0 * params.w_c / max(dd + params.eps_c, params.eps_c)
    return j_stat, j_dyn


def _clearance_costs_batch(ds, dd, params: VOParams):
    eps = params.eps_c
    j_stat = np.where(ds < params.d_pref, params.w_c / np.maximum(ds + eps, eps), 0.0)
    with np.errstate(invalid="ignore"):
        j_dyn = np.where(dd < 1.5 * params.d_pref, 2.0 * params.w_c / np.maximum(dd + eps, eps), 0.0)
    return j_stat, j_dyn


def desired_command(pose: Pose, local_goal, params: VOParams) -> tuple:
    """Heading-aligned desired velocity; turn in place when the goal is far off-axis."""
    dx = float(local_goal[0]) - pose.x
    dy = float(local_goal[1]) - pose.y
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return np.zeros(2), 0.0
    phi = wrap_angle(math.atan2(dy, dx) - pose.yaw)
    w = max(-params.omega_max, min(params.omega_max, params.k_omega * phi))
    if abs(phi) > params.turn_threshold:
        return np.zeros(2), w
    return np.array([min(params.v_max, params.k_p * dist), 0.0]), w


def control_cost(
    u: Control,
    v_curr,
    desired: tuple,
    goal_dir,
    costs: tuple,
    params: VOParams,
    yaw: float = 0.0,
) -> float:
    """Weighted soft objective for one candidate.

    ``goal_dir`` is a world-frame unit vector (or zero to drop the alignment
    term); the candidate velocity is rotated by ``yaw`` before comparing.
    """
    vx, vy, om = float(u[0]), float(u[1]), float(u[2])
    (vdx, vdy), wd = desired
    vcx, vcy = float(v_curr[0]), float(v_curr[1])
    gx, gy = float(goal_dir[0]), float(goal_dir[1])
    ex, ey = vx - vdx, vy - vdy
    cx, cy = vx - vcx, vy - vcy
    speed = math.sqrt(vx * vx + vy * vy)
    j = params.w_v * math.sqrt(ex * ex + ey * ey)
    j = j + params.w_curr * math.sqrt(cx * cx + cy * cy)
    j = j - params.w_speed * speed
    j = j + params.w_omega * abs(om - wd)
    j = j + costs[0]
    j = j + costs[1]
    if speed > 0.0 and (gx != 0.0 or gy != 0.0):
        c, s = math.cos(yaw), math.sin(yaw)
        wx = c * vx - s * vy
        wy = s * vx + c * vy
        align = (wx * gx + wy * gy) / speed
        j = j + params.w_a * speed * (1.0 - align)
    return j


def _control_cost_batch(U, v_curr, desired, goal_dir, j_stat, j_dyn, params: VOParams, yaw: float):
    vx, vy, om = U[:, 0], U[:, 1], U[:, 2]
    (vdx, vdy), wd = desired
    vcx, vcy = float(v_curr[0]), float(v_curr[1])
    gx, gy = float(goal_dir[0]), float(goal_dir[1])
    ex, ey = vx - vdx, vy - vdy
    cx, cy = vx - vcx, vy - vcy
    speed = np.sqrt(vx * vx + vy * vy)
    j = params.w_v * np.sqrt(ex * ex + ey * ey)
    j = j + params.w_curr * np.sqrt(cx * cx + cy * cy)
    j = j - params.w_speed * speed
    j = j + params.w_omega * np.abs(om - wd)
    j = j + j_stat
    j = j + j_dyn
    if gx != 0.0 or gy != 0.0:
        c, s = math.cos(yaw), math.sin(yaw)
        wx = c * vx - s * vy
        wy = s * vx + c * vy
        moving = speed > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            align = (wx * gx + wy * gy) / speed
        j = np.where(moving, j + params.w_a * speed * (1.0 - align), j)
    return j


def goal_direction(pose: Pose, goal) -> np.ndarray:
    d = np.asarray(goal, float) - pose.position
    n = math.hypot(d[0], d[1])
    return d / n if n > 0 else np.zeros(2)


@dataclass
class Decision:
    control: Control
    report: ClearanceReport
    fallback: bool
    n_safe: int
    cost: float = math.nan
    extra: dict = field(default_factory=dict, repr=False)


def evaluate_candidates(pose, v_curr, local_goal, obstacles, dist, params: VOParams, footprint: Footprint, U=None):
    """Safety mask, costs and clearance minima for every candidate control."""
    U = params.candidates() if U is None else U
    obstacles = list(obstacles)
    r_eff = footprint.r_eff
    n = len(U)

    safe = np.ones(n, bool)
    if obstacles:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        r = footprint.corners
        rx = c * r[:, 0] - s * r[:, 1]
        ry = s * r[:, 0] + c * r[:, 1]
        pcx = pose.x + rx
        pcy = pose.y + ry
        vwx = c * U[:, 0] - s * U[:, 1]
        vwy = s * U[:, 0] + c * U[:, 1]
        # (n, 4) corner velocities
        cvx = vwx[:, None] - U[:, 2][:, None] * ry[None, :]
        cvy = vwy[:, None] + U[:, 2][:, None] * rx[None, :]
        ox, oy, ovx, ovy, orad = _obstacle_arrays(obstacles)
        rinf = orad + params.inflation * r_eff
        px = (pcx[:, None] - ox[None, :])[None]
        py = (pcy[:, None] - oy[None, :])[None]
        rvx = cvx[:, :, None] - ovx[None, None, :]
        rvy = cvy[:, :, None] - ovy[None, None, :]
        rej = _vo_rejects_batch(px, py, rvx, rvy, rinf[None, None, :], params.t_vo)
        safe &= ~rej.any(axis=(1, 2))

    ds, dd, col = _rollout_batch(pose, U, params, dist, obstacles, r_eff)
    safe &= ~col
    desired = desired_command(pose, local_goal, params)
    gdir = goal_direction(pose, local_goal)
    js, jd = _clearance_costs_batch(ds, dd, params)
    cost = _control_cost_batch(U, v_curr, desired, gdir, js, jd, params, pose.yaw)
    return U, safe, cost, ds, dd, col


def choose_control(pose, v_curr, local_goal, obstacles, dist, params: VOParams, footprint: Footprint) -> Decision:
    U, safe, cost, ds, dd, col = evaluate_candidates(pose, v_curr, local_goal, obstacles, dist, params, footprint)
    n_safe = int(safe.sum())
    if n_safe == 0:
        rep = rollout(pose, ZERO_CONTROL, params, dist, obstacles, footprint)
        return Decision(ZERO_CONTROL, rep, True, 0)
    masked = np.where(safe, cost, np.inf)
    i = int(np.argmin(masked))  # first minimum = lexicographically smallest
    u = Control(float(U[i, 0]), float(U[i, 1]), float(U[i, 2]))
    return Decision(u, ClearanceReport(float(ds[i]), float(dd[i]), bool(col[i])), False, n_safe, float(cost[i]))


def select_control(pose, v_curr, local_goal, obstacles, dist, params: VOParams, footprint: Footprint | None = None) -> Control:
    """Cheapest control passing both the VO constraints and the rollout check.

    Returns zero control when every candidate is unsafe.
    """
    return choose_control(pose, v_curr, local_goal, obstacles, dist, params, footprint or Footprint()).control
