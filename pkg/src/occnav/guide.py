"""Global guidance: lattice roadmap, clearance-penalized A*, the three-state
known map and local goal selection.

``astar`` and ``plan_guide`` return ``None`` when no path exists; that is an
ordinary outcome, not an error.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._validation import DomainError, check_nonnegative
from .geometry import Pose
from .grid import (
    CROP_BACK,
    CROP_FORWARD,
    CROP_SIDE,
    DistanceField,
    GridMeta,
    TraversabilityMap,
    segments_clear,
    supercover,
)

UNKNOWN = -1
FREE = 0
OCCUPIED = 1

DEFAULT_SPACING = 0.2
DEFAULT_SNAP_RADIUS = 1.0


@dataclass(frozen=True)
class GuideCost:
    lam: float = 2.0
    d_pref: float = 0.3

    def __post_init__(self):
        check_nonnegative("lambda", self.lam)
        check_nonnegative("d_pref", self.d_pref)


def edge_cost(length: float, d_min: float, cost: GuideCost) -> float:
    return length + cost.lam * max(0.0, cost.d_pref - d_min)


def _clearance_batch(dist: DistanceField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Min of ``dist`` over evenly spaced samples (step <= cell_size) on each segment."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    length = np.hypot(*(b - a).T)
    n_int = np.maximum(np.ceil(length / dist.meta.cell_size - 1e-12), 1).astype(np.int64)
    m = int(n_int.max())
    j = np.arange(m + 1)[None, :]
    t = j / n_int[:, None]
    valid = j <= n_int[:, None]
    t = np.where(valid, t, 1.0)
    pts = a[:, None, :] + t[..., None] * (b - a)[:, None, :]
    vals = dist.at(pts, outside=-dist.meta.cell_size)
    vals = np.where(valid, vals, np.inf)
    return vals.min(axis=1)


def edge_min_clearance(a, b, dist: DistanceField) -> float:
    """Minimum clearance sampled along the segment a->b, endpoints included."""
    return float(_clearance_batch(dist, np.asarray(a, float), np.asarray(b, float))[0])


@dataclass(frozen=True, eq=False)
class Roadmap:
    meta: GridMeta
    nodes: np.ndarray  # (n, 2) world positions
    edges: np.ndarray  # (m, 2) node indices, i < j
    lengths: np.ndarray
    d_min: np.ndarray
    edge_cell_ptr: np.ndarray = field(repr=False)
    edge_cell_ids: np.ndarray = field(repr=False)
    _cost_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def node_cell_ids(self) -> np.ndarray:
        ix, iy = self.meta.cell_of(self.nodes)
        return iy * self.meta.width + ix

    @cached_property
    def adjacency(self) -> list:
        adj = [[] for _ in range(self.n_nodes)]
        for e, (i, j) in enumerate(self.edges.tolist()):
            adj[i].append((j, e))
            adj[j].append((i, e))
        return adj

    def edge_weights(self, cost: GuideCost) -> list:
        key = (cost.lam, cost.d_pref)
        w = self._cost_cache.get(key)
        if w is None:
            w = (self.lengths + cost.lam * np.maximum(0.0, cost.d_pref - self.d_min)).tolist()
            self._cost_cache[key] = w
        return w

    def to_json_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [
                {"i": int(i), "j": int(j), "length": float(l), "d_min": float(d)}
                for (i, j), l, d in zip(self.edges, self.lengths, self.d_min)
            ],
        }


def build_roadmap(
    trav: TraversabilityMap, dist: DistanceField, spacing: float = DEFAULT_SPACING, r_eff: float = 0.0
) -> Roadmap:
    """8-connected lattice at ``spacing`` through cell centers, gated by clearance.

    The spacing is rounded to a whole number of cells.
    """
    meta = trav.meta
    cs = meta.cell_size
    if spacing < cs - 1e-12:
        raise DomainError(f"spacing {spacing} is smaller than the cell size {cs}")
    step = max(1, int(round(spacing / cs)))
    jx = np.arange(step // 2, meta.width, step)
    jy = np.arange(step // 2, meta.height, step)
    gx, gy = np.meshgrid(jx, jy)  # lattice shape (ny, nx)
    keep = (dist.values[gy, gx] >= r_eff) & (trav.cells[gy, gx] == 0)
    index = np.full(keep.shape, -1, np.int64)
    index[keep] = np.arange(int(keep.sum()))
    nodes = meta.center_of(gx[keep], gy[keep]).reshape(-1, 2)

    pairs = []
    ny, nx = keep.shape
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        ys0, ys1 = max(0, -dy), ny - max(0, dy)
        xs0, xs1 = 0, nx - dx
        a = index[ys0:ys1, xs0:xs1]
        b = index[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
        ok = (a >= 0) & (b >= 0)
        pairs.append(np.stack([a[ok], b[ok]], axis=1))
    cand = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
    cand = np.sort(cand, axis=1)
    cand = cand[np.lexsort((cand[:, 1], cand[:, 0]))]

    if len(cand):
        pa, pb = nodes[cand[:, 0]], nodes[cand[:, 1]]
        clear = segments_clear(trav.blocked, meta, pa, pb)
        cand = cand[clear]
        pa, pb = pa[clear], pb[clear]
        lengths = np.hypot(*(pb - pa).T)
        d_min = _clearance_batch(dist, pa, pb) if len(cand) else np.zeros(0)
        ix, iy, valid = supercover(meta, pa, pb)
        ids = np.where(valid, iy * meta.width + ix, -1)
        counts = valid.sum(axis=1)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        flat = ids[valid]
    else:
        lengths = d_min = np.zeros(0)
        ptr = np.zeros(1, np.int64)
        flat = np.zeros(0, np.int64)
    return Roadmap(meta, nodes, cand.astype(np.int64), lengths, d_min, ptr, flat)


@dataclass(frozen=True)
class Path:
    nodes: tuple
    waypoints: np.ndarray
    cost: float

    def __len__(self):
        return len(self.nodes)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(self.waypoints, axis=0).T)))

    def to_json_dict(self) -> dict:
        return {"nodes": list(self.nodes), "waypoints": self.waypoints.tolist(), "cost": self.cost}


def astar(
    roadmap: Roadmap,
    start: int,
    goal: int,
    cost: GuideCost,
    node_mask: np.ndarray | None = None,
    edge_mask: np.ndarray | None = None,
):
    """Minimum total edge-cost path between two roadmap nodes, or None.

    Euclidean distance to the goal is admissible because every edge costs at
    least its length.  Ties on f break toward lower h, then lower node index.
    """
    n = roadmap.n_nodes
    if not (0 <= start < n and 0 <= goal < n):
        raise DomainError("start and goal must be roadmap node indices")
    node_ok = None if node_mask is None else np.asarray(node_mask, bool).tolist()
    edge_ok = None if edge_mask is None else np.asarray(edge_mask, bool).tolist()
    if node_ok is not None and not (node_ok[start] and node_ok[goal]):
        return None
    w = roadmap.edge_weights(cost)
    adj = roadmap.adjacency
    xs = roadmap.nodes[:, 0].tolist()
    ys = roadmap.nodes[:, 1].tolist()
    gx, gy = xs[goal], ys[goal]
    hypot = math.hypot

    g = {start: 0.0}
    parent = {start: -1}
    h0 = hypot(xs[start] - gx, ys[start] - gy)
    heap = [(h0, h0, start)]
    closed = set()
    while heap:
        _, _, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == goal:
            break
        closed.add(u)
        gu = g[u]
        for v, e in adj[u]:
            if v in closed:
                continue
            if edge_ok is not None and not edge_ok[e]:
                continue
            if node_ok is not None and not node_ok[v]:
                continue
            ng = gu + w[e]
            if ng < g.get(v, math.inf):
                g[v] = ng
                parent[v] = u
                hv = hypot(xs[v] - gx, ys[v] - gy)
                heapq.heappush(heap, (ng + hv, hv, v))
    else:
        return None
    seq = [goal]
    while seq[-1] != start:
        seq.append(parent[seq[-1]])
    seq.reverse()
    return Path(tuple(seq), roadmap.nodes[seq].copy(), g[goal])


@dataclass(frozen=True, eq=False)
class KnownMap:
    meta: GridMeta
    state: np.ndarray = field(repr=False)
    replan_interval: int = 5

    def __post_init__(self):
        if int(self.replan_interval) < 1:
            raise DomainError("replan interval K must be >= 1")
        s = np.asarray(self.state, dtype=np.int8)
        if s.shape != (self.meta.height, self.meta.width):
            raise DomainError("known map shape does not match metadata")
        s.setflags(write=False)
        object.__setattr__(self, "state", s)

    @classmethod
    def fresh(cls, meta: GridMeta, replan_interval: int = 5) -> "KnownMap":
        return cls(meta, np.full((meta.height, meta.width), UNKNOWN, np.int8), replan_interval)

    @property
    def occupied(self) -> np.ndarray:
        return self.state == OCCUPIED

    @property
    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.state == UNKNOWN))

    def __eq__(self, other):
        return (
            isinstance(other, KnownMap)
            and self.meta == other.meta
            and self.replan_interval == other.replan_interval
            and np.array_equal(self.state, other.state)
        )


def observation_mask(meta: GridMeta, pose: Pose):
    """(iy slice, ix slice, mask) of cells whose centers fall in the sensed window."""
    corners = pose.to_world(
        np.array([[-CROP_BACK, -CROP_SIDE], [CROP_FORWARD, -CROP_SIDE], [CROP_FORWARD, CROP_SIDE], [-CROP_BACK, CROP_SIDE]])
    )
    ix, iy = meta.cell_of(corners)
    x0, x1 = max(int(ix.min()), 0), min(int(ix.max()) + 1, meta.width)
    y0, y1 = max(int(iy.min()), 0), min(int(iy.max()) + 1, meta.height)
    if x0 >= x1 or y0 >= y1:
        return slice(0, 0), slice(0, 0), np.zeros((0, 0), bool)
    cs = meta.cell_size
    cx = meta.origin[0] + (np.arange(x0, x1) + 0.5) * cs - pose.x
    cy = meta.origin[1] + (np.arange(y0, y1) + 0.5) * cs - pose.y
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    lx = c * cx[None, :] + s * cy[:, None]
    ly = -s * cx[None, :] + c * cy[:, None]
    mask = (lx >= -CROP_BACK) & (lx <= CROP_FORWARD) & (ly >= -CROP_SIDE) & (ly <= CROP_SIDE)
    return slice(y0, y1), slice(x0, x1), mask


def integrate_observation(known: KnownMap, pose: Pose, world: TraversabilityMap) -> KnownMap:
    """Copy the world's free/occupied state into every cell inside the sensed window."""
    ys, xs, mask = observation_mask(known.meta, pose)
    state = known.state.copy()
    window = state[ys, xs]
    window[mask] = world.cells[ys, xs][mask]
    return KnownMap(known.meta, state, known.replan_interval)


def filter_roadmap(known: KnownMap, roadmap: Roadmap):
    """Node and edge masks with everything touching an Occupied cell removed."""
    occ = known.occupied.reshape(-1)
    node_ok = ~occ[roadmap.node_cell_ids]
    if len(roadmap.edges):
        hit = np.logical_or.reduceat(occ[roadmap.edge_cell_ids], roadmap.edge_cell_ptr[:-1])
        edge_ok = ~hit & node_ok[roadmap.edges[:, 0]] & node_ok[roadmap.edges[:, 1]]
    else:
        edge_ok = np.zeros(0, bool)
    return node_ok, edge_ok


def _snap(roadmap: Roadmap, node_ok: np.ndarray, point, radius: float):
    if not node_ok.any():
        return None
    d = np.hypot(*(roadmap.nodes - np.asarray(point, float)).T)
    d = np.where(node_ok, d, np.inf)
    i = int(np.argmin(d))
    return i if d[i] <= radius else None


def plan_guide(
    known: KnownMap,
    roadmap: Roadmap,
    start,
    goal,
    cost: GuideCost,
    snap_radius: float = DEFAULT_SNAP_RADIUS,
):
    """A* on the roadmap after removing parts known to be occupied; unknown counts as free."""
    node_ok, edge_ok = filter_roadmap(known, roadmap)
    s = _snap(roadmap, node_ok, start, snap_radius)
    g = _snap(roadmap, node_ok, goal, snap_radius)
    if s is None or g is None:
        return None
    return astar(roadmap, s, g, cost, node_ok, edge_ok)


def select_local_goal(path: Path, pose: Pose, known: KnownMap, blocked: np.ndarray | None = None) -> np.ndarray:
    """Farthest waypoint with a clear straight segment from the robot.

    ``blocked`` replaces the known map's Occupied cells as the obstruction
    mask (for example a footprint-inflated copy).  Falls back to the nearest
    waypoint when none is visible.
    """
    wps = path.waypoints
    if len(wps) == 0:
        raise DomainError("path has no waypoints")
    if blocked is None:
        blocked = known.occupied
    here = pose.position[None, :]
    if segments_clear(blocked, known.meta, here, wps[-1:])[0]:
        return wps[-1].copy()
    visible = segments_clear(blocked, known.meta, here, wps)
    idx = np.flatnonzero(visible)
    if len(idx):
        return wps[idx[-1]].copy()
    return wps[int(np.argmin(np.hypot(*(wps - here).T)))].copy()


def disk_offsets(radius: float, cell_size: float) -> np.ndarray:
    """(k, 2) integer (dx, dy) offsets with center distance <= radius."""
    r = int(math.floor(radius / cell_size + 1e-9))
    d = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(d, d)
    keep = np.hypot(dx, dy) * cell_size <= radius + 1e-9
    return np.column_stack([dx[keep], dy[keep]])


def inflate_into(mask: np.ndarray, iy: np.ndarray, ix: np.ndarray, offsets: np.ndarray) -> None:
    """Set every cell within the offset stencil of the given cells, in place."""
    if len(iy) == 0:
        return
    h, w = mask.shape
    ys = (iy[:, None] + offsets[None, :, 1]).reshape(-1)
    xs = (ix[:, None] + offsets[None, :, 0]).reshape(-1)
    ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    mask[ys[ok], xs[ok]] = True
