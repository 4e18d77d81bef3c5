"""Voxel occupancy grids, traversability fusion, clearance fields and
line-of-sight queries.

Arrays are stored C-ordered as ``cells[k, iy, ix]`` (voxels) and
``cells[iy, ix]`` (planar maps), so x runs fastest.  ``GridMeta.origin`` is
the world position of the lower-left *corner* of cell (0, 0); cell (ix, iy)
covers ``origin + [ix, ix+1) * cell_size`` along x and likewise along y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ._validation import DomainError, StructuralError, check_binary, check_positive
from .geometry import Pose

DEFAULT_CELL_SIZE = 0.05
DEFAULT_SLICE_HEIGHT = 0.1
DEFAULT_Z_LIMIT = 0.7
DEFAULT_DIST_CAP = 10.0

# Egocentric window in the robot frame (m).
CROP_FORWARD = 4.0
CROP_BACK = 2.0
CROP_SIDE = 2.0

# Slack for points that sit on a cell boundary up to float rounding.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class GridMeta:
    width: int
    height: int
    depth: int = 1
    cell_size: float = DEFAULT_CELL_SIZE
    slice_height: float = DEFAULT_SLICE_HEIGHT
    z_limit: float = DEFAULT_Z_LIMIT
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        check_positive("cell_size", self.cell_size)
        check_positive("slice_height", self.slice_height)
        check_positive("z_limit", self.z_limit)
        for name in ("width", "height", "depth"):
            if int(getattr(self, name)) < 1:
                raise StructuralError(f"{name} must be >= 1")
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_low_slices(self) -> int:
        """Number of slices strictly below z_limit, i.e. floor(z_limit / dz)."""
        return int(math.floor(self.z_limit / self.slice_height + _EDGE_TOL))

    @property
    def extent(self) -> tuple:
        """(xmin, ymin, xmax, ymax) in world meters."""
        ox, oy = self.origin
        return (ox, oy, ox + self.width * self.cell_size, oy + self.height * self.cell_size)

    def to_cell_units(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - np.asarray(self.origin)) / self.cell_size

    def cell_of(self, points) -> tuple:
        """Integer (ix, iy) of the cell containing each point."""
        u = np.floor(self.to_cell_units(points)).astype(np.int64)
        return u[..., 0], u[..., 1]

    def center_of(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix, dtype=float)
        iy = np.asarray(iy, dtype=float)
        return np.stack(
            [self.origin[0] + (ix + 0.5) * self.cell_size, self.origin[1] + (iy + 0.5) * self.cell_size],
            axis=-1,
        )

    def in_bounds(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix)
        iy = np.asarray(iy)
        return (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)

    def contains(self, points) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.extent
        p = np.asarray(points, dtype=float)
        return (p[..., 0] >= xmin) & (p[..., 0] <= xmax) & (p[..., 1] >= ymin) & (p[..., 1] <= ymax)

    def planar(self) -> "GridMeta":
        return replace(self, depth=1)


@dataclass(frozen=True)
class VoxelGrid:
    meta: GridMeta
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = check_binary("voxel cells", self.cells)
        m = self.meta
        if cells.shape != (m.depth, m.height, m.width):
            raise StructuralError(
                f"voxel cells shape {cells.shape} != (D, H, W) = {(m.depth, m.height, m.width)}"
            )
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, meta: GridMeta) -> "VoxelGrid":
        return cls(meta, np.zeros((meta.depth, meta.height, meta.width), np.uint8))

    def __eq__(self, other):
        return (
            isinstance(other, VoxelGrid)
            and self.meta == other.meta
            and np.array_equal(self.cells, other.cells)
        )


@dataclass(frozen=True)
class TraversabilityMap:
    """Planar map; ``cells[iy, ix] == 1`` marks a non-traversable cell."""

    meta: GridMeta
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = check_binary("traversability cells", self.cells)
        m = self.meta
        if cells.shape != (m.height, m.width):
            raise StructuralError(f"traversability shape {cells.shape} != (H, W) = {(m.height, m.width)}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def blocked(self) -> np.ndarray:
        return self.cells.astype(bool)

    def is_blocked(self, points) -> np.ndarray:
        ix, iy = self.meta.cell_of(points)
        inside = self.meta.in_bounds(ix, iy)
        out = np.ones(np.shape(ix), dtype=bool)
        out[inside] = self.cells[iy[inside], ix[inside]].astype(bool)
        return out


@dataclass(frozen=True)
class DistanceField:
    """Per-cell distance (m) from the cell center to the nearest blocked cell center."""

    meta: GridMeta
    values: np.ndarray = field(repr=False)
    cap: float = DEFAULT_DIST_CAP

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.meta.height, self.meta.width):
            raise StructuralError(f"distance field shape {v.shape} != (H, W)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def at(self, points, outside: float = np.nan) -> np.ndarray:
        """Value of the cell containing each point; ``outside`` off the map."""
        ix, iy = self.meta.cell_of(points)
        inside = self.meta.in_bounds(ix, iy)
        out = np.full(np.shape(ix), outside, dtype=float)
        out[inside] = self.values[iy[inside], ix[inside]]
        return out


def fuse_traversability(voxels: VoxelGrid) -> TraversabilityMap:
    """OR together every slice lying entirely below ``z_limit``."""
    m = voxels.meta
    if voxels.cells.shape != (m.depth, m.height, m.width):
        raise StructuralError("voxel cells do not match metadata")
    k = min(m.n_low_slices, m.depth)
    if k <= 0:
        fused = np.zeros((m.height, m.width), np.uint8)
    else:
        fused = voxels.cells[:k].any(axis=0).astype(np.uint8)
    return TraversabilityMap(m.planar(), fused)


def distance_field(
    trav: TraversabilityMap, cap: float = DEFAULT_DIST_CAP, boundary_is_obstacle: bool = False
) -> DistanceField:
    """Exact Euclidean distance transform between cell centers, in meters.

    With ``boundary_is_obstacle`` the ring of cells just outside the map counts
    as blocked, so clearance also shrinks toward the map edge.
    """
    check_positive("cap", cap)
    blocked = trav.blocked
    if boundary_is_obstacle:
        blocked = np.pad(blocked, 1, constant_values=True)
    if not blocked.any():
        values = np.full(trav.cells.shape, float(cap))
    else:
        # distance_transform_edt measures the distance to the nearest zero
        # entry and returns sqrt of the integer squared offset.
        edt = ndimage.distance_transform_edt(~blocked)
        if boundary_is_obstacle:
            edt = edt[1:-1, 1:-1]
        values = np.minimum(edt * trav.meta.cell_size, cap)
    return DistanceField(trav.meta, values, float(cap))


def _near_int(u: np.ndarray):
    r = np.rint(u)
    on = np.abs(u - r) < _EDGE_TOL
    lo = np.where(on, r - 1, np.floor(u)).astype(np.int64)
    hi = np.where(on, r, np.floor(u)).astype(np.int64)
    return lo, hi


def _entry_points(meta: GridMeta, a, b):
    """Endpoints and grid-line crossings of each segment, in cell units.

    Every touched closed cell contains the point where the segment enters it,
    so these points are enough to recover the supercover without ordering.
    Returns ``(px, py, ok)`` of shape (n, P); padding entries have ``ok`` False.
    """
    ua = meta.to_cell_units(a)
    ub = meta.to_cell_units(b)
    n = len(ua)
    ts = [np.zeros((n, 1)), np.ones((n, 1))]
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis in (0, 1):
            lo = np.minimum(ua[:, axis], ub[:, axis])
            hi = np.maximum(ua[:, axis], ub[:, axis])
            first = np.floor(lo) + 1
            count = np.maximum(np.ceil(hi) - first, 0).astype(np.int64)
            m = int(count.max()) if n else 0
            if m == 0:
                continue
            k = first[:, None] + np.arange(m)[None, :]
            d = ub[:, axis] - ua[:, axis]
            t = (k - ua[:, axis][:, None]) / d[:, None]
            t[np.arange(m)[None, :] >= count[:, None]] = np.nan
            ts.append(t)
    t_all = np.concatenate(ts, axis=1)
    ok = ~np.isnan(t_all)
    t_all[~ok] = 0.0
    px = ua[:, 0][:, None] + t_all * (ub[:, 0] - ua[:, 0])[:, None]
    py = ua[:, 1][:, None] + t_all * (ub[:, 1] - ua[:, 1])[:, None]
    # Segment endpoints are exact in the parameterization.
    px[:, 0], py[:, 0] = ua[:, 0], ua[:, 1]
    px[:, 1], py[:, 1] = ub[:, 0], ub[:, 1]
    return px, py, ok


def supercover(meta: GridMeta, a, b, chunk: int = 4096):
    """Cells touched by each segment a[i] -> b[i].

    Returns ``(ix, iy, valid)`` arrays of shape (n, P); a cell counts as
    touched when its closed square meets the segment, so corner contacts and
    segments running along grid lines include cells on both sides.  Cells
    outside the map are reported with ``valid`` False.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    if len(a) > chunk:
        parts = [supercover(meta, a[i : i + chunk], b[i : i + chunk], chunk) for i in range(0, len(a), chunk)]
        width = max(p[0].shape[1] for p in parts)

        def pad(x, fill):
            return np.pad(x, ((0, 0), (0, width - x.shape[1])), constant_values=fill)

        return tuple(np.concatenate([pad(p[j], f) for p in parts]) for j, f in ((0, 0), (1, 0), (2, False)))

    px, py, ok = _entry_points(meta, a, b)
    xl, xh = _near_int(px)
    yl, yh = _near_int(py)
    ix = np.concatenate([xl, xl, xh, xh], axis=1)
    iy = np.concatenate([yl, yh, yl, yh], axis=1)
    valid = np.concatenate([ok] * 4, axis=1) & meta.in_bounds(ix, iy)
    return ix, iy, valid


def segments_clear(blocked: np.ndarray, meta: GridMeta, a, b) -> np.ndarray:
    """Vectorized line of sight: True where no touched cell is blocked.

    Cells off the map never block.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    w, h = meta.width, meta.height
    # A ring of free cells absorbs every off-map index after clipping.
    pad = np.zeros((h + 2, w + 2), bool)
    pad[1:-1, 1:-1] = blocked
    flat = pad.reshape(-1)
    out = np.empty(len(a), bool)
    for i in range(0, len(a), 4096):
        px, py, ok = _entry_points(meta, a[i : i + 4096], b[i : i + 4096])
        xl, xh = (np.clip(v, -1, w) + 1 for v in _near_int(px))
        yl, yh = (np.clip(v, -1, h) * (w + 2) + (w + 2) for v in _near_int(py))
        hit = flat[yl + xl] | flat[yh + xh] | flat[yl + xh] | flat[yh + xl]
        out[i : i + 4096] = ~(hit & ok).any(axis=1)
    return out


def line_of_sight(trav: TraversabilityMap, a, b) -> bool:
    """True iff every cell the segment a->b touches is traversable."""
    pts = np.array([a, b], dtype=float)
    if not meta_contains_all(trav.meta, pts):
        raise DomainError("line_of_sight endpoints must lie inside the map")
    return bool(segments_clear(trav.blocked, trav.meta, pts[:1], pts[1:])[0])


def meta_contains_all(meta: GridMeta, pts) -> bool:
    return bool(np.all(meta.contains(pts)))


def crop_meta(meta: GridMeta) -> GridMeta:
    cs = meta.cell_size
    return replace(
        meta,
        width=int(round((CROP_FORWARD + CROP_BACK) / cs)),
        height=int(round(2 * CROP_SIDE / cs)),
        origin=(-CROP_BACK, -CROP_SIDE),
    )


def crop_egocentric(voxels: VoxelGrid, pose: Pose) -> VoxelGrid:
    """Agent-centred window x in [-2, 4) m, y in [-2, 2) m, all slices.

    Each crop voxel samples the world voxel containing its center; samples
    falling off the world grid are free.
    """
    m = voxels.meta
    cm = crop_meta(m)
    jx, jy = np.meshgrid(np.arange(cm.width), np.arange(cm.height))
    local = cm.center_of(jx, jy)
    world = pose.to_world(local)
    ix, iy = m.cell_of(world)
    inside = m.in_bounds(ix, iy)
    out = np.zeros((m.depth, cm.height, cm.width), np.uint8)
    out[:, inside] = voxels.cells[:, iy[inside], ix[inside]]
    return VoxelGrid(cm, out)
