"""SVG rendering of a scene's traversability map with an optional trajectory.

Every drawn coordinate is ``(world - origin) * PX_PER_M``; a single group
transform flips the y axis so +y points up on screen.
"""
from __future__ import annotations

from xml.sax.saxutils import quoteattr

import numpy as np

from .grid import TraversabilityMap

PX_PER_M = 20.0


def _fmt(v: float) -> str:
    return repr(round(float(v), 6))


def _runs(row: np.ndarray):
    """(start, stop) index pairs of consecutive nonzero cells."""
    padded = np.concatenate([[0], (row != 0).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return zip(edges[::2], edges[1::2])


def to_svg_coords(points, trav: TraversabilityMap) -> np.ndarray:
    """World points to the (unflipped) coordinates written into the SVG."""
    return (np.asarray(points, float) - np.asarray(trav.meta.origin, float)) * PX_PER_M


def render_svg(trav: TraversabilityMap, trajectory=None, start=None, goal=None, obstacles=()) -> str:
    m = trav.meta
    cs = m.cell_size * PX_PER_M
    w_px = m.width * cs
    h_px = m.height * cs
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w_px)}" height="{_fmt(h_px)}" '
        f'viewBox="0 0 {_fmt(w_px)} {_fmt(h_px)}" data-px-per-m="{_fmt(PX_PER_M)}">',
        f'<g id="world" transform="translate(0 {_fmt(h_px)}) scale(1 -1)">',
        f'<rect id="background" x="0" y="0" width="{_fmt(w_px)}" height="{_fmt(h_px)}" fill="#ffffff"/>',
        '<g id="map" fill="#303030">',
    ]
    for iy in range(m.height):
        for x0, x1 in _runs(trav.cells[iy]):
            out.append(f'<rect x="{_fmt(x0 * cs)}" y="{_fmt(iy * cs)}" width="{_fmt((x1 - x0) * cs)}" '
                       f'height="{_fmt(cs)}"/>')
    out.append("</g>")
    for i, o in enumerate(obstacles):
        cx, cy = to_svg_coords(o.center, trav)
        out.append(f'<circle class="dynamic" id="dyn{i}" cx="{_fmt(cx)}" cy="{_fmt(cy)}" '
                   f'r="{_fmt(o.radius * PX_PER_M)}" fill="#3a9a3a" fill-opacity="0.6"/>')
    if trajectory is not None and len(trajectory):
        pts = to_svg_coords(np.asarray(trajectory, float)[:, :2], trav)
        joined = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        out.append(f'<polyline id="path" points={quoteattr(joined)} fill="none" stroke="#1f5fd0" '
                   f'stroke-width="2"/>')
    for name, p, color in (("start", start, "#d08a1f"), ("goal", goal, "#d01f3a")):
        if p is not None:
            x, y = to_svg_coords(p, trav)
            out.append(f'<circle id="{name}" cx="{_fmt(x)}" cy="{_fmt(y)}" r="6" fill="{color}"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"
