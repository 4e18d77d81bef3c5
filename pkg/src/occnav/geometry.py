"""Planar pose conventions shared by every module.

World frame: x right, y up, yaw counterclockwise from +x.
Robot frame: +x forward, +y left.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    w = np.remainder(a + math.pi, TWO_PI) - math.pi
    w[w <= -math.pi] += TWO_PI
    return w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_robot(self, p) -> np.ndarray:
        """World point(s) -> robot frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = p[..., 0] - self.x
        dy = p[..., 1] - self.y
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)

    def to_world(self, p) -> np.ndarray:
        """Robot-frame point(s) -> world frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.stack(
            [self.x + c * p[..., 0] - s * p[..., 1], self.y + s * p[..., 0] + c * p[..., 1]],
            axis=-1,
        )


def rotate(yaw: float, v) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    v = np.asarray(v, dtype=float)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1]], axis=-1)


def cos_sin(yaw: np.ndarray):
    """cos/sin via libm on the unique values.

    Keeps batched and single-candidate evaluation bitwise identical, which the
    exhaustive-scan checks of the controller rely on.
    """
    yaw = np.asarray(yaw, dtype=float)
    u, inv = np.unique(yaw, return_inverse=True)
    c = np.fromiter((math.cos(v) for v in u), float, len(u))
    s = np.fromiter((math.sin(v) for v in u), float, len(u))
    return c[inv].reshape(yaw.shape), s[inv].reshape(yaw.shape)


def integrate_holonomic(x, y, yaw, vx, vy, omega, dt, c=None, s=None):
    """One Euler step of the holonomic model; works on floats or arrays.

    Position advances with the heading at the start of the step, then yaw
    advances by omega*dt (unwrapped).
    """
    if c is None:
        c, s = math.cos(yaw), math.sin(yaw)
    nx = x + (c * vx - s * vy) * dt
    ny = y + (s * vx + c * vy) * dt
    return nx, ny, yaw + omega * dt


def polyline_length(points) -> float:
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(p, axis=0).T)))
