"""Dead reckoning from wheel speed and a planar magnetometer.

Pipeline: stationary detection, hard-iron offset from an algebraic circle
fit, magnetometer heading, a [yaw, yaw_rate] Kalman filter with
Rauch-Tung-Striebel smoothing, then Euler integration of the position.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter1d
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import CalibrationError, DomainError, NumericalError, StructuralError, check_positive
from .geometry import wrap_angles


@dataclass(frozen=True)
class ReckonConfig:
    zupt_speed_eps: float = 0.02
    zupt_window: int = 5
    q_yaw_rate: float = 0.05
    r_mag: float = 0.1
    r_zupt: float = 1e-4
    declination: float = 0.0
    # prior variances on the initial (yaw, yaw_rate)
    p0_yaw: float = 10.0
    p0_yaw_rate: float = 1.0

    def __post_init__(self):
        for name in ("zupt_speed_eps", "q_yaw_rate", "r_mag", "r_zupt", "p0_yaw", "p0_yaw_rate"):
            check_positive(name, getattr(self, name))
        if int(self.zupt_window) != self.zupt_window or self.zupt_window < 1:
            raise DomainError("zupt_window must be an integer >= 1")


@dataclass(frozen=True)
class SensorLog:
    t: np.ndarray
    wheel_speed: np.ndarray
    mag: np.ndarray  # (N, 2) raw field

    def __post_init__(self):
        t = np.asarray(self.t, float)
        v = np.asarray(self.wheel_speed, float)
        m = np.asarray(self.mag, float).reshape(-1, 2)
        if not (len(t) == len(v) == len(m)):
            raise StructuralError("timestamps, wheel speed and mag must have equal lengths")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise DomainError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "wheel_speed", v)
        object.__setattr__(self, "mag", m)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)


def read_sensor_csv(path) -> SensorLog:
    """Parse ``t, wheel_speed, mx, my`` rows; a header line is optional.

    Raises StructuralError naming the offending line.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() == "t":
                continue
            if len(row) != 4:
                raise StructuralError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise StructuralError(f"line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise StructuralError(f"line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise StructuralError("sensor log has no samples")
    a = np.array(rows)
    try:
        return SensorLog(a[:, 0], a[:, 1], a[:, 2:4])
    except DomainError as exc:
        bad = int(np.flatnonzero(np.diff(a[:, 0]) <= 0)[0]) + 2
        raise StructuralError(f"line {bad}: {exc}") from None


def ticks_to_speed(ticks, t, ticks_per_rev: float, wheel_radius: float) -> np.ndarray:
    """Cumulative encoder ticks to per-sample speed (backward difference, first sample 0)."""
    ticks = np.asarray(ticks, float)
    t = np.asarray(t, float)
    dist = ticks / ticks_per_rev * 2 * math.pi * wheel_radius
    v = np.zeros_like(dist)
    v[1:] = np.diff(dist) / np.diff(t)
    return v


def detect_zupt(wheel_speed, cfg: ReckonConfig = ReckonConfig()) -> np.ndarray:
    """Stationary where |speed| < eps on every sample of a centered window."""
    still = (np.abs(np.asarray(wheel_speed, float)) < cfg.zupt_speed_eps).astype(np.uint8)
    if still.size == 0:
        return still.astype(bool)
    # 'nearest' padding makes the window shrink at the ends, which is what a min wants
    return minimum_filter1d(still, size=int(cfg.zupt_window), mode="nearest").astype(bool)


def hard_iron_offset(mag) -> np.ndarray:
    """Center of the algebraic least-squares circle through the (mx, my) cloud."""
    m = np.asarray(mag, float).reshape(-1, 2)
    if len(m) < 3:
        raise CalibrationError("need at least 3 magnetometer samples")
    mean = m.mean(axis=0)
    c = m - mean
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise CalibrationError("magnetometer samples are collinear or coincident")
    # x^2 + y^2 = 2 a x + 2 b y + k, solved on centered data
    A = np.column_stack([2 * c, np.ones(len(c))])
    rhs = (c**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return mean + sol[:2]


def mag_yaw(mag, offset, declination: float = 0.0):
    """Unwrapped heading observations and a validity mask.

    Samples whose corrected field is zero are invalid (NaN yaw).
    """
    m = np.asarray(mag, float).reshape(-1, 2) - np.asarray(offset, float)
    valid = np.hypot(m[:, 0], m[:, 1]) > 0
    yaw = np.full(len(m), np.nan)
    raw = np.arctan2(m[valid, 1], m[valid, 0]) + declination
    yaw[valid] = np.unwrap(raw)
    return yaw, valid


def transition(dt: float, q: float):
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    return F, Q


@dataclass
class KFResult:
    yaw: np.ndarray
    yaw_rate: np.ndarray
    cov: np.ndarray  # (N, 2, 2) smoothed
    filtered: np.ndarray  # (N, 2)
    filtered_cov: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return np.column_stack([self.yaw, self.yaw_rate])


def _measurements(yaw_obs, zupt, cfg):
    """Per-sample list of (H row index, value, variance)."""
    out = []
    for z, still in zip(yaw_obs, zupt):
        ms = []
        if np.isfinite(z):
            ms.append((0, float(z), cfg.r_mag))
        if still:
            ms.append((1, 0.0, cfg.r_zupt))
        out.append(ms)
    return out


def _prior(yaw_obs, cfg):
    finite = np.flatnonzero(np.isfinite(yaw_obs))
    m0 = np.array([yaw_obs[finite[0]] if len(finite) else 0.0, 0.0])
    return m0, np.diag([cfg.p0_yaw, cfg.p0_yaw_rate])


def _steps(dt, n):
    dt = np.broadcast_to(np.asarray(dt, float), (max(n - 1, 0),)).copy()
    if np.any(dt <= 0):
        raise DomainError("dt must be positive")
    return dt


def kf_rts(yaw_obs, zupt_mask, dt, cfg: ReckonConfig = ReckonConfig()) -> KFResult:
    """Forward Kalman filter then RTS smoother over [yaw, yaw_rate].

    ``dt`` is a scalar or the N-1 step lengths.  ZUPT samples add a
    yaw_rate = 0 pseudo-measurement; NaN headings are skipped.
    """
    yaw_obs = np.asarray(yaw_obs, float)
    zupt = np.asarray(zupt_mask, bool)
    n = len(yaw_obs)
    if len(zupt) != n:
        raise StructuralError("yaw observations and ZUPT mask differ in length")
    if n == 0:
        raise DomainError("empty log")
    dt = _steps(dt, n)
    meas = _measurements(yaw_obs, zupt, cfg)
    q = cfg.q_yaw_rate
    # 2x2 algebra written out; numpy per-step overhead dominates otherwise
    xf = np.empty((n, 2))
    Pf = np.empty((n, 3))  # (p00, p01, p11)
    xp = np.empty((n, 2))
    Pp = np.empty((n, 3))
    (y, w), P0 = _prior(yaw_obs, cfg)
    a, b, c = P0[0, 0], P0[0, 1], P0[1, 1]
    for i in range(n):
        if i:
            h = dt[i - 1]
            y = y + h * w
            a, b, c = (a + 2 * h * b + h * h * c + q * h**3 / 3, b + h * c + q * h * h / 2, c + q * h)
        xp[i] = y, w
        Pp[i] = a, b, c
        for k, z, r in meas[i]:
            if k == 0:
                s_, k0, k1, innov = a + r, a, b, z - y
            else:
                s_, k0, k1, innov = c + r, b, c, z - w
            k0 /= s_
            k1 /= s_
            y += k0 * innov
            w += k1 * innov
            # Joseph form (I - K H) P (I - K H)^T + r K K^T
            if k == 0:
                a, b, c = ((1 - k0) ** 2 * a + r * k0 * k0,
                           (1 - k0) * (b - k1 * a) + r * k0 * k1,
                           c - 2 * k1 * b + k1 * k1 * a + r * k1 * k1)
            else:
                a, b, c = (a - 2 * k0 * b + k0 * k0 * c + r * k0 * k0,
                           (1 - k1) * (b - k0 * c) + r * k0 * k1,
                           (1 - k1) ** 2 * c + r * k1 * k1)
        if not (a >= 0 and c >= 0 and a * c - b * b >= -1e-12 * max(1.0, a * a, c * c)):
            raise NumericalError(f"covariance lost positive semi-definiteness at filter step {i}")
        xf[i] = y, w
        Pf[i] = a, b, c
    xs = xf.copy()
    Ps = Pf.copy()
    for i in range(n - 2, -1, -1):
        h = dt[i]
        fa, fb, fc = Pf[i]
        pa, pb, pc = Pp[i + 1]
        det = pa * pc - pb * pb
        # M = Pf F^T, C = M Pp^-1
        m00, m01 = fa + h * fb, fb
        m10, m11 = fb + h * fc, fc
        c00 = (m00 * pc - m01 * pb) / det
        c01 = (m01 * pa - m00 * pb) / det
        c10 = (m10 * pc - m11 * pb) / det
        c11 = (m11 * pa - m10 * pb) / det
        d0 = xs[i + 1, 0] - xp[i + 1, 0]
        d1 = xs[i + 1, 1] - xp[i + 1, 1]
        xs[i, 0] = xf[i, 0] + c00 * d0 + c01 * d1
        xs[i, 1] = xf[i, 1] + c10 * d0 + c11 * d1
        sa, sb, sc = Ps[i + 1]
        ea, eb, ec = sa - pa, sb - pb, sc - pc
        # C E C^T with E symmetric
        t00, t01 = c00 * ea + c01 * eb, c00 * eb + c01 * ec
        t10, t11 = c10 * ea + c11 * eb, c10 * eb + c11 * ec
        na = fa + t00 * c00 + t01 * c01
        nb = fb + 0.5 * ((t00 * c10 + t01 * c11) + (t10 * c00 + t11 * c01))
        nc = fc + t10 * c10 + t11 * c11
        if not (na >= -1e-12 and nc >= -1e-12 and na * nc - nb * nb >= -1e-12 * max(1.0, na * na, nc * nc)):
            raise NumericalError(f"covariance lost positive semi-definiteness at smoother step {i}")
        Ps[i] = na, nb, nc
    full = lambda A: np.stack([A[:, 0], A[:, 1], A[:, 1], A[:, 2]], axis=1).reshape(-1, 2, 2)  # noqa: E731
    return KFResult(xs[:, 0].copy(), xs[:, 1].copy(), full(Ps), xf, full(Pf))


@dataclass
class Trajectory2D:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray

    def __len__(self):
        return len(self.x)

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def length(self) -> float:
        return float(np.hypot(np.diff(self.x), np.diff(self.y)).sum())

    def records(self) -> list:
        """JSON-ready rows; yaw wrapped to (-pi, pi] only here."""
        yaw = wrap_angles(self.yaw)
        return [{"t": float(a), "x": float(b), "y": float(c), "yaw": float(d)}
                for a, b, c, d in zip(self.t, self.x, self.y, yaw)]


def integrate_trajectory(wheel_speed, yaw, zupt_mask, dt, t=None) -> Trajectory2D:
    """Euler integration from the origin; speed is zeroed on ZUPT samples."""
    v = np.where(np.asarray(zupt_mask, bool), 0.0, np.asarray(wheel_speed, float))
    yaw = np.asarray(yaw, float)
    n = len(v)
    if len(yaw) != n:
        raise StructuralError("speed and yaw differ in length")
    dt = _steps(dt, n)
    x = np.zeros(n)
    y = np.zeros(n)
    if n > 1:
        x[1:] = np.cumsum(v[:-1] * np.cos(yaw[:-1]) * dt)
        y[1:] = np.cumsum(v[:-1] * np.sin(yaw[:-1]) * dt)
    if t is None:
        t = np.concatenate([[0.0], np.cumsum(dt)])
    return Trajectory2D(np.asarray(t, float), x, y, yaw.copy())


def reckon(log: SensorLog, cfg: ReckonConfig = ReckonConfig(), offset=None) -> Trajectory2D:
    """Full pipeline on one log."""
    zupt = detect_zupt(log.wheel_speed, cfg)
    if offset is None:
        offset = hard_iron_offset(log.mag)
    yaw_obs, _ = mag_yaw(log.mag, offset, cfg.declination)
    if len(log) == 1:
        yaw = np.nan_to_num(yaw_obs)
    else:
        yaw = kf_rts(yaw_obs, zupt, log.dt, cfg).yaw
    return integrate_trajectory(log.wheel_speed, yaw, zupt, log.dt, log.t)


class HardIronCalibrator(TransformerMixin, BaseEstimator):
    """Learns the hard-iron offset and subtracts it."""

    def fit(self, X, y=None):
        self.offset_ = hard_iron_offset(X)
        return self

    def transform(self, X):
        if not hasattr(self, "offset_"):
            raise CalibrationError("HardIronCalibrator is not fitted")
        return np.asarray(X, float).reshape(-1, 2) - self.offset_


class DeadReckoner(BaseEstimator):
    """Estimator wrapper: ``fit`` calibrates on a log, ``transform`` reconstructs a trajectory."""

    def __init__(self, zupt_speed_eps=0.02, zupt_window=5, q_yaw_rate=0.05, r_mag=0.1, r_zupt=1e-4,
                 declination=0.0, p0_yaw=10.0, p0_yaw_rate=1.0):
        self.zupt_speed_eps = zupt_speed_eps
        self.zupt_window = zupt_window
        self.q_yaw_rate = q_yaw_rate
        self.r_mag = r_mag
        self.r_zupt = r_zupt
        self.declination = declination
        self.p0_yaw = p0_yaw
        self.p0_yaw_rate = p0_yaw_rate

    @classmethod
    def from_config(cls, cfg: ReckonConfig) -> "DeadReckoner":
        return cls(**{k: getattr(cfg, k) for k in cls._get_param_names()})

    @property
    def config(self) -> ReckonConfig:
        return ReckonConfig(**self.get_params())

    def fit(self, log: SensorLog, y=None):
        try:
            self.offset_ = hard_iron_offset(log.mag)
        except CalibrationError:
            # a log that never moves cannot sweep the field, and needs no heading
            if not detect_zupt(log.wheel_speed, self.config).all():
                raise
            self.offset_ = np.zeros(2)
        return self

    def transform(self, log: SensorLog) -> Trajectory2D:
        if not hasattr(self, "offset_"):
            raise CalibrationError("DeadReckoner is not fitted")
        return reckon(log, self.config, self.offset_)

    def fit_transform(self, log: SensorLog, y=None) -> Trajectory2D:
        return self.fit(log).transform(log)
