import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from occnav._validation import CalibrationError, DomainError, StructuralError
from occnav.deadreckon import (
    DeadReckoner,
    HardIronCalibrator,
    ReckonConfig,
    SensorLog,
    detect_zupt,
    hard_iron_offset,
    integrate_trajectory,
    kf_rts,
    mag_yaw,
    read_sensor_csv,
    reckon,
    ticks_to_speed,
)
from oracles import batch_map
from synth import circle_log, random_yaw_problem

CFG = ReckonConfig()


class TestZupt:
    def test_all_zero(self):
        assert detect_zupt(np.zeros(20), CFG).all()

    def test_constant_motion(self):
        assert not detect_zupt(np.ones(20), CFG).any()

    def test_square_wave(self):
        truth = np.tile(np.r_[np.zeros(20, bool), np.ones(20, bool)], 4)
        speed = np.where(truth, 0.0, 1.0)
        got = detect_zupt(speed, CFG)
        edges = np.flatnonzero(np.diff(truth.astype(int)) != 0)
        far = np.ones(len(truth), bool)
        for e in edges:
            far[max(e - 2, 0) : e + 4] = False
        assert np.array_equal(got[far], truth[far])
        # a window never flags a moving sample
        assert not (got & ~truth).any()

    def test_single_blip_breaks_window(self):
        speed = np.zeros(11)
        speed[5] = 0.5
        got = detect_zupt(speed, CFG)
        assert not got[3:8].any() and got[0] and got[10]


class TestHardIron:
    def test_circle_center(self):
        a = np.linspace(0, 2 * np.pi, 100, endpoint=False)
        pts = np.column_stack([2 + 0.7 * np.cos(a), -1 + 0.7 * np.sin(a)])
        assert np.allclose(hard_iron_offset(pts), [2, -1], atol=1e-9)

    def test_centered(self):
        a = np.linspace(0, 2 * np.pi, 37, endpoint=False)
        assert np.allclose(hard_iron_offset(np.column_stack([np.cos(a), np.sin(a)])), 0, atol=1e-12)

    def test_cardinal(self):
        pts = [[6, 5], [5, 6], [4, 5], [5, 4]]
        assert np.allclose(hard_iron_offset(pts), [5, 5], atol=1e-12)

    def test_partial_arc(self):
        a = np.linspace(0.2, 1.4, 30)
        pts = np.column_stack([3 + 2 * np.cos(a), 1 + 2 * np.sin(a)])
        assert np.allclose(hard_iron_offset(pts), [3, 1], atol=1e-8)

    @pytest.mark.parametrize("pts", [[[0, 0], [1, 1], [2, 2], [3, 3]], [[1, 1]] * 5, [[0, 0], [1, 0]]])
    def test_degenerate(self, pts):
        with pytest.raises(CalibrationError):
            hard_iron_offset(pts)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(-50, 50))
    def test_translation_equivariant(self, seed, dx, dy):
        pts = np.random.default_rng(seed).normal(size=(20, 2))
        a = hard_iron_offset(pts)
        b = hard_iron_offset(pts + [dx, dy])
        assert np.allclose(b - a, [dx, dy], atol=1e-9)

    def test_transformer(self):
        a = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        X = np.column_stack([4 + np.cos(a), 1 + np.sin(a)])
        out = HardIronCalibrator().fit_transform(X)
        assert np.allclose(np.hypot(*out.T), 1.0)


class TestMagYaw:
    def test_examples(self):
        yaw, ok = mag_yaw([[1, 0], [0, 1]], (0, 0))
        assert yaw[0] == 0.0 and yaw[1] == pytest.approx(math.pi / 2) and ok.all()

    def test_offset_and_declination(self):
        yaw, _ = mag_yaw([[3, 2]], (2, 2), 0.1)
        assert yaw[0] == pytest.approx(0.1)

    def test_zero_field_invalid(self):
        yaw, ok = mag_yaw([[1, 1], [2, 1]], (1, 1))
        assert not ok[0] and math.isnan(yaw[0]) and ok[1]

    def test_unwrap_across_pi(self):
        a = np.linspace(2.5, 4.5, 50)
        yaw, _ = mag_yaw(np.column_stack([np.cos(a), np.sin(a)]), (0, 0))
        assert np.abs(np.diff(yaw)).max() < math.pi
        assert np.allclose(yaw, a)


class TestKalman:
    def test_constant_fixed_point(self):
        obs = np.full(50, 0.7)
        zupt = np.zeros(50, bool)
        zupt[10:20] = True
        res = kf_rts(obs, zupt, 0.1, ReckonConfig(q_yaw_rate=3.0, r_mag=0.01))
        assert np.allclose(res.yaw, 0.7, atol=1e-12) and np.allclose(res.yaw_rate, 0.0, atol=1e-12)

    def test_ramp_rate(self):
        t = np.arange(300) * 0.1
        res = kf_rts(0.1 * t, np.zeros(300, bool), 0.1, CFG)
        sd = np.sqrt(res.cov[150, 1, 1])
        assert abs(res.yaw_rate[150] - 0.1) <= 3 * sd

    def test_ramp_matches_batch(self):
        t = np.arange(300) * 0.1
        obs = 0.1 * t
        zupt = np.zeros(300, bool)
        res = kf_rts(obs, zupt, 0.1, CFG)
        assert np.abs(res.mean - batch_map(obs, zupt, 0.1, CFG)).max() <= 1e-8

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(30, 200))
    def test_matches_batch_map(self, seed, n):
        obs, zupt, dt = random_yaw_problem(np.random.default_rng(seed), n)
        res = kf_rts(obs, zupt, dt, CFG)
        assert np.abs(res.mean - batch_map(obs, zupt, dt, CFG)).max() <= 1e-8

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_last_equals_filtered_and_psd(self, seed):
        obs, zupt, dt = random_yaw_problem(np.random.default_rng(seed), 120)
        res = kf_rts(obs, zupt, dt, CFG)
        assert np.array_equal(res.mean[-1], res.filtered[-1])
        assert np.array_equal(res.cov[-1], res.filtered_cov[-1])
        for C in (res.cov, res.filtered_cov):
            assert np.array_equal(C, np.transpose(C, (0, 2, 1)))
            assert np.linalg.eigvalsh(C).min() >= -1e-12

    def test_all_invalid_observations(self):
        res = kf_rts(np.full(10, np.nan), np.zeros(10, bool), 0.1, CFG)
        assert np.all(res.yaw == 0.0)

    def test_length_mismatch(self):
        with pytest.raises(StructuralError):
            kf_rts(np.zeros(5), np.zeros(4, bool), 0.1, CFG)

    def test_smoothing_reduces_error(self):
        log, yaw, _ = circle_log(dt=0.05, loops=1.0, sigma=0.2, seed=3)
        obs, _ = mag_yaw(log.mag, (0, 0))
        res = kf_rts(obs, np.zeros(len(obs), bool), log.dt, CFG)
        assert np.sqrt(np.mean((res.yaw - yaw) ** 2)) < np.sqrt(np.mean((obs - yaw) ** 2))


class TestIntegrate:
    def test_straight(self):
        tr = integrate_trajectory(np.ones(11), np.zeros(11), np.zeros(11, bool), 0.1)
        assert tr.x[-1] == pytest.approx(1.0) and tr.y[-1] == 0.0

    def test_circle_arc(self):
        dt = 0.01
        t = np.arange(int(round(math.pi / dt)) + 1) * dt
        tr = integrate_trajectory(np.ones(len(t)), t, np.zeros(len(t), bool), dt)
        exact = (math.sin(t[-1]), 1 - math.cos(t[-1]))
        assert math.dist((tr.x[-1], tr.y[-1]), exact) <= 2 * dt

    def test_zupt_everywhere(self):
        tr = integrate_trajectory(np.ones(20), np.linspace(0, 3, 20), np.ones(20, bool), 0.1)
        assert not tr.x.any() and not tr.y.any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_length_bound(self, seed):
        rng = np.random.default_rng(seed)
        n = 50
        v = rng.normal(size=n)
        yaw = np.cumsum(rng.normal(scale=0.3, size=n))
        dt = rng.uniform(0.05, 0.2, n - 1)
        zupt = rng.random(n) < 0.2
        bound = np.sum(np.abs(np.where(zupt, 0.0, v))[:-1] * dt)
        assert integrate_trajectory(v, yaw, zupt, dt).length <= bound + 1e-12
        free = integrate_trajectory(v, yaw, np.zeros(n, bool), dt).length
        assert free == pytest.approx(np.sum(np.abs(v[:-1]) * dt), rel=1e-12)

    def test_records_wrap_yaw(self):
        tr = integrate_trajectory(np.zeros(3), [0.0, 3.5, 7.0], np.zeros(3, bool), 0.1)
        assert all(-math.pi < r["yaw"] <= math.pi for r in tr.records())


class TestPipeline:
    def test_circle_endpoint(self):
        log, _, xy = circle_log(offset=(0.4, -0.3))
        tr = reckon(log, CFG)
        length = 2 * 2 * math.pi * 2.0
        assert math.dist(tr.xy[-1], xy[-1]) <= 0.01 * length

    def test_estimator_api(self):
        log, _, _ = circle_log(loops=1.0, offset=(1.0, 2.0))
        est = DeadReckoner(r_mag=0.05)
        assert est.get_params()["r_mag"] == 0.05
        assert clone(est).get_params() == est.get_params()
        tr = est.fit_transform(log)
        assert np.allclose(est.offset_, (1.0, 2.0), atol=1e-9)
        assert np.allclose(tr.xy, reckon(log, est.config).xy)
        assert DeadReckoner.from_config(ReckonConfig(r_zupt=2e-4)).r_zupt == 2e-4

    def test_unfitted(self):
        log, _, _ = circle_log(loops=1.0)
        with pytest.raises(CalibrationError):
            DeadReckoner().transform(log)

    def test_stationary_log(self):
        log = SensorLog(np.arange(10) * 0.1, np.zeros(10), np.tile([[0.3, 0.2]], (10, 1)))
        tr = DeadReckoner().fit_transform(log)
        assert np.all(tr.xy == 0.0)

    def test_ticks(self):
        v = ticks_to_speed([0, 10, 30], [0.0, 0.1, 0.2], 100, 0.05)
        assert np.allclose(v, [0.0, 2 * math.pi * 0.05, 2 * 2 * math.pi * 0.05])


class TestCSV:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "log.csv"
        p.write_text("t,wheel_speed,mx,my\n0,0,1,0\n0.1,0.5,0.9,0.1\n")
        log = read_sensor_csv(p)
        assert len(log) == 2 and log.mag[1, 1] == 0.1

    @pytest.mark.parametrize(
        "body,line",
        [("0,0,1,0\n0.1,0,1\n", 2), ("0,0,1,0\n0.1,x,1,0\n", 2), ("0,0,1,0\n0.1,0,1,0\n0.1,0,1,0\n", 3),
         ("0,0,1,0\n0.2,0,nan,0\n", 2)],
    )
    def test_errors_name_line(self, tmp_path, body, line):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(StructuralError, match=f"line {line}"):
            read_sensor_csv(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("t,wheel_speed,mx,my\n")
        with pytest.raises(StructuralError):
            read_sensor_csv(p)

    def test_non_increasing_time(self):
        with pytest.raises(DomainError):
            SensorLog([0.0, 0.0], [0, 0], [[1, 0], [1, 0]])
