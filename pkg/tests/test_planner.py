import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occnav._validation import ConfigurationError, DomainError
from occnav.geometry import Pose, wrap_angle
from occnav.grid import GridMeta, TraversabilityMap, VoxelGrid
from occnav.planner import (
    SUCCESS,
    TIMEOUT,
    UNREACHABLE,
    GuideConfig,
    PlannerConfig,
    Trajectory,
    World,
    emit_samples,
    footprint_hits_cells,
    footprint_hits_disc,
    from_egocentric,
    fusion_step,
    new_state,
    run_episode,
    to_egocentric,
    traj_error,
)
from occnav.sim import SceneParams, generate_scene
from occnav.vo import Control, Footprint, ObstacleState, VOParams
from oracles import exhaustive_select

FP = Footprint(0.4, 0.3, 0.33)


def open_world(n=200):
    return World.build(TraversabilityMap(GridMeta(n, n), np.zeros((n, n), np.uint8)), FP)


@pytest.fixture(scope="module")
def open10():
    return open_world(200)


class TestFusionStep:
    def test_first_control_forward(self, open10):
        state = new_state(open10, Pose(2.0, 5.0), (7.0, 5.0))
        u, state = fusion_step(open10, state, VOParams(), FP)
        assert u.vx > 0
        # before moving, the local goal is the visible end of the guide path
        lg = state.log[-1]["local_goal"]
        exp, _ = exhaustive_select(Pose(2.0, 5.0), (0.0, 0.0), lg, (), open10.dist, VOParams(), FP)
        assert u == exp

    def test_path_identity_between_replans(self, open10):
        state = new_state(open10, Pose(2.0, 5.0), (7.0, 5.0), guide=GuideConfig(replan_interval=5))
        _, state = fusion_step(open10, state, VOParams(), FP)
        first = state.path
        for _ in range(4):
            _, state = fusion_step(open10, state, VOParams(), FP)
            assert state.path is first
        _, state = fusion_step(open10, state, VOParams(), FP)
        assert state.path is not first

    def test_walled_goal_unreachable(self):
        cells = np.zeros((200, 200), np.uint8)
        cells[88:112, 68:70] = cells[88:112, 92:94] = 1
        cells[88:90, 68:94] = cells[110:112, 68:94] = 1
        world = World.build(TraversabilityMap(GridMeta(200, 200), cells), FP)
        run = run_episode(world, Pose(2.0, 5.0), (4.05, 5.0), (), VOParams(), FP)
        assert run.outcome == UNREACHABLE

    def test_unknown_count_non_increasing(self):
        scene = generate_scene(3, SceneParams(size=10.0, n_dynamic=0), FP)
        world = World.build(scene.voxels, FP)
        state = new_state(world, scene.start, scene.goal)
        counts = [state.known.unknown_count]
        for _ in range(40):
            _, state = fusion_step(world, state, VOParams(), FP)
            counts.append(state.known.unknown_count)
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert counts[-1] < counts[0]


class TestRunEpisode:
    def test_goal_at_start(self, open10):
        run = run_episode(open10, Pose(5, 5), (5.0, 5.0))
        assert run.outcome == SUCCESS and len(run.trajectory) == 1

    def test_one_step_timeout(self, open10):
        run = run_episode(open10, Pose(1, 5), (9.0, 5.0), planner=PlannerConfig(max_steps=1))
        assert run.outcome == TIMEOUT and len(run.trajectory) == 2

    def test_start_in_collision(self, open10):
        with pytest.raises(ConfigurationError):
            run_episode(open10, Pose(0.1, 5.0), (9.0, 5.0), footprint=FP)

    def test_open_map_near_straight(self):
        world = open_world(400)
        start, goal = Pose(2.0, 10.0, 0.3), (18.0, 12.0)
        run = run_episode(world, start, goal, (), VOParams(), FP)
        assert run.outcome == SUCCESS
        pos = run.trajectory.positions()
        length = np.hypot(*np.diff(pos, axis=0).T).sum()
        assert length <= 1.3 * math.dist(start.position, goal)

    def test_trajectory_consistent_with_controls(self, open10):
        run = run_episode(open10, Pose(2, 2, 1.0), (8.0, 7.0), (), VOParams(), FP)
        tr = run.trajectory
        assert len(tr.controls) == len(tr.poses) - 1
        for p, u, q in zip(tr.poses, tr.controls, tr.poses[1:]):
            c, s = math.cos(p.yaw), math.sin(p.yaw)
            assert q.x == pytest.approx(p.x + (c * u.vx - s * u.vy) * tr.dt, abs=1e-12)
            assert q.y == pytest.approx(p.y + (s * u.vx + c * u.vy) * tr.dt, abs=1e-12)
            assert wrap_angle(q.yaw - p.yaw - u.omega * tr.dt) == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self):
        scene = generate_scene(11, SceneParams(size=10.0), FP)
        world = World.build(scene.voxels, FP)
        a = run_episode(world, scene.start, scene.goal, scene.dynamic, VOParams(), FP)
        b = run_episode(World.build(scene.voxels, FP), scene.start, scene.goal, scene.dynamic, VOParams(), FP)
        assert a.outcome == b.outcome
        assert a.trajectory.poses == b.trajectory.poses

    @pytest.mark.parametrize("seed", range(4))
    def test_static_safety_without_dynamics(self, seed):
        scene = generate_scene(seed, SceneParams(size=10.0, n_dynamic=0), FP)
        run = run_episode(World.build(scene.voxels, FP), scene.start, scene.goal, (), VOParams(), FP,
                          planner=PlannerConfig(max_steps=300))
        assert run.outcome in (SUCCESS, TIMEOUT)
        assert run.static_collisions == 0 and run.unsafe_selections == 0


class TestFootprintOverlap:
    def test_cell_touching_corner(self):
        cells = np.zeros((20, 20), np.uint8)
        cells[10, 14] = 1  # spans x in [0.70, 0.75]
        t = TraversabilityMap(GridMeta(20, 20), cells)
        assert footprint_hits_cells(Pose(0.52, 0.525), FP, t)
        assert not footprint_hits_cells(Pose(0.49, 0.525), FP, t)

    def test_rotated(self):
        cells = np.zeros((20, 20), np.uint8)
        cells[14, 10] = 1  # y in [0.70, 0.75]
        t = TraversabilityMap(GridMeta(20, 20), cells)
        assert footprint_hits_cells(Pose(0.525, 0.52, math.pi / 2), FP, t)
        assert not footprint_hits_cells(Pose(0.525, 0.52, 0.0), FP, t)

    def test_disc(self):
        o = ObstacleState((0.5, 0.0), (0.0, 0.0), 0.31)
        assert footprint_hits_disc(Pose(0, 0), FP, o)
        assert not footprint_hits_disc(Pose(0, 0), FP, ObstacleState((0.5, 0.0), (0.0, 0.0), 0.29))


def line_traj(poses):
    return Trajectory(poses, 0.1, [Control()] * (len(poses) - 1))


class TestSamples:
    def test_stationary(self):
        s = emit_samples(line_traj([Pose(1, 2, 0.3)] * 6), None, M=3)
        assert len(s) == 3 and all(np.all(x.waypoints == 0) for x in s)

    def test_translation(self):
        s = emit_samples(line_traj([Pose(float(i), 0.0) for i in range(5)]), None, M=3)
        assert np.allclose(s[0].waypoints, [[1, 0, 0], [2, 0, 0], [3, 0, 0]])
        assert [x.t for x in s] == [0, 1]

    def test_rotated_anchor(self):
        s = emit_samples(line_traj([Pose(0, 0, math.pi / 2), Pose(0, 1, math.pi / 2)]), None, M=1)
        assert np.allclose(s[0].waypoints, [[1, 0, 0]], atol=1e-12)

    def test_short_trajectory_skips(self):
        assert emit_samples(line_traj([Pose(0, 0)] * 3), None, M=3) == []

    def test_stride(self):
        s = emit_samples(line_traj([Pose(float(i), 0.0) for i in range(10)]), None, M=2, stride=3)
        assert [x.t for x in s] == [0, 3, 6]

    def test_bad_horizon(self):
        with pytest.raises(DomainError):
            emit_samples(line_traj([Pose(0, 0)] * 3), None, M=0)

    def test_crop_attached(self):
        vox = VoxelGrid(GridMeta(100, 100, 2), np.zeros((2, 100, 100), np.uint8))
        s = emit_samples(line_traj([Pose(2.0, 2.0)] * 3), vox, M=1)
        assert s[0].crop.cells.shape == (2, 80, 120)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-10, 10)), min_size=2, max_size=12))
    def test_round_trip(self, raw):
        poses = [Pose(*p) for p in raw]
        anchor, rest = poses[0], poses[1:]
        back = from_egocentric(anchor, to_egocentric(anchor, rest))
        for p, q in zip(rest, back):
            assert abs(p.x - q.x) < 1e-9 and abs(p.y - q.y) < 1e-9
            assert abs(wrap_angle(p.yaw - q.yaw)) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-math.pi, math.pi), st.floats(-5, 5), st.floats(-5, 5))
    def test_homogeneous_transform(self, yaw, dx, dy):
        anchor = Pose(1.0, -2.0, yaw)
        T = np.array([[math.cos(yaw), -math.sin(yaw), 1.0], [math.sin(yaw), math.cos(yaw), -2.0], [0, 0, 1]])
        exp = np.linalg.solve(T, [1.0 + dx, -2.0 + dy, 1.0])[:2]
        got = to_egocentric(anchor, [Pose(1.0 + dx, -2.0 + dy, yaw)])[0]
        assert np.allclose(got[:2], exp, atol=1e-9) and abs(got[2]) < 1e-12


class TestTrajError:
    def test_identical(self):
        w = np.random.default_rng(0).normal(size=(8, 3))
        assert traj_error(w, w) == 0.0

    def test_example(self):
        a = np.zeros((4, 3))
        b = a.copy()
        b[2] = (3, 4, 0)
        assert traj_error(a, b) == 25.0

    def test_mismatch(self):
        with pytest.raises(DomainError):
            traj_error(np.zeros((4, 3)), np.zeros((5, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 10))
    def test_elementwise_sum(self, seed, m):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(m, 3)), rng.normal(size=(m, 3))
        exp = sum((float(b[i, j]) - float(a[i, j])) ** 2 for i in range(m) for j in range(3))
        assert traj_error(a, b) == pytest.approx(exp, rel=1e-12)
