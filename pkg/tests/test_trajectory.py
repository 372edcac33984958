from __future__ import annotations

import math

import numpy as np
import pytest

from toolsmith.errors import InvalidPlan
from toolsmith.geometry import quat_to_matrix
from toolsmith.trajectory import (
    ActionPlan,
    Waypoint,
    densify,
    euler_to_quaternion,
    path_length,
    quaternion_to_euler,
    slerp,
)


def _plan(rows):
    return ActionPlan.from_array(rows)


def test_from_array_six_and_seven_dim():
    p6 = _plan([[0, 0, 0.3, 0, 0, 0], [0.1, 0, 0.3, 0, 0, 0]])
    assert not p6.uses_gripper
    p7 = _plan([[0, 0, 0.3, 0, 0, 0, 0], [0.1, 0, 0.3, 0, 0, 0, 1]])
    assert p7.uses_gripper
    assert p7.waypoints[1].gripper == 1
    assert p7.to_array() == [[0, 0, 0.3, 0, 0, 0, 0], [0.1, 0, 0.3, 0, 0, 0, 1]]


def test_bad_rows_rejected():
    with pytest.raises(InvalidPlan):
        _plan([[0, 0, 0, 0, 0]])  # 5 numbers
    with pytest.raises(InvalidPlan):
        _plan([[0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, 1]])  # mixed dims
    with pytest.raises(InvalidPlan):
        _plan([[0, 0, float("nan"), 0, 0, 0]])
    with pytest.raises(InvalidPlan):
        _plan([[0, 0, 0, 0, 0, 0, 0.5]])  # non-binary gripper
    with pytest.raises(InvalidPlan):
        _plan([])


def test_single_waypoint_densifies_to_single_sample():
    traj = densify(_plan([[0.1, 0.2, 0.3, 0, 0, 0]]))
    assert len(traj) == 1
    assert path_length(traj) == 0.0


def test_identical_waypoints_give_constant_trajectory():
    traj = densify(_plan([[0.1, 0, 0.3, 0, 0, 1.0], [0.1, 0, 0.3, 0, 0, 1.0]]))
    positions = {tuple(s.pose.position) for s in traj.samples}
    assert len(positions) == 1
    assert path_length(traj) == pytest.approx(0.0, abs=1e-12)


def test_midpoint_of_yaw_quarter_turn():
    plan = _plan([[0, 0, 0, 0, 0, 0], [0.1, 0, 0, 0, 0, math.pi / 2]])
    traj = densify(plan, step_max=0.05, angle_step_max=math.pi / 4)
    assert len(traj) == 3
    mid = traj.samples[1]
    assert np.allclose(mid.pose.position, [0.05, 0, 0], atol=1e-12)
    assert np.allclose(quaternion_to_euler(mid.pose.rotation),
                       [0, 0, math.pi / 4], atol=1e-9)


def test_densify_obeys_both_step_bounds():
    rng = np.random.default_rng(9)
    for _ in range(20):
        rows = [
            [*rng.uniform(-0.4, 0.4, 3), *rng.uniform(-math.pi, math.pi, 3)]
            for _ in range(rng.integers(2, 5))
        ]
        traj = densify(_plan(rows), step_max=0.01, angle_step_max=math.radians(2))
        for a, b in zip(traj.samples, traj.samples[1:]):
            dist = np.linalg.norm(b.pose.position - a.pose.position)
            assert dist <= 0.01 + 1e-9
            dot = abs(float(a.pose.rotation @ b.pose.rotation))
            angle = 2 * math.acos(min(1.0, dot))
            assert angle <= math.radians(2) + 1e-9


def test_gripper_bit_holds_until_segment_end():
    plan = _plan([[0, 0, 0.3, 0, 0, 0, 0], [0.02, 0, 0.3, 0, 0, 0, 1]])
    traj = densify(plan, step_max=0.005)
    bits = [s.gripper for s in traj.samples]
    assert bits[0] == 0
    assert bits[-1] == 1
    assert all(b == 0 for b in bits[:-1])


def test_path_length_straight_segment_subdivision_invariant():
    plan = _plan([[0, 0, 0, 0, 0, 0], [0, 0, 0.3, 0, 0, 0]])
    lengths = [
        path_length(densify(plan, step_max=s)) for s in (0.1, 0.05, 0.01, 0.005)
    ]
    for length in lengths:
        assert length == pytest.approx(0.3, abs=1e-9)


def test_path_length_l_path():
    plan = _plan([
        [0, 0, 0, 0, 0, 0],
        [0.2, 0, 0, 0, 0, 0],
        [0.2, 0.1, 0, 0, 0, 0],
    ])
    assert path_length(densify(plan)) == pytest.approx(0.3, abs=1e-9)


def test_path_length_refinement_monotone_on_piecewise_linear_paths():
    rng = np.random.default_rng(10)
    for _ in range(20):
        rows = [
            [*rng.uniform(-0.3, 0.3, 3), *rng.uniform(-1, 1, 3)]
            for _ in range(3)
        ]
        plan = _plan(rows)
        coarse = path_length(densify(plan, step_max=0.02))
        fine = path_length(densify(plan, step_max=0.01))
        assert abs(coarse - fine) < 1e-9


def test_path_length_at_least_endpoint_distance():
    rng = np.random.default_rng(12)
    for _ in range(50):
        rows = [
            [*rng.uniform(-0.4, 0.4, 3), *rng.uniform(-1, 1, 3)]
            for _ in range(rng.integers(1, 6))
        ]
        traj = densify(_plan(rows))
        first = traj.samples[0].pose.position
        last = traj.samples[-1].pose.position
        assert path_length(traj) >= np.linalg.norm(last - first) - 1e-9


def test_euler_quaternion_examples():
    assert np.allclose(euler_to_quaternion([0, 0, 0]), [1, 0, 0, 0])
    half_turn = euler_to_quaternion([0, 0, math.pi])
    assert np.allclose(half_turn, [0, 0, 0, 1], atol=1e-12) or np.allclose(
        half_turn, [0, 0, 0, -1], atol=1e-12
    )
    assert np.allclose(quaternion_to_euler([0, 0, 0, 1]), [0, 0, math.pi], atol=1e-9)


def test_euler_round_trip_property():
    rng = np.random.default_rng(13)
    for _ in range(10_000):
        rpy = rng.uniform(-math.pi, math.pi, 3)
        rpy[1] = rng.uniform(-math.pi / 2 + 0.03, math.pi / 2 - 0.03)
        assert np.max(np.abs(quaternion_to_euler(euler_to_quaternion(rpy)) - rpy)) < 1e-9


def test_slerp_equal_rotations_for_antipodal_inputs():
    rng = np.random.default_rng(14)
    for _ in range(100):
        q0 = euler_to_quaternion(rng.uniform(-3, 3, 3))
        q1 = euler_to_quaternion(rng.uniform(-3, 3, 3))
        for t in (0.0, 0.3, 0.7, 1.0):
            a = quat_to_matrix(slerp(q0, q1, t))
            b = quat_to_matrix(slerp(q0, -np.asarray(q1), t))
            assert np.allclose(a, b, atol=1e-9)


def test_densify_rejects_bad_step_bounds():
    plan = _plan([[0, 0, 0, 0, 0, 0]])
    with pytest.raises(InvalidPlan):
        densify(plan, step_max=0.0)
    with pytest.raises(InvalidPlan):
        densify(plan, angle_step_max=-1.0)
