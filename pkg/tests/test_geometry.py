import math

import numpy as np
import pytest
from hypothesis import given
from scipy.spatial.transform import Rotation

from coskill.errors import DuplicateTimestamp
from coskill.geometry import (
    Pose,
    TimedPose,
    compose,
    estimate_twists,
    exp_rotation,
    log_rotation,
    quat_mul,
    relative_pose,
    yaw_quat,
)

from conftest import poses, random_pose, random_quat


def homogeneous(p: Pose) -> np.ndarray:
    # independent of the package's quaternion code: scipy uses (x, y, z, w)
    w, x, y, z = p.orientation
    m = np.eye(4)
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = p.position
    return m


def test_identity_compose(rng):
    p = random_pose(rng)
    assert compose(Pose.identity(), p).allclose(p)
    assert compose(p, Pose.identity()).allclose(p)


def test_inverse_compose(rng):
    for _ in range(20):
        p = random_pose(rng)
        assert compose(p, p.inverse()).allclose(Pose.identity(), atol=1e-9)


def test_compose_matches_matrix_oracle(rng):
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        got = compose(a, b).matrix()
        want = homogeneous(a) @ homogeneous(b)
        assert np.max(np.abs(got - want)) < 1e-9


def test_canonical_sign_and_norm(rng):
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        c = compose(a, b)
        assert c.orientation[0] >= 0
        assert abs(np.linalg.norm(c.orientation) - 1.0) < 1e-9


def test_relative_pose_cases(rng):
    p = random_pose(rng)
    assert relative_pose(p, p).allclose(Pose.identity())
    assert relative_pose(Pose.identity(), p).allclose(p)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        assert compose(a, relative_pose(a, b)).allclose(b, atol=1e-9)


def test_log_rotation_cases():
    assert np.allclose(log_rotation([1, 0, 0, 0]), 0)
    q = [math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)]
    assert np.allclose(log_rotation(q), [0, 0, math.pi / 2], atol=1e-9)


def test_log_rotation_pi_convention():
    r = log_rotation([0.0, 0.0, -1.0, 0.0])
    assert np.allclose(r, [0, math.pi, 0])
    r = log_rotation([0.0, -0.6, 0.8, 0.0])
    assert np.isclose(np.linalg.norm(r), math.pi)
    assert r[1] > 0


def test_log_exp_round_trip(rng):
    for _ in range(200):
        q = random_quat(rng)
        back = exp_rotation(log_rotation(q))
        assert min(np.linalg.norm(back - q), np.linalg.norm(back + q)) < 1e-9


def test_log_matches_scipy_rotvec(rng):
    for _ in range(50):
        q = random_quat(rng)
        w, x, y, z = q
        want = Rotation.from_quat([x, y, z, w]).as_rotvec()
        assert np.allclose(log_rotation(q), want, atol=1e-9)


@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert left.allclose(right, atol=1e-8)


@given(poses(), poses())
def test_relative_pose_mutual_inverse(a, b):
    assert compose(relative_pose(a, b), relative_pose(b, a)).allclose(Pose.identity(), atol=1e-8)


@given(poses())
def test_log_norm_bounded(p):
    assert np.linalg.norm(log_rotation(p.orientation)) <= math.pi + 1e-12


def _traj(positions, quats, dt=0.05):
    return [TimedPose(i * dt, Pose(p, q)) for i, (p, q) in enumerate(zip(positions, quats))]


def test_twists_constant_pose():
    traj = _traj([[1, 2, 3]] * 10, [[1, 0, 0, 0]] * 10)
    for tw in estimate_twists(traj):
        assert np.allclose(tw.linear, 0) and np.allclose(tw.angular, 0)


def test_twists_uniform_linear():
    n = 30
    pos = [[0.1 * i * 0.05, 0, 0] for i in range(n)]
    tw = estimate_twists(_traj(pos, [[1, 0, 0, 0]] * n))
    assert len(tw) == n
    for t in tw[3:-3]:
        assert np.allclose(t.linear, [0.1, 0, 0], atol=1e-6)


def test_twists_uniform_rotation():
    # synthetic generator: yaw advancing at 0.5 rad/s
    n, dt = 40, 0.05
    quats = [yaw_quat(0.5 * i * dt) for i in range(n)]
    tw = estimate_twists(_traj([[0, 0, 0]] * n, quats, dt))
    for t in tw[3:-3]:
        assert np.allclose(t.angular, [0, 0, 0.5], atol=1e-3)


def test_twists_translation_invariant(rng):
    n = 25
    pos = np.cumsum(rng.normal(scale=0.01, size=(n, 3)), axis=0)
    quats = [random_quat(rng) for _ in range(n)]
    a = estimate_twists(_traj(pos, quats))
    b = estimate_twists(_traj(pos + np.array([5.0, -3.0, 2.0]), quats))
    for x, y in zip(a, b):
        assert np.allclose(x.linear, y.linear, atol=1e-9)


def test_duplicate_timestamp():
    traj = [TimedPose(0.0, Pose.identity()), TimedPose(0.0, Pose.identity())]
    with pytest.raises(DuplicateTimestamp):
        estimate_twists(traj)


def test_quat_mul_is_hamilton():
    i = np.array([0, 1, 0, 0.0])
    j = np.array([0, 0, 1, 0.0])
    assert np.allclose(quat_mul(i, j), [0, 0, 0, 1])
