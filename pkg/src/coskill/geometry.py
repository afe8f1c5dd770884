"""SE(3) poses, quaternion algebra and finite-difference twists.

Quaternions are stored as ``(w, x, y, z)`` everywhere. Poses keep their
quaternion unit-norm with ``w >= 0``; when ``w == 0`` the sign is fixed so
that the largest-magnitude vector component is positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DuplicateTimestamp

_NORM_TOL = 1e-12


# --------------------------------------------------------------------------
# quaternion primitives (vectorised over leading axes)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalise (only if needed) and fix the double-cover sign."""
    q = np.array(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(np.abs(n - 1.0) > _NORM_TOL):
        q = q / n
    if q.ndim == 1:
        return _canon_sign(q)
    return np.apply_along_axis(_canon_sign, -1, q)


def _canon_sign(q: np.ndarray) -> np.ndarray:
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        v = q[1:]
        i = int(np.argmax(np.abs(v)))
        if v[i] < 0.0:
            return -q
    return q


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def exp_rotation(rotvec: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) to a canonical unit quaternion."""
    r = np.asarray(rotvec, float)
    theta = math.sqrt(float(r @ r))
    half = 0.5 * theta
    if theta < 1e-8:
        s = 0.5 - theta * theta / 48.0
    else:
        s = math.sin(half) / theta
    return canonical_quat(np.array([math.cos(half), s * r[0], s * r[1], s * r[2]]))


def log_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion to rotation vector with angle in [0, pi]."""
    q = canonical_quat(q)
    w = q[0]
    v = q[1:]
    n = math.sqrt(float(v @ v))
    if n < 1e-12:
        return 2.0 * v / max(w, 1e-300)
    angle = 2.0 * math.atan2(n, w)
    return v * (angle / n)


def exp_rotation_batch(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, float)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    s = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * theta) / safe)
    q = np.concatenate([np.cos(0.5 * theta), s * r], axis=-1)
    return np.where(q[..., :1] < 0, -q, q)


def log_rotation_batch(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, float)
    q = np.where(q[..., :1] < 0, -q, q)
    w = q[..., :1]
    v = q[..., 1:]
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    small = n < 1e-12
    safe = np.where(small, 1.0, n)
    scale = np.where(small, 2.0 / np.maximum(w, 1e-300), 2.0 * np.arctan2(n, w) / safe)
    return v * scale


def mean_rotation(quats: np.ndarray, max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Intrinsic (Karcher) mean of unit quaternions."""
    quats = np.asarray(quats, float)
    mean = canonical_quat(quats[0])
    for _ in range(max_iter):
        resid = log_rotation_batch(quat_mul(quat_conj(mean)[None, :], quats))
        step = resid.mean(axis=0)
        mean = canonical_quat(quat_mul(mean, exp_rotation(step)))
        if float(np.linalg.norm(step)) < tol:
            break
    return mean


# --------------------------------------------------------------------------
# value types


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = canonical_quat(np.array(self.orientation, dtype=float).reshape(4))
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        from scipy.spatial.transform import Rotation

        x, y, z, w = Rotation.from_matrix(m[:3, :3]).as_quat()
        return cls(m[:3, 3], [w, x, y, z])

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, point)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.position, other.position)
            and np.array_equal(self.orientation, other.orientation)
        )

    def __hash__(self):
        return hash((self.position.tobytes(), self.orientation.tobytes()))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        dq = abs(float(self.orientation @ other.orientation))
        return bool(np.allclose(self.position, other.position, atol=atol) and 1.0 - dq <= atol)

    def __repr__(self):
        p = ", ".join(f"{v:.4g}" for v in self.position)
        q = ", ".join(f"{v:.4g}" for v in self.orientation)
        return f"Pose(p=[{p}], q=[{q}])"


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(3)
        ang = np.array(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def norms(self) -> tuple[float, float]:
        return float(np.linalg.norm(self.linear)), float(np.linalg.norm(self.angular))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class TimedPose:
    t: float
    pose: Pose

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("timestamps must be non-negative")


# --------------------------------------------------------------------------
# operations


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a ∘ b``."""
    return Pose(a.apply(b.position), quat_mul(a.orientation, b.orientation))


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Pose of frame ``b`` expressed in frame ``a``."""
    qi = quat_conj(a.orientation)
    return Pose(quat_rotate(qi, b.position - a.position), quat_mul(qi, b.orientation))


def relative_pose_arrays(pa, qa, pb, qb):
    """Vectorised ``relative_pose`` over (T,3)/(T,4) arrays."""
    qi = quat_conj(qa)
    return quat_rotate(qi, pb - pa), quat_mul(qi, qb)


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average along axis 0; the window shrinks at the ends."""
    if window <= 1:
        return np.array(x, dtype=float)
    if window % 2 == 0:
        raise ValueError("smoothing window must be odd")
    x = np.asarray(x, float)
    half = window // 2
    c = np.cumsum(np.concatenate([np.zeros((1,) + x.shape[1:]), x]), axis=0)
    n = len(x)
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx + half + 1, 0, n)
    counts = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (c[hi] - c[lo]) / counts


def twists_from_arrays(t, pos, quat, smoothing_window: int = 5):
    """Finite-difference twists for arrays ``t`` (T,), ``pos`` (T,3), ``quat`` (T,4).

    Linear velocity is expressed in the trajectory's frame; angular velocity
    in the body frame (log of the relative rotation over the difference
    interval).
    """
    t = np.asarray(t, float)
    pos = np.asarray(pos, float)
    quat = np.asarray(quat, float)
    n = len(t)
    if n < 2:
        raise ValueError("need at least two samples")
    dt = np.diff(t)
    if np.any(dt <= 0):
        i = int(np.argmax(dt <= 0))
        raise DuplicateTimestamp(f"non-increasing timestamp at index {i + 1} (t={t[i + 1]})")
    lo = np.concatenate([[0], np.arange(0, n - 2), [n - 2]])
    hi = np.concatenate([[1], np.arange(2, n), [n - 1]])
    span = (t[hi] - t[lo])[:, None]
    lin = (pos[hi] - pos[lo]) / span
    ang = log_rotation_batch(quat_mul(quat_conj(quat[lo]), quat[hi])) / span
    return moving_average(lin, smoothing_window), moving_average(ang, smoothing_window)


def estimate_twists(traj: Sequence[TimedPose], smoothing_window: int = 5) -> list[Twist]:
    if len(traj) < 2:
        raise ValueError("need at least two samples")
    t = np.array([s.t for s in traj])
    pos = np.array([s.pose.position for s in traj])
    quat = np.array([s.pose.orientation for s in traj])
    lin, ang = twists_from_arrays(t, pos, quat, smoothing_window)
    return [Twist(l, a) for l, a in zip(lin, ang)]


def pose_to_json(p: Pose) -> dict:
    return {"p": [float(v) for v in p.position], "q": [float(v) for v in p.orientation]}


def pose_from_json(d: dict) -> Pose:
    return Pose(d["p"], d["q"])


def yaw_quat(yaw: float) -> np.ndarray:
    return np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
