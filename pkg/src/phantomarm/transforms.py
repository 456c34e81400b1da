"""Rigid-body transforms on SE(3) backed by unit quaternions.

Conventions used across the package:

* Quaternions are stored ``[w, x, y, z]`` with unit norm.
* A ``RigidTransform`` named "A to B" is the pose of frame B expressed in
  frame A; ``apply`` maps B-frame points into A-frame coordinates, and
  ``compose(a_to_b, b_to_c)`` yields "A to C".
* Translations are meters, angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
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
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` (...,3) by quaternions ``q`` (...,4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    # v' = v + w*t + u x t with t = 2 (u x v); cross products written out
    # because np.cross dominates profiles on small operands
    w, ux, uy, uz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return np.stack(
        [
            vx + w * tx + (uy * tz - uz * ty),
            vy + w * ty + (uz * tx - ux * tz),
            vz + w * tz + (ux * ty - uy * tx),
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion rotating by ``angle`` about ``axis``.

    ``angle`` may be a scalar or an array; the axis must have unit norm.
    """
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)
    w = np.cos(half)
    xyz = axis * s[..., None]
    return np.concatenate([w[..., None], xyz], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns [w, x, y, z] with w >= 0."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in [0, pi] encoded by a unit quaternion."""
    q = np.asarray(q, dtype=float)
    return float(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def rotation_error(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle between two rotations given as quaternions."""
    return quat_angle(quat_mul(quat_conj(qa), qb))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: unit quaternion [w,x,y,z] plus translation in meters."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        p = np.asarray(self.pos, dtype=float).reshape(3)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n:.6g} too far from 1")
        if abs(n - 1.0) > QUAT_NORM_TOL:
            q = q / n
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("non-finite transform components")
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "pos", p)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_axis_angle(axis, angle: float, pos=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(quat_from_axis_angle(np.asarray(axis, dtype=float), angle), np.asarray(pos, dtype=float))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return RigidTransform(quat_from_matrix(m[:3, :3]), m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.quat)
        m[:3, 3] = self.pos
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self is "A to B", other is "B to C"; result is "A to C"."""
        q = quat_normalize(quat_mul(self.quat, other.quat))
        p = self.pos + quat_rotate(self.quat, other.pos)
        return RigidTransform(q, p)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        qi = quat_conj(self.quat)
        return RigidTransform(qi, -quat_rotate(qi, self.pos))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points from the child frame into the parent frame."""
        return quat_rotate(self.quat, np.asarray(points, dtype=float)) + self.pos

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            np.linalg.norm(self.pos - other.pos) <= tol
            and rotation_error(self.quat, other.quat) <= tol
        )

    def to_dict(self) -> dict:
        return {"quat": [float(v) for v in self.quat], "pos": [float(v) for v in self.pos]}

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["quat"], dtype=float), np.asarray(d["pos"], dtype=float))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit quaternion (Shoemake)."""
    u1, u2, u3 = rng.uniform(size=3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.array(
        [
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
            b * np.cos(2 * np.pi * u3),
        ]
    )


def random_transform(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))
