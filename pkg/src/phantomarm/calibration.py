"""Frame-graph calibration linking cameras, a fiducial tag, and the robot
base so overlay rendering stays aligned when a camera moves.

Acquisition happens in a fixed order: a hand-eye result gives base to
fixed-camera first, a tag observation from the fixed camera then anchors the
tag in the base frame, and only after that can observations from a floating
camera place that camera in the base frame. Requesting the later steps
early raises ``AcquisitionOrderError`` rather than guessing.

Transforms follow the package convention: "A to B" is the pose of frame B in
frame A (see ``transforms``). Detecting tag pixels is out of scope; tag
poses arrive as ``TagObservation`` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import (
    RigidTransform,
    compose,
    invert,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    rotation_error,
)

BASE = "base"
FIXED_CAM = "fixed_cam"
FLOAT_CAM = "float_cam"
TAG = "tag"
WORLD = "world"


class FrameMismatchError(ValueError):
    """Observation came from an unexpected observer frame."""


class AcquisitionOrderError(RuntimeError):
    """A chain step was requested before its prerequisite transform existed."""


class BehindCameraError(ValueError):
    """Point has non-positive depth in the camera frame."""


@dataclass(frozen=True)
class TagObservation:
    observer: str
    pose: RigidTransform  # observer to tag
    timestamp: float = 0.0
    noise_sigma: float = 0.0  # synthetic-harness annotation only


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float


def solve_tag_to_base(hand_eye: RigidTransform, obs: TagObservation,
                      fixed_cam: str = FIXED_CAM) -> RigidTransform:
    """Anchor the tag in the base frame through the fixed camera.

    ``hand_eye`` is base to fixed-camera; the observation must come from
    that camera.
    """
    if obs.observer != fixed_cam:
        raise FrameMismatchError(f"expected observation from '{fixed_cam}', got '{obs.observer}'")
    return compose(hand_eye, obs.pose)


def solve_float_to_base(tag_to_base: RigidTransform, obs: TagObservation,
                        float_cam: str = FLOAT_CAM) -> RigidTransform:
    """Place a floating camera in the base frame via the shared tag."""
    if obs.observer != float_cam:
        raise FrameMismatchError(f"expected observation from '{float_cam}', got '{obs.observer}'")
    return compose(tag_to_base, invert(obs.pose))


def project_point(intrinsics: CameraIntrinsics, base_to_cam: RigidTransform,
                  point_base) -> tuple[float, float]:
    """Pinhole projection of a base-frame point through a posed camera.

    ``base_to_cam`` is the camera pose in the base frame; the camera looks
    along its +z axis.
    """
    p = invert(base_to_cam).apply(np.asarray(point_base, dtype=float))
    if p[2] <= 0.0:
        raise BehindCameraError(f"point depth {p[2]:.6g} is not positive")
    return (
        float(intrinsics.fx * p[0] / p[2] + intrinsics.cx),
        float(intrinsics.fy * p[1] / p[2] + intrinsics.cy),
    )


class FrameGraph:
    """Named frames joined by transforms with provenance tags.

    Edges are stored directed; the reverse direction is always the exact
    inverse. Derived edges record the chain results and gate the
    acquisition order.
    """

    PROVENANCES = ("hand_eye", "tag_observation", "derived", "declared")

    def __init__(self):
        self.frames: set[str] = set()
        self._edges: dict[tuple[str, str], tuple[RigidTransform, str]] = {}

    def add_edge(self, a: str, b: str, transform: RigidTransform, provenance: str):
        if provenance not in self.PROVENANCES:
            raise ValueError(f"unknown provenance '{provenance}'")
        self.frames.update((a, b))
        self._edges[(a, b)] = (transform, provenance)
        self._edges[(b, a)] = (transform.inverse(), provenance)

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self._edges

    def get(self, a: str, b: str) -> RigidTransform:
        if a == b:
            return RigidTransform.identity()
        try:
            return self._edges[(a, b)][0]
        except KeyError:
            raise KeyError(f"no edge {a} -> {b} in frame graph") from None

    def provenance(self, a: str, b: str) -> str:
        return self._edges[(a, b)][1]

    def edges(self) -> dict[tuple[str, str], tuple[RigidTransform, str]]:
        return dict(self._edges)

    # ---- acquisition chain -------------------------------------------
    def set_hand_eye(self, base_to_fixed: RigidTransform, base: str = BASE,
                     fixed_cam: str = FIXED_CAM):
        self.add_edge(base, fixed_cam, base_to_fixed, "hand_eye")

    def observe_tag_from_fixed(self, obs: TagObservation, base: str = BASE,
                               tag: str = TAG) -> RigidTransform:
        if not self.has_edge(base, obs.observer) or self.provenance(base, obs.observer) != "hand_eye":
            raise AcquisitionOrderError("hand-eye transform must be set before anchoring the tag")
        self.add_edge(obs.observer, tag, obs.pose, "tag_observation")
        tag_to_base = solve_tag_to_base(self.get(base, obs.observer), obs, fixed_cam=obs.observer)
        self.add_edge(base, tag, tag_to_base, "derived")
        return tag_to_base

    def observe_tag_from_float(self, obs: TagObservation, base: str = BASE,
                               tag: str = TAG) -> RigidTransform:
        if not self.has_edge(base, tag):
            raise AcquisitionOrderError(
                "tag must be anchored from the fixed camera before placing a floating camera")
        self.add_edge(obs.observer, tag, obs.pose, "tag_observation")
        float_to_base = solve_float_to_base(self.get(base, tag), obs, float_cam=obs.observer)
        self.add_edge(base, obs.observer, float_to_base, "derived")
        return float_to_base

    def snapshot(self) -> dict:
        """JSON-friendly map of base-rooted frame poses."""
        out = {}
        for (a, b), (t, _) in self._edges.items():
            if a == BASE:
                out[b] = t.to_dict()
        return out


# ----------------------------------------------------------------------
# Synthetic harness
# ----------------------------------------------------------------------

@dataclass
class GroundTruthScene:
    """Random consistent set of frame poses for calibration tests."""

    base_to_fixed: RigidTransform
    base_to_tag: RigidTransform
    base_to_float: RigidTransform

    def fixed_cam_sees_tag(self) -> RigidTransform:
        return compose(invert(self.base_to_fixed), self.base_to_tag)

    def float_cam_sees_tag(self) -> RigidTransform:
        return compose(invert(self.base_to_float), self.base_to_tag)


def random_scene(rng: np.random.Generator, translation_scale: float = 1.0) -> GroundTruthScene:
    from .transforms import random_transform

    return GroundTruthScene(
        base_to_fixed=random_transform(rng, translation_scale),
        base_to_tag=random_transform(rng, translation_scale),
        base_to_float=random_transform(rng, translation_scale),
    )


def perturb_transform(t: RigidTransform, rng: np.random.Generator,
                      sigma_rot: float, sigma_trans: float) -> RigidTransform:
    """Isotropic Gaussian noise on rotation (axis-angle) and translation."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, sigma_rot)
    dq = quat_from_axis_angle(axis, angle)
    return RigidTransform(
        quat_normalize(quat_mul(dq, t.quat)),
        t.pos + rng.normal(0.0, sigma_trans, 3),
    )


def observe_tag(scene: GroundTruthScene, observer: str, rng: np.random.Generator | None = None,
                sigma_rot: float = 0.0, sigma_trans: float = 0.0,
                timestamp: float = 0.0) -> TagObservation:
    if observer == FIXED_CAM:
        pose = scene.fixed_cam_sees_tag()
    elif observer == FLOAT_CAM:
        pose = scene.float_cam_sees_tag()
    else:
        raise FrameMismatchError(f"unknown observer '{observer}'")
    if rng is not None and (sigma_rot > 0.0 or sigma_trans > 0.0):
        pose = perturb_transform(pose, rng, sigma_rot, sigma_trans)
    return TagObservation(observer, pose, timestamp, noise_sigma=sigma_rot)


def float_recovery_error(scene: GroundTruthScene, recovered: RigidTransform) -> tuple[float, float]:
    """(rotation angle, translation distance) error of a recovered float pose."""
    rot_err = rotation_error(scene.base_to_float.quat, recovered.quat)
    trans_err = float(np.linalg.norm(scene.base_to_float.pos - recovered.pos))
    return rot_err, trans_err
