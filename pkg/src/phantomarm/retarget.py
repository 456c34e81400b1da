"""Human-to-robot retargeting: wrist pose to end-effector target, and the
per-joint linear map from 27 glove channels onto robot hand joints.

Glove channel layout (27 channels, radians). The ordering is a convention of
this package, documented here because glove hardware vendors all differ:

    channels 0..19   five fingers (thumb, index, middle, ring, pinky), four
                     channels each: [MCP flexion, PIP flexion, DIP flexion,
                     abduction]
    channels 20..26  wrist/palm extras: wrist flexion, wrist abduction,
                     palm arch, plus four spares

Each robot joint is driven by exactly one glove channel through
``f(x) = s * (x - b) * r`` with per-joint scale s > 0, bias b, and direction
r in {-1, +1}. The scale and bias are solved from the calibrated glove range
and the robot's joint limits so that range endpoints map onto the limits
exactly (swapped when r = -1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import KinematicModel
from .transforms import RigidTransform

GLOVE_CHANNELS = 27


class MappingError(ValueError):
    """Raised for degenerate calibration ranges or malformed mapping configs."""


@dataclass(frozen=True)
class WristSample:
    """Wrist pose in the declared world frame, with a stream timestamp."""

    timestamp: float
    pose: RigidTransform


@dataclass(frozen=True)
class GloveSample:
    timestamp: float
    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(-1)
        if a.shape[0] != GLOVE_CHANNELS:
            raise ValueError(f"glove sample must have {GLOVE_CHANNELS} channels, got {a.shape[0]}")
        if not np.all(np.isfinite(a)):
            raise ValueError("glove angles must be finite")
        object.__setattr__(self, "angles", a)


@dataclass(frozen=True)
class EndEffectorTarget:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion [w,x,y,z]
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("orientation must be a unit quaternion")
        object.__setattr__(self, "orientation", q / n)

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform(self.orientation, self.position)


def wrist_to_target(current: WristSample, wrist_origin: WristSample,
                    ee_origin: EndEffectorTarget) -> EndEffectorTarget:
    """Relative wrist position drives the end-effector position; orientation
    is taken from the wrist absolutely."""
    position = ee_origin.position + (current.pose.pos - wrist_origin.pose.pos)
    return EndEffectorTarget(position, current.pose.quat, current.timestamp)


@dataclass(frozen=True)
class MappingEntry:
    robot_joint: int
    glove_channel: int
    direction: int
    glove_min: float
    glove_max: float
    robot_min: float
    robot_max: float
    scale: float
    bias: float

    def apply(self, x: float) -> float:
        return self.scale * (x - self.bias) * self.direction


@dataclass(frozen=True)
class MappingTable:
    """One calibrated linear map per robot hand joint."""

    entries: tuple[MappingEntry, ...]

    def __post_init__(self):
        for e in self.entries:
            if e.scale <= 0:
                raise MappingError(f"joint {e.robot_joint}: scale must be positive")
            if e.direction not in (-1, 1):
                raise MappingError(f"joint {e.robot_joint}: direction must be -1 or +1")

    @property
    def n_joints(self) -> int:
        return len(self.entries)

    # cached vector form for the hot path
    @property
    def _vectors(self):
        if not hasattr(self, "_vec"):
            e = self.entries
            object.__setattr__(
                self,
                "_vec",
                (
                    np.array([x.glove_channel for x in e], dtype=int),
                    np.array([x.scale for x in e]),
                    np.array([x.bias for x in e]),
                    np.array([x.direction for x in e], dtype=float),
                    np.array([x.robot_min for x in e]),
                    np.array([x.robot_max for x in e]),
                ),
            )
        return self._vec


def build_mapping(correspondence, glove_ranges, robot_limits) -> MappingTable:
    """Solve scale and bias per joint from the range-endpoint constraints.

    ``correspondence``: iterable of (robot_joint, glove_channel, direction).
    ``glove_ranges``: per entry (min, max) of the calibrated glove channel.
    ``robot_limits``: per entry (lower, upper) of the robot joint.
    """
    entries = []
    for (joint, channel, direction), (gmin, gmax), (rmin, rmax) in zip(
        correspondence, glove_ranges, robot_limits
    ):
        if direction not in (-1, 1):
            raise MappingError(f"joint {joint}: direction must be -1 or +1")
        if not gmax > gmin:
            raise MappingError(f"joint {joint}: degenerate glove range [{gmin}, {gmax}]")
        if not rmax > rmin:
            raise MappingError(f"joint {joint}: degenerate robot range [{rmin}, {rmax}]")
        scale = (rmax - rmin) / (gmax - gmin)
        # endpoints map onto limits; for direction -1 the endpoints swap
        bias = gmin - rmin / scale if direction == 1 else gmin + rmax / scale
        entries.append(
            MappingEntry(
                robot_joint=int(joint),
                glove_channel=int(channel),
                direction=int(direction),
                glove_min=float(gmin),
                glove_max=float(gmax),
                robot_min=float(rmin),
                robot_max=float(rmax),
                scale=float(scale),
                bias=float(bias),
            )
        )
    return MappingTable(tuple(entries))


def map_hand(table: MappingTable, glove: GloveSample) -> np.ndarray:
    """Robot hand joint vector for one glove sample, clamped to the limits.

    Clamping only acts when the glove reading leaves its calibrated range.
    """
    channels, scale, bias, direction, rmin, rmax = table._vectors
    raw = scale * (glove.angles[channels] - bias) * direction
    return np.clip(raw, rmin, rmax)


# ----------------------------------------------------------------------
# Config file support
# ----------------------------------------------------------------------

def mapping_from_config(doc: dict, model: KinematicModel,
                        joint_offset: int = 0) -> MappingTable:
    """Build a table from a mapping config document.

    Robot limits come from the kinematic model; ``joint_offset`` shifts the
    config's hand joint indices into the model (nonzero when the hand rides
    on an arm).
    """
    try:
        raw = doc["entries"]
    except (KeyError, TypeError) as exc:
        raise MappingError(f"mapping config missing field: {exc}") from exc
    correspondence = []
    glove_ranges = []
    robot_limits = []
    for k, e in enumerate(raw):
        try:
            joint = int(e["robot_joint"])
            channel = int(e["glove_channel"])
            if not (0 <= channel < GLOVE_CHANNELS):
                raise MappingError(f"entry {k}: glove channel {channel} out of range")
            correspondence.append((joint, channel, int(e["direction"])))
            glove_ranges.append((float(e["glove_min"]), float(e["glove_max"])))
            midx = joint + joint_offset
            robot_limits.append((model.joints[midx].lower, model.joints[midx].upper))
        except KeyError as exc:
            raise MappingError(f"entry {k}: missing field {exc}") from exc
    return build_mapping(correspondence, glove_ranges, robot_limits)


def load_mapping(path, model: KinematicModel, joint_offset: int = 0) -> MappingTable:
    import json
    from pathlib import Path

    doc = json.loads(Path(path).read_text())
    return mapping_from_config(doc, model, joint_offset)
