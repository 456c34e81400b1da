"""Preview-then-execute teleoperation session.

The session is a three-state machine driven by an ordered event stream:

* ``LIVE``: input ticks drive the robot directly (wrist to end-effector via
  the relative position map, glove to hand joints via the linear map plus
  the learned correction gate). Every tick is recorded.
* ``PREVIEW`` (pedal held): the robot freezes; a phantom copy keeps
  following the operator so the motion can be rehearsed. Nothing recorded.
* ``EXECUTING`` (pedal released): the phantom's final configuration becomes
  the target, a velocity-limited collision-checked trajectory runs the robot
  there, then the session drops back to LIVE and re-references the wrist so
  the first live tick produces zero displacement.

Recorded demonstrations therefore contain only LIVE and EXECUTING samples;
exploratory preview motion never lands in the data. The arm (when present)
tracks end-effector targets with a damped least-squares servo step per tick;
the hand is the mapped and corrected glove vector.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .collision_net import correct
from .kinematics import KinematicModel, check_self_collision, fk_arrays, labels_from_fk
from .mlp import Mlp
from .retarget import EndEffectorTarget, GloveSample, MappingTable, WristSample, map_hand, wrist_to_target
from .trajectory import LimitError, PlanningError, Trajectory, plan_trajectory
from .transforms import RigidTransform, quat_conj, quat_mul, quat_rotate

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    LIVE = "LIVE"
    PREVIEW = "PREVIEW"
    EXECUTING = "EXECUTING"


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputTick:
    wrist: WristSample
    glove: GloveSample


@dataclass(frozen=True)
class PedalDown:
    pass


@dataclass(frozen=True)
class PedalUp:
    pass


@dataclass(frozen=True)
class TrajectoryDone:
    pass


Event = InputTick | PedalDown | PedalUp | TrajectoryDone


@dataclass(frozen=True)
class StepOutcome:
    accepted: bool
    phase: Phase
    note: str = ""


# ---------------------------------------------------------------------------
# Demonstration recording
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemoSample:
    t: float
    phase: Phase
    q: np.ndarray
    ee: RigidTransform
    pedal: str


@dataclass
class DemoRecord:
    metadata: dict
    samples: list[DemoSample] = field(default_factory=list)

    def phase_counts(self) -> dict[str, int]:
        counts = {p.value: 0 for p in Phase}
        for s in self.samples:
            counts[s.phase.value] += 1
        return counts

    def write(self, path):
        lines = [json.dumps(self.metadata)]
        for s in self.samples:
            lines.append(
                json.dumps(
                    {
                        "t": s.t,
                        "phase": s.phase.value,
                        "q": [float(v) for v in s.q],
                        "ee": s.ee.to_dict(),
                        "pedal": s.pedal,
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")


def load_demo(path) -> DemoRecord:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty demo file")
    record = DemoRecord(metadata=json.loads(lines[0]))
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            record.samples.append(
                DemoSample(
                    t=float(d["t"]),
                    phase=Phase(d["phase"]),
                    q=np.asarray(d["q"], dtype=float),
                    ee=RigidTransform.from_dict(d["ee"]),
                    pedal=d["pedal"],
                )
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{ln}: bad demo sample: {exc}") from exc
    return record


class DemoRecorder:
    """Appends samples only during LIVE and EXECUTING phases."""

    def __init__(self, metadata: dict | None = None):
        self.record = DemoRecord(metadata=dict(metadata or {}))
        self.dropped_preview = 0

    def append(self, t: float, phase: Phase, q: np.ndarray, ee: RigidTransform, pedal: str):
        if phase == Phase.PREVIEW:
            self.dropped_preview += 1
            return
        self.record.samples.append(DemoSample(t, phase, np.array(q, dtype=float), ee, pedal))

    def finalize(self, path=None) -> tuple[DemoRecord, dict[str, int]]:
        counts = self.record.phase_counts()
        if path is not None:
            self.record.write(path)
        return self.record, counts


# ---------------------------------------------------------------------------
# Arm servo step
# ---------------------------------------------------------------------------

def _rotation_vector(q_from: np.ndarray, q_to: np.ndarray) -> np.ndarray:
    """Axis-angle vector rotating orientation q_from onto q_to (world frame)."""
    rel = quat_mul(q_to, quat_conj(q_from))
    w = abs(rel[0])
    v = rel[1:] if rel[0] >= 0 else -rel[1:]
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(norm, w)
    return (v / norm) * angle


def ik_step(model: KinematicModel, q: np.ndarray, arm_count: int,
            target: EndEffectorTarget, dt: float, damping: float = 0.05) -> np.ndarray:
    """One damped least-squares servo step of the arm joints toward a pose.

    Only joints [0, arm_count) move; the step obeys per-joint velocity
    limits over ``dt`` and joint limits.
    """
    if arm_count == 0:
        return q.copy()
    quats, poss = fk_arrays(model, q)
    ee_pos = poss[arm_count - 1]
    ee_quat = quats[arm_count - 1]
    err = np.concatenate([target.position - ee_pos, _rotation_vector(ee_quat, target.orientation)])

    axes = quat_rotate(quats[:arm_count], model._axes[:arm_count])
    arms = ee_pos - poss[:arm_count]
    J = np.zeros((6, arm_count))
    J[0] = axes[:, 1] * arms[:, 2] - axes[:, 2] * arms[:, 1]
    J[1] = axes[:, 2] * arms[:, 0] - axes[:, 0] * arms[:, 2]
    J[2] = axes[:, 0] * arms[:, 1] - axes[:, 1] * arms[:, 0]
    J[3:] = axes.T
    JJt = J @ J.T + (damping ** 2) * np.eye(6)
    dq = J.T @ np.linalg.solve(JJt, err)

    step_cap = model.max_velocities[:arm_count] * max(dt, 1e-6)
    dq = np.clip(dq, -step_cap, step_cap)
    out = q.copy()
    out[:arm_count] = np.clip(
        q[:arm_count] + dq, model.lowers[:arm_count], model.uppers[:arm_count]
    )
    return out


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

class TeleopSession:
    """Owns all mutable teleoperation state; events come in one at a time."""

    def __init__(
        self,
        model: KinematicModel,
        mapping: MappingTable,
        hand_offset: int = 0,
        predictor: Mlp | None = None,
        corrector: Mlp | None = None,
        gate_threshold: float = 0.25,
        rate_hz: float = 60.0,
        traj_dt: float = 0.01,
        initial_q: np.ndarray | None = None,
        recorder_metadata: dict | None = None,
    ):
        if mapping.n_joints != model.n_joints - hand_offset:
            raise ValueError(
                f"mapping covers {mapping.n_joints} joints but model has "
                f"{model.n_joints - hand_offset} hand joints"
            )
        self.model = model
        self.mapping = mapping
        self.hand_offset = hand_offset
        self.predictor = predictor
        self.corrector = corrector
        self.gate_threshold = gate_threshold
        self.rate_hz = rate_hz
        self.traj_dt = traj_dt

        self.phase = Phase.LIVE
        self.robot_q = model.clamp(initial_q if initial_q is not None else np.zeros(model.n_joints))
        self.phantom_q = self.robot_q.copy()
        self.time = 0.0
        self.pedal = "up"
        self.wrist_origin: WristSample | None = None
        self.ee_origin: EndEffectorTarget | None = None
        self.pending_rebase = False
        self.last_wrist: WristSample | None = None
        self.last_glove: GloveSample | None = None
        self.last_ee_target: EndEffectorTarget | None = None
        self.trajectory: Trajectory | None = None
        self.traj_start = 0.0
        self.error_flag: str | None = None
        self.gate_active = False
        self.collision_labels = check_self_collision(model, self.robot_q)
        self.planner_failures = 0
        self.gate_activations = 0
        self.recorder = DemoRecorder(recorder_metadata)

    # -- helpers --------------------------------------------------------
    def ee_pose_of(self, q: np.ndarray) -> RigidTransform:
        if self.hand_offset == 0:
            return RigidTransform.identity()
        quats, poss = fk_arrays(self.model, q)
        return RigidTransform(quats[self.hand_offset - 1], poss[self.hand_offset - 1])

    def ee_pose(self) -> RigidTransform:
        return self.ee_pose_of(self.robot_q)

    def _refresh(self, q: np.ndarray) -> RigidTransform:
        """One FK pass: update collision labels and return the ee pose."""
        quats, poss = fk_arrays(self.model, q)
        self.collision_labels = labels_from_fk(self.model, quats, poss)
        if self.hand_offset == 0:
            return RigidTransform.identity()
        return RigidTransform(quats[self.hand_offset - 1], poss[self.hand_offset - 1])

    def rebase_origins(self, latest: WristSample | None):
        """Re-reference the relative wrist scheme on the EXECUTING to LIVE
        transition. The snap is finalized on the next input tick so that the
        first live target coincides with the robot's pose exactly."""
        ee = self.ee_pose()
        self.ee_origin = EndEffectorTarget(ee.pos, ee.quat, self.time)
        if latest is not None:
            self.wrist_origin = latest
        self.pending_rebase = True

    def _snap_origins(self, wrist: WristSample):
        ee = self.ee_pose()
        self.wrist_origin = wrist
        self.ee_origin = EndEffectorTarget(ee.pos, ee.quat, wrist.timestamp)
        self.pending_rebase = False

    def _mapped_hand(self, glove: GloveSample) -> np.ndarray:
        hand = map_hand(self.mapping, glove)
        if self.predictor is not None and self.corrector is not None:
            result = correct(hand, self.predictor, self.corrector, self.gate_threshold)
            self.gate_active = result.was_gated
            if result.was_gated:
                self.gate_activations += 1
            return result.corrected
        self.gate_active = False
        return hand

    def _advance_dt(self, t: float) -> float:
        dt = 1.0 / self.rate_hz if self.last_wrist is None else max(t - self.time, 0.0)
        self.time = max(self.time, t)
        return dt

    def _drive(self, q: np.ndarray, tick: InputTick, dt: float) -> np.ndarray:
        """Mapped hand plus one arm servo step, applied to a base config."""
        target = wrist_to_target(tick.wrist, self.wrist_origin, self.ee_origin)
        self.last_ee_target = target
        out = ik_step(self.model, q, self.hand_offset, target, dt)
        out[self.hand_offset:] = self._mapped_hand(tick.glove)
        return out

    def _record(self, tick_t: float, ee: RigidTransform | None = None):
        self.recorder.append(tick_t, self.phase, self.robot_q,
                             ee if ee is not None else self.ee_pose(), self.pedal)

    # -- event handling --------------------------------------------------
    def step(self, event: Event) -> StepOutcome:
        if isinstance(event, InputTick):
            return self._on_tick(event)
        if isinstance(event, PedalDown):
            return self._on_pedal_down()
        if isinstance(event, PedalUp):
            return self._on_pedal_up()
        if isinstance(event, TrajectoryDone):
            return self._on_trajectory_done()
        raise TypeError(f"unknown event {event!r}")

    def _on_tick(self, tick: InputTick) -> StepOutcome:
        dt = self._advance_dt(tick.wrist.timestamp)
        self.last_wrist = tick.wrist
        self.last_glove = tick.glove

        if self.phase == Phase.LIVE:
            if self.pending_rebase or self.wrist_origin is None:
                self._snap_origins(tick.wrist)
            self.robot_q = self._drive(self.robot_q, tick, dt)
            self.phantom_q = self.robot_q.copy()
            self._record(tick.wrist.timestamp, self._refresh(self.robot_q))
            return StepOutcome(True, self.phase)

        if self.phase == Phase.PREVIEW:
            if self.pending_rebase or self.wrist_origin is None:
                self._snap_origins(tick.wrist)
            self.phantom_q = self._drive(self.phantom_q, tick, dt)
            # the recorder's phase filter drops preview samples before reading them
            self._record(tick.wrist.timestamp, self._refresh(self.phantom_q))
            return StepOutcome(True, self.phase)

        # EXECUTING: the robot follows the trajectory; operator input is
        # buffered only so the resume can re-reference the wrist.
        if self.trajectory is not None:
            u = tick.wrist.timestamp - self.traj_start
            self.robot_q = np.array(self.trajectory.sample(u))
            self.phantom_q = self.robot_q.copy()
            self._record(tick.wrist.timestamp, self._refresh(self.robot_q))
            if self.trajectory.done(u):
                self._complete_trajectory()
        return StepOutcome(True, self.phase)

    def _on_pedal_down(self) -> StepOutcome:
        if self.phase == Phase.LIVE:
            self.pedal = "down"
            self.phase = Phase.PREVIEW
            self.phantom_q = self.robot_q.copy()
            self.error_flag = None
            return StepOutcome(True, self.phase)
        if self.phase == Phase.EXECUTING:
            return StepOutcome(False, self.phase, "busy: trajectory executing")
        return StepOutcome(False, self.phase, "pedal already down")

    def _on_pedal_up(self) -> StepOutcome:
        if self.phase != Phase.PREVIEW:
            return StepOutcome(False, self.phase, "pedal not held")
        self.pedal = "up"
        target = self.phantom_q.copy()
        try:
            traj = plan_trajectory(self.model, self.robot_q, target, self.traj_dt)
        except (PlanningError, LimitError) as exc:
            self.pedal = "down"  # still previewing; operator must re-commit
            self.error_flag = f"planning failed: {exc}"
            self.planner_failures += 1
            logger.warning("%s", self.error_flag)
            return StepOutcome(False, self.phase, self.error_flag)
        self.phase = Phase.EXECUTING
        self.trajectory = traj
        self.traj_start = self.time
        if traj.duration <= 0.0:
            self._complete_trajectory()
            return StepOutcome(True, self.phase, "target already reached")
        return StepOutcome(True, self.phase)

    def _on_trajectory_done(self) -> StepOutcome:
        if self.phase != Phase.EXECUTING or self.trajectory is None:
            return StepOutcome(False, self.phase, "no trajectory executing")
        self.robot_q = np.array(self.trajectory.end)
        self.phantom_q = self.robot_q.copy()
        self._complete_trajectory()
        return StepOutcome(True, self.phase)

    def _complete_trajectory(self):
        self.trajectory = None
        self.phase = Phase.LIVE
        self.rebase_origins(self.last_wrist)

    # -- observation ------------------------------------------------------
    def snapshot(self) -> dict:
        return {
            "fsm": self.phase.value,
            "t": self.time,
            "robot_q": [float(v) for v in self.robot_q],
            "phantom_q": [float(v) for v in self.phantom_q],
            "gate": bool(self.gate_active),
            "collision": [bool(v) for v in self.collision_labels],
            "pedal": self.pedal,
            "error": self.error_flag,
        }
