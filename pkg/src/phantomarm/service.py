"""Scene configuration, the wire protocol, headless replay, and metrics.

Scene config files are JSON; paths resolve relative to the config file, and
the ``bundled:`` prefix points at resources shipped with the package::

    {
      "robot_model": "bundled:armhand22",
      "hand_model": "bundled:hand16",
      "hand_joints_offset": 6,
      "mapping": "bundled:hand16_mapping",
      "networks": {"predictor": "cpn.json", "corrector": "ccn.json"},
      "cameras": [
        {"name": "top", "intrinsics": {"fx": 420, "fy": 420, "cx": 320, "cy": 240},
         "pose_source": "fixed", "pose": {"quat": [...], "pos": [...]}},
        {"name": "third", "intrinsics": {...}, "pose_source": "floating",
         "true_pose": {"quat": [...], "pos": [...]}}
      ],
      "tag_pose": {"quat": [...], "pos": [...]},
      "rate_hz": 60, "gate_threshold": 0.25, "seed": 0, "task": "demo"
    }

Floating cameras have no stored pose edge: their ``true_pose`` only feeds a
synthetic tag observation, and the frame graph derives the camera pose
through the tag chain, exactly as a live system would.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reporting
from .calibration import CameraIntrinsics, FrameGraph, TagObservation
from .collision_net import correct, generate_dataset
from .kinematics import KinematicModel, bundled_model_path, check_self_collision_batch, load_model
from .mlp import Mlp
from .retarget import GLOVE_CHANNELS, GloveSample, MappingTable, WristSample, build_mapping, load_mapping, map_hand
from .session import InputTick, PedalDown, PedalUp, Phase, TeleopSession
from .streams import load_trace
from .transforms import RigidTransform

logger = logging.getLogger(__name__)


class SceneError(ValueError):
    """Scene config fails validation; message names the offending field."""


class ProtocolError(ValueError):
    """Malformed client message."""


@dataclass
class CameraConfig:
    name: str
    intrinsics: CameraIntrinsics
    pose_source: str  # "fixed" | "floating"
    pose: RigidTransform | None = None  # fixed: hand-eye result
    true_pose: RigidTransform | None = None  # floating: harness ground truth


@dataclass
class SceneConfig:
    robot_model_path: Path
    hand_model_path: Path
    mapping_path: Path
    hand_joints_offset: int
    predictor_path: Path | None
    corrector_path: Path | None
    cameras: list[CameraConfig]
    tag_pose: RigidTransform
    rate_hz: float
    gate_threshold: float
    seed: int
    task: str

    robot_model: KinematicModel = field(init=False, repr=False)
    hand_model: KinematicModel = field(init=False, repr=False)
    mapping: MappingTable = field(init=False, repr=False)
    predictor: Mlp | None = field(init=False, repr=False)
    corrector: Mlp | None = field(init=False, repr=False)

    def __post_init__(self):
        self.robot_model = load_model(self.robot_model_path)
        self.hand_model = load_model(self.hand_model_path)
        n_hand = self.robot_model.n_joints - self.hand_joints_offset
        if self.hand_model.n_joints != n_hand:
            raise SceneError(
                f"hand_model has {self.hand_model.n_joints} joints but robot_model leaves "
                f"{n_hand} after hand_joints_offset={self.hand_joints_offset}")
        self.mapping = load_mapping(self.mapping_path, self.robot_model, self.hand_joints_offset)
        self.predictor = Mlp.load(self.predictor_path) if self.predictor_path else None
        self.corrector = Mlp.load(self.corrector_path) if self.corrector_path else None
        if (self.predictor is None) != (self.corrector is None):
            raise SceneError("networks: predictor and corrector must be configured together")
        if self.predictor is not None:
            if self.predictor.in_dim != n_hand or self.corrector.in_dim != n_hand:
                raise SceneError("networks: input size must match the hand joint count")

    def model_hash(self) -> str:
        return hashlib.sha256(Path(self.robot_model_path).read_bytes()).hexdigest()[:16]


def _resolve(ref: str, base_dir: Path, kind: str) -> Path:
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        path = bundled_model_path(name)
    else:
        path = (base_dir / ref).resolve() if not Path(ref).is_absolute() else Path(ref)
    if not path.exists():
        raise SceneError(f"{kind}: file not found: {ref}")
    return path


def load_scene(path) -> SceneConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON: {exc}") from exc
    base = path.parent
    try:
        cameras = []
        for cd in doc.get("cameras", []):
            intr = cd["intrinsics"]
            source = cd["pose_source"]
            if source not in ("fixed", "floating"):
                raise SceneError(f"camera {cd.get('name')}: bad pose_source '{source}'")
            cameras.append(
                CameraConfig(
                    name=cd["name"],
                    intrinsics=CameraIntrinsics(intr["fx"], intr["fy"], intr["cx"], intr["cy"]),
                    pose_source=source,
                    pose=RigidTransform.from_dict(cd["pose"]) if "pose" in cd else None,
                    true_pose=RigidTransform.from_dict(cd["true_pose"]) if "true_pose" in cd else None,
                )
            )
        networks = doc.get("networks")
        return SceneConfig(
            robot_model_path=_resolve(doc["robot_model"], base, "robot_model"),
            hand_model_path=_resolve(doc.get("hand_model", doc["robot_model"]), base, "hand_model"),
            mapping_path=_resolve(doc["mapping"], base, "mapping"),
            hand_joints_offset=int(doc.get("hand_joints_offset", 0)),
            predictor_path=_resolve(networks["predictor"], base, "networks.predictor") if networks else None,
            corrector_path=_resolve(networks["corrector"], base, "networks.corrector") if networks else None,
            cameras=cameras,
            tag_pose=RigidTransform.from_dict(doc["tag_pose"]) if "tag_pose" in doc else RigidTransform.identity(),
            rate_hz=float(doc.get("rate_hz", 60.0)),
            gate_threshold=float(doc.get("gate_threshold", 0.25)),
            seed=int(doc.get("seed", 0)),
            task=str(doc.get("task", "session")),
        )
    except KeyError as exc:
        raise SceneError(f"{path}: missing field {exc}") from exc


def bundled_scene_path() -> Path:
    return bundled_model_path("scene_default")


def build_frame_graph(scene: SceneConfig) -> FrameGraph:
    """Run the acquisition chain on the scene's cameras."""
    graph = FrameGraph()
    graph.add_edge("base", "world", RigidTransform.identity(), "declared")
    fixed = [c for c in scene.cameras if c.pose_source == "fixed"]
    floating = [c for c in scene.cameras if c.pose_source == "floating"]
    for cam in fixed:
        if cam.pose is None:
            raise SceneError(f"camera {cam.name}: fixed cameras need a hand-eye 'pose'")
        graph.set_hand_eye(cam.pose, fixed_cam=cam.name)
    if fixed:
        anchor = fixed[0]
        obs = TagObservation(anchor.name, anchor.pose.inverse().compose(scene.tag_pose))
        graph.observe_tag_from_fixed(obs)
        for cam in floating:
            if cam.true_pose is None:
                raise SceneError(f"camera {cam.name}: floating cameras need 'true_pose'")
            tag_seen = cam.true_pose.inverse().compose(scene.tag_pose)
            graph.observe_tag_from_float(TagObservation(cam.name, tag_seen))
    return graph


def build_session(scene: SceneConfig) -> TeleopSession:
    return TeleopSession(
        model=scene.robot_model,
        mapping=scene.mapping,
        hand_offset=scene.hand_joints_offset,
        predictor=scene.predictor,
        corrector=scene.corrector,
        gate_threshold=scene.gate_threshold,
        rate_hz=scene.rate_hz,
        recorder_metadata={"task": scene.task, "seed": scene.seed, "model_hash": scene.model_hash()},
    )


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------

def parse_client_message(doc: dict):
    """Decode one client frame into ("input"|"pedal"|"view", payload)."""
    if not isinstance(doc, dict) or "type" not in doc:
        raise ProtocolError("message must be an object with a 'type' field")
    mtype = doc["type"]
    try:
        if mtype == "input":
            wrist = WristSample(float(doc["t"]), RigidTransform.from_dict(doc["wrist"]))
            glove = GloveSample(float(doc["t"]), np.asarray(doc["glove"], dtype=float))
            return "input", InputTick(wrist, glove)
        if mtype == "pedal":
            state = doc["state"]
            if state == "down":
                return "pedal", PedalDown()
            if state == "up":
                return "pedal", PedalUp()
            raise ProtocolError(f"bad pedal state '{state}'")
        if mtype == "view":
            return "view", str(doc["camera"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ProtocolError(f"bad '{mtype}' message: {exc}") from exc
    raise ProtocolError(f"unknown message type '{mtype}'")


def encode_state(seq: int, session: TeleopSession, frames: dict, camera: str | None = None) -> dict:
    snap = session.snapshot()
    return {
        "type": "state",
        "seq": seq,
        "fsm": snap["fsm"],
        "t": snap["t"],
        "robot_q": snap["robot_q"],
        "phantom_q": snap["phantom_q"],
        "frames": frames,
        "gate": snap["gate"],
        "collision": snap["collision"],
        "pedal": snap["pedal"],
        "error": snap["error"],
        "camera": camera,
    }


def encode_error(code: str, msg: str) -> dict:
    return {"type": "error", "code": code, "msg": msg}


# ---------------------------------------------------------------------------
# Headless replay
# ---------------------------------------------------------------------------

def load_pedal_script(path) -> list[tuple[float, str]]:
    doc = json.loads(Path(path).read_text())
    script = []
    for k, item in enumerate(doc):
        try:
            t, state = float(item[0]), str(item[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ValueError(f"{path}[{k}]: pedal entries are [t, 'down'|'up']: {exc}") from exc
        if state not in ("down", "up"):
            raise ValueError(f"{path}[{k}]: bad pedal state '{state}'")
        script.append((t, state))
    return script


def replay(scene: SceneConfig, trace_path, pedal_path=None, out_dir=None, rate=None):
    """Deterministic headless run of a trace plus a pedal script.

    Returns (demo_record, summary); writes demo.jsonl and summary.json when
    ``out_dir`` is given. ``rate`` resamples the trace by zero-order hold.
    """
    session = build_session(scene)
    frames = load_trace(trace_path)
    if rate is not None:
        from .streams import resample_zero_order_hold

        frames = resample_zero_order_hold(frames, rate)
    pedal = load_pedal_script(pedal_path) if pedal_path else []

    # pedal events sort before input ticks at equal timestamps
    events: list[tuple[float, int, int, object]] = []
    for k, (t, state) in enumerate(pedal):
        events.append((t, 0, k, PedalDown() if state == "down" else PedalUp()))
    for k, (wrist, glove) in enumerate(frames):
        events.append((wrist.timestamp, 1, k, InputTick(wrist, glove)))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    phase_durations = {p.value: 0.0 for p in Phase}
    rejected = 0
    last_t = events[0][0] if events else 0.0
    for t, _, _, event in events:
        outcome = session.step(event)
        if not outcome.accepted:
            rejected += 1
        phase_durations[session.phase.value] += max(t - last_t, 0.0)
        last_t = t

    demo_path = summary_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        demo_path = out_dir / "demo.jsonl"
    record, counts = session.recorder.finalize(demo_path)
    summary = {
        "samples": len(record.samples),
        "phase_samples": counts,
        "phase_durations_s": phase_durations,
        "gate_activations": session.gate_activations,
        "planner_failures": session.planner_failures,
        "rejected_events": rejected,
        "final_fsm": session.phase.value,
    }
    if out_dir is not None:
        summary_path = Path(out_dir) / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=1))
    return record, summary


# ---------------------------------------------------------------------------
# Metrics / eval
# ---------------------------------------------------------------------------

def measure_pipeline_latency(scene: SceneConfig, iterations: int = 10000,
                             seed: int = 99) -> np.ndarray:
    """Wall latency of map_hand plus the correction gate, milliseconds."""
    rng = np.random.Generator(np.random.PCG64(seed))
    gloves = [GloveSample(float(i), rng.uniform(-0.4, 2.4, GLOVE_CHANNELS)) for i in range(iterations)]
    latencies = np.empty(iterations)
    for i, glove in enumerate(gloves):
        t0 = time.perf_counter()
        hand = map_hand(scene.mapping, glove)
        if scene.predictor is not None:
            correct(hand, scene.predictor, scene.corrector, scene.gate_threshold)
        latencies[i] = (time.perf_counter() - t0) * 1e3
    return latencies


def evaluate(scene: SceneConfig, out_dir, n_eval: int = 20000, latency_iterations: int = 10000) -> dict:
    """Machine-readable quality report plus figures.

    Covers pipeline latency, predictor accuracy, corrector collision rate
    and deviation (oracle-checked), and the mapping endpoint property.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hand = scene.hand_model
    metrics: dict = {"scene_task": scene.task}

    latencies = measure_pipeline_latency(scene, latency_iterations)
    reporting.write_latency_report(latencies, out_dir)
    metrics["latency_ms"] = {
        "median": float(np.median(latencies)),
        "p90": float(np.percentile(latencies, 90)),
        "max": float(latencies.max()),
        "iterations": latency_iterations,
        "rate_hz_at_median": float(1e3 / np.median(latencies)),
    }

    if scene.predictor is not None:
        ds = generate_dataset(hand, n_eval, seed=scene.seed + 1)
        probs = scene.predictor.forward(ds.configs)
        per_link = ((probs > 0.5) == ds.labels).mean(axis=0)
        reporting.write_accuracy_report(per_link, out_dir)
        metrics["predictor"] = {
            "per_link_accuracy": [float(a) for a in per_link],
            "min_accuracy": float(per_link.min()),
            "mean_accuracy": float(per_link.mean()),
        }
        colliding = ds.configs[ds.labels.any(axis=1)][:1000]
        outs = np.array([
            correct(q, scene.predictor, scene.corrector, scene.gate_threshold).corrected
            for q in colliding
        ])
        still = check_self_collision_batch(hand, outs).any(axis=1)
        deviation = np.abs(outs - colliding) / hand.ranges
        metrics["corrector"] = {
            "evaluated": int(colliding.shape[0]),
            "oracle_collision_rate": float(still.mean()),
            "mean_joint_deviation_fraction": float(deviation.mean()),
        }

    rng = np.random.Generator(np.random.PCG64(scene.seed + 2))
    worst = 0.0
    for _ in range(1000):
        gmin = rng.uniform(-2.0, 1.0)
        gmax = gmin + rng.uniform(0.1, 3.0)
        rmin = rng.uniform(-2.0, 1.0)
        rmax = rmin + rng.uniform(0.1, 3.0)
        direction = 1 if rng.uniform() < 0.5 else -1
        table = build_mapping([(0, 0, direction)], [(gmin, gmax)], [(rmin, rmax)])
        e = table.entries[0]
        lo, hi = e.apply(gmin), e.apply(gmax)
        expect_lo, expect_hi = (rmin, rmax) if direction == 1 else (rmax, rmin)
        worst = max(worst, abs(lo - expect_lo), abs(hi - expect_hi))
    metrics["endpoint_property"] = {"tables": 1000, "max_abs_error": float(worst)}

    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=1))
    return metrics
