"""Input sources producing (wrist, glove) frame pairs.

Trace playback, scripted generators, and live operator input all honor the
same contract: strictly increasing timestamps, 27 glove channels, wrist
poses in the declared world frame. Trace files are JSON lines::

    {"t": 0.0, "wrist": {"quat": [w,x,y,z], "pos": [x,y,z]}, "glove": [ ...27... ]}
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .retarget import GLOVE_CHANNELS, GloveSample, WristSample
from .transforms import RigidTransform, quat_from_axis_angle, quat_from_matrix, quat_mul, quat_normalize

InputFrame = tuple[WristSample, GloveSample]
FrameFn = Callable[[float], tuple[RigidTransform, np.ndarray]]


class TraceParseError(ValueError):
    """Malformed trace line; message carries the line number."""


class InputSource:
    """Base class: call ``next_frame`` until it returns None."""

    kind = "abstract"

    def next_frame(self) -> InputFrame | None:
        raise NotImplementedError

    def __iter__(self):
        while True:
            frame = self.next_frame()
            if frame is None:
                return
            yield frame


def _check_increasing(last_t: float | None, t: float, context: str):
    if last_t is not None and t <= last_t:
        raise ValueError(f"{context}: timestamps must strictly increase ({t} after {last_t})")


class TraceSource(InputSource):
    kind = "trace"

    def __init__(self, path, rate: float | None = None):
        self.path = Path(path)
        frames = load_trace(self.path)
        if rate is not None:
            frames = resample_zero_order_hold(frames, rate)
        self._frames = frames
        self._cursor = 0

    def next_frame(self) -> InputFrame | None:
        if self._cursor >= len(self._frames):
            return None
        frame = self._frames[self._cursor]
        self._cursor += 1
        return frame


class ScriptedSource(InputSource):
    kind = "scripted"

    def __init__(self, fn: FrameFn, rate: float, duration: float):
        if rate <= 0 or duration < 0:
            raise ValueError("rate must be positive and duration nonnegative")
        self.fn = fn
        self.rate = rate
        self.n_frames = int(round(duration * rate)) + 1
        self._step = 0

    def next_frame(self) -> InputFrame | None:
        if self._step >= self.n_frames:
            return None
        t = self._step / self.rate
        self._step += 1
        pose, glove = self.fn(t)
        return WristSample(t, pose), GloveSample(t, glove)


class LiveSource(InputSource):
    """Holds the most recent pushed frame; sampling applies zero-order hold.

    ``next_frame`` stamps the held values with the session clock passed to
    ``sample_at`` so downstream timestamps stay strictly increasing even when
    the operator stops sending.
    """

    kind = "live"

    def __init__(self):
        self._wrist: WristSample | None = None
        self._glove: GloveSample | None = None
        self._last_t: float | None = None

    def push(self, wrist: WristSample, glove: GloveSample):
        self._wrist = wrist
        self._glove = glove

    @property
    def primed(self) -> bool:
        return self._wrist is not None

    def sample_at(self, t: float) -> InputFrame | None:
        if self._wrist is None or self._glove is None:
            return None
        _check_increasing(self._last_t, t, "live source")
        self._last_t = t
        return WristSample(t, self._wrist.pose), GloveSample(t, self._glove.angles)

    def next_frame(self) -> InputFrame | None:
        t = 0.0 if self._last_t is None else self._last_t
        return self.sample_at(t if self._last_t is None else t + 1e-3)


# ---------------------------------------------------------------------------
# Scripted generators
# ---------------------------------------------------------------------------

def circle_wrist(radius: float, period: float, center=(0.0, 0.0, 0.0),
                 glove_value: float = 0.0) -> FrameFn:
    """Wrist riding a horizontal circle, oriented along the analytic tangent
    frame (x tangent, y inward normal, z up)."""
    if radius < 0 or period <= 0:
        raise ValueError("radius must be nonnegative, period positive")
    center = np.asarray(center, dtype=float)
    omega = 2.0 * math.pi / period

    def fn(t: float):
        a = omega * t
        pos = center + radius * np.array([math.cos(a), math.sin(a), 0.0])
        tangent = np.array([-math.sin(a), math.cos(a), 0.0])
        normal = np.array([-math.cos(a), -math.sin(a), 0.0])
        rot = np.column_stack([tangent, normal, np.cross(tangent, normal)])
        return RigidTransform(quat_from_matrix(rot), pos), np.full(GLOVE_CHANNELS, glove_value)

    return fn


def sine_fingers(amplitude: float, period: float) -> FrameFn:
    """Stationary wrist; glove channels oscillate with per-channel phase."""
    if amplitude < 0 or period <= 0:
        raise ValueError("amplitude must be nonnegative, period positive")
    omega = 2.0 * math.pi / period
    phases = np.arange(GLOVE_CHANNELS) * (2.0 * math.pi / GLOVE_CHANNELS)

    def fn(t: float):
        return RigidTransform.identity(), amplitude * np.sin(omega * t + phases)

    return fn


def random_walk(seed: int, step: float) -> FrameFn:
    """Wrist position and glove channels wander by Gaussian increments;
    orientation by small axis-angle twists. Deterministic under the seed and
    the call sequence (sample times in order)."""
    if step <= 0:
        raise ValueError("step must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    state = {
        "pos": np.zeros(3),
        "quat": np.array([1.0, 0.0, 0.0, 0.0]),
        "glove": np.zeros(GLOVE_CHANNELS),
    }

    def fn(t: float):
        state["pos"] = state["pos"] + rng.normal(0.0, step, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = quat_from_axis_angle(axis, rng.normal(0.0, step))
        state["quat"] = quat_normalize(quat_mul(dq, state["quat"]))
        state["glove"] = state["glove"] + rng.normal(0.0, step, GLOVE_CHANNELS)
        return RigidTransform(state["quat"], state["pos"]), state["glove"].copy()

    return fn


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------

def record_trace(frames, path):
    """Write frames as JSON lines; float formatting round-trips exactly."""
    lines = []
    last_t = None
    for wrist, glove in frames:
        _check_increasing(last_t, wrist.timestamp, "trace")
        last_t = wrist.timestamp
        lines.append(
            json.dumps(
                {
                    "t": wrist.timestamp,
                    "wrist": wrist.pose.to_dict(),
                    "glove": [float(v) for v in glove.angles],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path) -> list[InputFrame]:
    frames: list[InputFrame] = []
    last_t = None
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            t = float(d["t"])
            wrist = WristSample(t, RigidTransform.from_dict(d["wrist"]))
            glove = GloveSample(t, np.asarray(d["glove"], dtype=float))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise TraceParseError(f"{path}:{ln}: {exc}") from exc
        _check_increasing(last_t, t, f"{path}:{ln}")
        last_t = t
        frames.append((wrist, glove))
    return frames


def resample_zero_order_hold(frames: list[InputFrame], rate: float) -> list[InputFrame]:
    """Re-time a frame list onto a fixed-rate clock, holding the latest frame."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if not frames:
        return []
    t0 = frames[0][0].timestamp
    t1 = frames[-1][0].timestamp
    n = int(math.floor((t1 - t0) * rate)) + 1
    out: list[InputFrame] = []
    src = 0
    for k in range(n):
        t = t0 + k / rate
        while src + 1 < len(frames) and frames[src + 1][0].timestamp <= t:
            src += 1
        wrist, glove = frames[src]
        out.append((WristSample(t, wrist.pose), GloveSample(t, glove.angles)))
    return out
