"""Joint-space trajectories: velocity-limited linear interpolation with
collision checking at a fixed sampling step.

Planning failures surface as errors so the operator can re-preview; there is
no fallback search around obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicModel, check_self_collision, check_self_collision_batch


class PlanningError(RuntimeError):
    """Straight-line path crosses a self-collision."""


class LimitError(ValueError):
    """Endpoint configuration violates joint limits."""


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped waypoints; linear between neighbors, clamped at the ends."""

    times: np.ndarray  # strictly increasing offsets from start, seconds
    waypoints: np.ndarray  # (k, dof)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[0] != t.shape[0] or t.shape[0] < 1:
            raise ValueError("times and waypoints must align")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "waypoints", w)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def end(self) -> np.ndarray:
        return self.waypoints[-1]

    def sample(self, t: float) -> np.ndarray:
        if t <= self.times[0]:
            return self.waypoints[0]
        if t >= self.times[-1]:
            return self.waypoints[-1]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        t0, t1 = self.times[i], self.times[i + 1]
        u = (t - t0) / (t1 - t0)
        return (1.0 - u) * self.waypoints[i] + u * self.waypoints[i + 1]

    def done(self, t: float) -> bool:
        return t >= self.duration


def plan_trajectory(model: KinematicModel, q_from, q_to, dt: float = 0.01) -> Trajectory:
    """Straight joint-space line from ``q_from`` to ``q_to``, re-timed so no
    joint exceeds its velocity limit, collision-checked every ``dt``."""
    q_from = model.check_config(q_from)
    q_to = model.check_config(q_to)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not model.within_limits(q_from):
        raise LimitError("start configuration violates joint limits")
    if not model.within_limits(q_to):
        raise LimitError("target configuration violates joint limits")

    delta = q_to - q_from
    duration = float(np.max(np.abs(delta) / model.max_velocities))
    if duration <= 0.0:
        if check_self_collision(model, q_from).any():
            raise PlanningError("configuration is in self-collision")
        return Trajectory(np.array([0.0]), q_from.reshape(1, -1))

    n_steps = max(1, int(np.ceil(duration / dt)))
    times = np.linspace(0.0, duration, n_steps + 1)
    u = (times / duration)[:, None]
    waypoints = q_from + u * delta
    hits = check_self_collision_batch(model, waypoints).any(axis=1)
    if hits.any():
        k = int(np.argmax(hits))
        raise PlanningError(f"self-collision on path at t={times[k]:.3f}s")
    # strictly-increasing times with k>=2 entries; per-joint velocity is
    # |delta|/duration <= max_velocity by construction of duration
    return Trajectory(times, waypoints)
