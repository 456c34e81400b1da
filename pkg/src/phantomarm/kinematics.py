"""Kinematic trees with revolute joints, capsule link geometry, forward
kinematics, and a geometric self-collision check.

The collision check is the ground truth used both to label training data for
the learned correction stage and to vet planned trajectories. Capsules are
the only collision primitive (a sphere is a zero-length capsule); distances
are exact segment-segment distances minus the radii sum.

Model files are JSON documents::

    {
      "root_frame": "root",                # optional, default "root"
      "joints": [ {"name", "parent", "origin": {"quat": [w,x,y,z], "pos": [x,y,z]},
                   "axis": [x,y,z], "lower", "upper", "max_velocity"} ],
      "links":  [ {"joint", "capsule": {"a": [..], "b": [..], "radius"}, "mask": [..]} ]
    }

``parent`` is a joint index, or -1 for the root frame. Angles are radians,
lengths meters. Parent-child and same-joint link pairs are always masked in
addition to whatever the file lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .transforms import RigidTransform, quat_from_axis_angle, quat_mul, quat_normalize, quat_rotate


class ModelError(ValueError):
    """Raised when a model file or structure fails validation."""


class DimensionError(ValueError):
    """Raised when a joint vector does not match the model's joint count."""


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int  # joint index, -1 for the root frame
    origin: RigidTransform
    axis: np.ndarray
    lower: float
    upper: float
    max_velocity: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelError(f"joint '{self.name}': axis must have unit norm")
        if self.lower > self.upper:
            raise ModelError(f"joint '{self.name}': lower > upper")
        object.__setattr__(self, "axis", axis)


@dataclass(frozen=True)
class Capsule:
    """Capsule given by segment endpoints and radius, in some fixed frame."""

    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(3))
        if self.radius <= 0:
            raise ModelError("capsule radius must be > 0")


@dataclass(frozen=True)
class LinkSpec:
    joint: int
    capsule: Capsule
    mask: frozenset = frozenset()  # link indices never collision-tested against


class KinematicModel:
    """Validated joint tree plus capsule links. Immutable after construction."""

    def __init__(self, joints: list[JointSpec], links: list[LinkSpec], root_frame: str = "root",
                 name: str = "model"):
        self.name = name
        self.root_frame = root_frame
        self.joints = list(joints)
        self.links = list(links)
        self._validate_tree()
        self._validate_links()

        self.lowers = np.array([j.lower for j in self.joints])
        self.uppers = np.array([j.upper for j in self.joints])
        self.max_velocities = np.array([j.max_velocity for j in self.joints])
        self.ranges = self.uppers - self.lowers

        self._order = self._topological_order()
        self._effective_masks = self._build_masks()
        self.collision_pairs = [
            (i, j)
            for i in range(len(self.links))
            for j in range(i + 1, len(self.links))
            if j not in self._effective_masks[i]
        ]

        # flat geometry caches for the collision hot path
        self._link_joints = np.array([l.joint for l in self.links], dtype=int)
        self._link_a = np.array([l.capsule.a for l in self.links]).reshape(-1, 3)
        self._link_b = np.array([l.capsule.b for l in self.links]).reshape(-1, 3)
        self._link_r = np.array([l.capsule.radius for l in self.links])
        self._pair_r = np.array(
            [self._link_r[i] + self._link_r[j] for i, j in self.collision_pairs])
        self._pair_i = np.array([i for i, _ in self.collision_pairs], dtype=int)
        self._pair_j = np.array([j for _, j in self.collision_pairs], dtype=int)

        # scalar-math caches for the per-config FK hot path
        self._parents = [j.parent for j in self.joints]
        self._origin_q = [tuple(float(v) for v in j.origin.quat) for j in self.joints]
        self._origin_p = [tuple(float(v) for v in j.origin.pos) for j in self.joints]
        self._axes_t = [tuple(float(v) for v in j.axis) for j in self.joints]
        self._axes = np.array([j.axis for j in self.joints]).reshape(-1, 3)

    # ------------------------------------------------------------------
    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def _validate_tree(self):
        n = len(self.joints)
        for idx, j in enumerate(self.joints):
            if not (-1 <= j.parent < n):
                raise ModelError(f"joint '{j.name}': parent index {j.parent} out of range")
            if j.parent == idx:
                raise ModelError(f"joint '{j.name}': joint is its own parent")
            if not j.lower < j.upper:
                raise ModelError(f"joint '{j.name}': requires lower < upper")
        # every parent chain must terminate at the root without revisiting
        for idx in range(n):
            seen = set()
            cur = idx
            while cur != -1:
                if cur in seen:
                    raise ModelError(f"cycle through joint '{self.joints[idx].name}'")
                seen.add(cur)
                cur = self.joints[cur].parent

    def _validate_links(self):
        n = len(self.joints)
        for k, link in enumerate(self.links):
            if not (0 <= link.joint < n):
                raise ModelError(f"link {k}: joint index {link.joint} out of range")
            for m in link.mask:
                if not (0 <= m < len(self.links)):
                    raise ModelError(f"link {k}: mask index {m} out of range")

    def _topological_order(self) -> list[int]:
        order: list[int] = []
        visited = [False] * len(self.joints)

        def visit(i: int):
            if visited[i]:
                return
            if self.joints[i].parent != -1:
                visit(self.joints[i].parent)
            visited[i] = True
            order.append(i)

        for i in range(len(self.joints)):
            visit(i)
        return order

    def _build_masks(self) -> list[set]:
        """File masks plus automatic same-joint and parent-child masking."""
        masks = [set(l.mask) for l in self.links]
        adjacent = set()
        for i, li in enumerate(self.links):
            for j, lj in enumerate(self.links):
                if i == j:
                    continue
                ji, jj = li.joint, lj.joint
                if ji == jj or self.joints[ji].parent == jj or self.joints[jj].parent == ji:
                    adjacent.add((i, j))
        for i, j in adjacent:
            masks[i].add(j)
            masks[j].add(i)
        for i in range(len(masks)):  # symmetric closure of file masks
            for j in list(masks[i]):
                masks[j].add(i)
        return masks

    # ------------------------------------------------------------------
    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n_joints:
            raise DimensionError(f"expected {self.n_joints} joint values, got {q.shape[0]}")
        if not np.all(np.isfinite(q)):
            raise ValueError("joint values must be finite")
        return q

    def within_limits(self, q) -> bool:
        q = self.check_config(q)
        return bool(np.all(q >= self.lowers - 1e-12) and np.all(q <= self.uppers + 1e-12))

    def clamp(self, q) -> np.ndarray:
        return np.clip(self.check_config(q), self.lowers, self.uppers)


# ----------------------------------------------------------------------
# Forward kinematics
# ----------------------------------------------------------------------

def fk_arrays(model: KinematicModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Allocation-light FK: per-joint root-frame (quats (J,4), positions (J,3)).

    The recursion runs on plain floats; small-array numpy overhead dominates
    session tick profiles otherwise.
    """
    q = model.check_config(q)
    n = model.n_joints
    quats = np.empty((n, 4))
    poss = np.empty((n, 3))
    qv = q.tolist()
    acc_q: list = [None] * n
    acc_p: list = [None] * n
    for i in model._order:
        ow, ox, oy, oz = model._origin_q[i]
        ax, ay, az = model._axes_t[i]
        half = 0.5 * qv[i]
        s = math.sin(half)
        rw, rx, ry, rz = math.cos(half), ax * s, ay * s, az * s
        # local = origin_quat * axis_rotation
        lw = ow * rw - ox * rx - oy * ry - oz * rz
        lx = ow * rx + ox * rw + oy * rz - oz * ry
        ly = ow * ry - ox * rz + oy * rw + oz * rx
        lz = ow * rz + ox * ry - oy * rx + oz * rw
        parent = model._parents[i]
        if parent == -1:
            acc_q[i] = (lw, lx, ly, lz)
            acc_p[i] = model._origin_p[i]
        else:
            pw, px, py, pz = acc_q[parent]
            w = pw * lw - px * lx - py * ly - pz * lz
            x = pw * lx + px * lw + py * lz - pz * ly
            y = pw * ly - px * lz + py * lw + pz * lx
            z = pw * lz + px * ly - py * lx + pz * lw
            norm = math.sqrt(w * w + x * x + y * y + z * z)
            acc_q[i] = (w / norm, x / norm, y / norm, z / norm)
            # rotate the fixed origin offset by the parent frame
            vx, vy, vz = model._origin_p[i]
            tx = 2.0 * (py * vz - pz * vy)
            ty = 2.0 * (pz * vx - px * vz)
            tz = 2.0 * (px * vy - py * vx)
            bx, by, bz = acc_p[parent]
            acc_p[i] = (
                bx + vx + pw * tx + (py * tz - pz * ty),
                by + vy + pw * ty + (pz * tx - px * tz),
                bz + vz + pw * tz + (px * ty - py * tx),
            )
        quats[i] = acc_q[i]
        poss[i] = acc_p[i]
    return quats, poss


def forward_kinematics(model: KinematicModel, q) -> list[RigidTransform]:
    """Root-frame pose of every joint frame.

    Frame i is frame(parent) composed with the joint's fixed origin and the
    rotation by q_i about its axis; root children compose with identity.
    """
    quats, poss = fk_arrays(model, q)
    return [RigidTransform(quats[i], poss[i]) for i in range(model.n_joints)]


def forward_kinematics_batch(model: KinematicModel, Q) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized FK over a batch of configs.

    Returns (quats, positions) with shapes (n, J, 4) and (n, J, 3).
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != model.n_joints:
        raise DimensionError(f"expected (n, {model.n_joints}) configs, got {Q.shape}")
    n = Q.shape[0]
    quats = np.empty((n, model.n_joints, 4))
    poss = np.empty((n, model.n_joints, 3))
    for i in model._order:
        joint = model.joints[i]
        rot = quat_from_axis_angle(joint.axis, Q[:, i])  # (n,4)
        local_q = quat_mul(np.broadcast_to(joint.origin.quat, (n, 4)), rot)
        local_p = np.broadcast_to(joint.origin.pos, (n, 3))
        if joint.parent == -1:
            quats[:, i] = local_q
            poss[:, i] = local_p
        else:
            pq = quats[:, joint.parent]
            pp = poss[:, joint.parent]
            quats[:, i] = quat_normalize(quat_mul(pq, local_q))
            poss[:, i] = pp + quat_rotate(pq, local_p)
    return quats, poss


def link_capsules_world(model: KinematicModel, frames: list[RigidTransform]) -> list[Capsule]:
    """Link capsules expressed in the root frame for a given FK result."""
    out = []
    for link in model.links:
        f = frames[link.joint]
        out.append(Capsule(f.apply(link.capsule.a), f.apply(link.capsule.b), link.capsule.radius))
    return out


# ----------------------------------------------------------------------
# Capsule geometry
# ----------------------------------------------------------------------

_EPS = 1e-12


def segment_distance(p1, q1, p2, q2) -> float:
    """Exact minimum distance between segments [p1,q1] and [p2,q2]."""
    p1 = np.asarray(p1, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a <= _EPS and e <= _EPS:
        return float(np.linalg.norm(r))
    if a <= _EPS:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e <= _EPS:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > _EPS else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    closest1 = p1 + s * d1
    closest2 = p2 + t * d2
    return float(np.linalg.norm(closest1 - closest2))


def segment_distance_batch(p1, q1, p2, q2) -> np.ndarray:
    """Vectorized segment-segment distance over (n,3) endpoint arrays."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)

    a_deg = a <= _EPS
    e_deg = e <= _EPS
    denom = a * e - b * b
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)
    denom_safe = np.where(denom > _EPS, denom, 1.0)

    s = np.where(denom > _EPS, np.clip((b * f - c * e) / denom_safe, 0.0, 1.0), 0.0)
    t = (b * s + f) / e_safe
    s = np.where(t < 0.0, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate segments fall back to point-vs-segment
    s = np.where(a_deg, 0.0, s)
    t = np.where(a_deg, np.clip(f / e_safe, 0.0, 1.0), t)
    t = np.where(e_deg, 0.0, t)
    s = np.where(e_deg & ~a_deg, np.clip(-c / a_safe, 0.0, 1.0), s)
    t = np.where(a_deg & e_deg, 0.0, t)
    s = np.where(a_deg & e_deg, 0.0, s)

    diff = (p1 + s[:, None] * d1) - (p2 + t[:, None] * d2)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Separation between capsule surfaces; negative values bound penetration."""
    return segment_distance(a.a, a.b, b.a, b.b) - (a.radius + b.radius)


# ----------------------------------------------------------------------
# Self collision
# ----------------------------------------------------------------------

def labels_from_fk(model: KinematicModel, quats: np.ndarray, poss: np.ndarray) -> np.ndarray:
    """Collision labels for one config given its FK arrays."""
    labels = np.zeros(model.n_links, dtype=bool)
    if not model.collision_pairs:
        return labels
    lj = model._link_joints
    fq = quats[lj]
    fp = poss[lj]
    ends_a = fp + quat_rotate(fq, model._link_a)
    ends_b = fp + quat_rotate(fq, model._link_b)
    i, j = model._pair_i, model._pair_j
    d = segment_distance_batch(ends_a[i], ends_b[i], ends_a[j], ends_b[j])
    hit = d < model._pair_r
    labels[i[hit]] = True
    labels[j[hit]] = True
    return labels


def check_self_collision(model: KinematicModel, q) -> np.ndarray:
    """Per-link collision labels: label i is true iff capsule i intersects any
    capsule outside its mask. Labels are symmetric by construction."""
    quats, poss = fk_arrays(model, q)
    return labels_from_fk(model, quats, poss)


def check_self_collision_batch(model: KinematicModel, Q) -> np.ndarray:
    """(n, m) collision labels for a batch of configs."""
    quats, poss = forward_kinematics_batch(model, Q)
    n = quats.shape[0]
    ends_a = np.empty((n, model.n_links, 3))
    ends_b = np.empty((n, model.n_links, 3))
    radii = np.empty(model.n_links)
    for k, link in enumerate(model.links):
        fq = quats[:, link.joint]
        fp = poss[:, link.joint]
        ends_a[:, k] = fp + quat_rotate(fq, link.capsule.a)
        ends_b[:, k] = fp + quat_rotate(fq, link.capsule.b)
        radii[k] = link.capsule.radius
    labels = np.zeros((n, model.n_links), dtype=bool)
    for i, j in model.collision_pairs:
        d = segment_distance_batch(ends_a[:, i], ends_b[:, i], ends_a[:, j], ends_b[:, j])
        hit = d < (radii[i] + radii[j])
        labels[hit, i] = True
        labels[hit, j] = True
    return labels


# ----------------------------------------------------------------------
# Loading / saving / composing
# ----------------------------------------------------------------------

def model_from_dict(doc: dict, name: str = "model") -> KinematicModel:
    try:
        joints_doc = doc["joints"]
        links_doc = doc.get("links", [])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"model document missing field: {exc}") from exc

    joints = []
    for k, jd in enumerate(joints_doc):
        try:
            origin = RigidTransform(
                np.asarray(jd["origin"]["quat"], dtype=float),
                np.asarray(jd["origin"]["pos"], dtype=float),
            )
            joints.append(
                JointSpec(
                    name=jd["name"],
                    parent=int(jd["parent"]),
                    origin=origin,
                    axis=np.asarray(jd["axis"], dtype=float),
                    lower=float(jd["lower"]),
                    upper=float(jd["upper"]),
                    max_velocity=float(jd["max_velocity"]),
                )
            )
        except KeyError as exc:
            raise ModelError(f"joint {k}: missing field {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ModelError(f"joint {k}: {exc}") from exc

    links = []
    for k, ld in enumerate(links_doc):
        try:
            cap = ld["capsule"]
            links.append(
                LinkSpec(
                    joint=int(ld["joint"]),
                    capsule=Capsule(cap["a"], cap["b"], float(cap["radius"])),
                    mask=frozenset(int(m) for m in ld.get("mask", [])),
                )
            )
        except KeyError as exc:
            raise ModelError(f"link {k}: missing field {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ModelError(f"link {k}: {exc}") from exc

    return KinematicModel(
        joints, links, root_frame=doc.get("root_frame", "root"), name=doc.get("name", name)
    )


def model_to_dict(model: KinematicModel) -> dict:
    return {
        "name": model.name,
        "root_frame": model.root_frame,
        "joints": [
            {
                "name": j.name,
                "parent": j.parent,
                "origin": j.origin.to_dict(),
                "axis": [float(v) for v in j.axis],
                "lower": j.lower,
                "upper": j.upper,
                "max_velocity": j.max_velocity,
            }
            for j in model.joints
        ],
        "links": [
            {
                "joint": l.joint,
                "capsule": {
                    "a": [float(v) for v in l.capsule.a],
                    "b": [float(v) for v in l.capsule.b],
                    "radius": l.capsule.radius,
                },
                "mask": sorted(l.mask),
            }
            for l in model.links
        ],
    }


def load_model(path) -> KinematicModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(doc, name=path.stem)


def save_model(model: KinematicModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def bundled_model_path(name: str) -> Path:
    """Path to a model shipped with the package ("hand16", "arm6", "armhand22")."""
    base = resources.files("phantomarm") / "models" / f"{name}.json"
    return Path(str(base))


def load_bundled(name: str) -> KinematicModel:
    return load_model(bundled_model_path(name))


def attach_model(base: KinematicModel, tool: KinematicModel, mount_joint: int,
                 mount_offset: RigidTransform | None = None, name: str = "combined") -> KinematicModel:
    """Mount ``tool`` on joint ``mount_joint`` of ``base`` (e.g. a hand on an
    arm tip). Tool joint and link indices are shifted past the base's."""
    if not (0 <= mount_joint < base.n_joints):
        raise ModelError(f"mount joint {mount_joint} out of range")
    offset = mount_offset or RigidTransform.identity()
    nj = base.n_joints
    nl = base.n_links
    joints = list(base.joints)
    for j in tool.joints:
        if j.parent == -1:
            parent, origin = mount_joint, offset.compose(j.origin)
        else:
            parent, origin = j.parent + nj, j.origin
        joints.append(JointSpec(f"{tool.name}.{j.name}", parent, origin, j.axis, j.lower, j.upper, j.max_velocity))
    links = list(base.links)
    for l in tool.links:
        links.append(LinkSpec(l.joint + nj, l.capsule, frozenset(m + nl for m in l.mask)))
    return KinematicModel(joints, links, root_frame=base.root_frame, name=name)
