#!/usr/bin/env python3
"""Regenerate the bundled robot models and the default hand mapping config.

Writes hand16.json, arm6.json, armhand22.json and hand16_mapping.json into
src/phantomarm/models/, then prints self-collision statistics for the hand
so geometry changes can be sanity-checked.
"""

import json
from pathlib import Path

import numpy as np

from phantomarm.kinematics import (
    Capsule,
    JointSpec,
    KinematicModel,
    LinkSpec,
    attach_model,
    check_self_collision_batch,
    model_to_dict,
)
from phantomarm.transforms import RigidTransform, quat_from_axis_angle

MODELS_DIR = Path(__file__).resolve().parents[1] / "src" / "phantomarm" / "models"

FINGER_VMAX = 8.0


def _origin(pos, axis=None, angle=0.0):
    if axis is None:
        return RigidTransform(pos=np.asarray(pos, dtype=float))
    return RigidTransform(quat_from_axis_angle(np.asarray(axis, dtype=float), angle), pos)


def build_hand16() -> KinematicModel:
    # geometry tuned so uniform sampling self-collides in roughly 30% of
    # configs with contacts deep enough for the predictor to learn cleanly
    joints = []
    links = []

    def add_finger(name, base_y):
        base = len(joints)
        joints.append(JointSpec(f"{name}_mcp", -1, _origin([0.0, base_y, 0.0]),
                                [0, 1, 0], -0.35, 2.1, FINGER_VMAX))
        joints.append(JointSpec(f"{name}_abd", base, _origin([0.01, 0.0, 0.0]),
                                [0, 0, 1], -0.5, 0.5, FINGER_VMAX))
        joints.append(JointSpec(f"{name}_pip", base + 1, _origin([0.05, 0.0, 0.0]),
                                [0, 1, 0], -0.3, 2.0, FINGER_VMAX))
        joints.append(JointSpec(f"{name}_dip", base + 2, _origin([0.04, 0.0, 0.0]),
                                [0, 1, 0], -0.3, 1.9, FINGER_VMAX))
        links.append(LinkSpec(base + 1, Capsule([0.005, 0, 0], [0.045, 0, 0], 0.011)))
        links.append(LinkSpec(base + 2, Capsule([0.004, 0, 0], [0.036, 0, 0], 0.010)))
        links.append(LinkSpec(base + 3, Capsule([0.004, 0, 0], [0.032, 0, 0], 0.010)))

    add_finger("index", 0.055)
    add_finger("middle", 0.0)
    add_finger("ring", -0.055)

    # opposed thumb, angled across the palm from beside the index finger
    base = len(joints)
    joints.append(JointSpec("thumb_cmc", -1, _origin([0.0, 0.12, -0.05], [0, 0, 1], -0.9),
                            [0, 0, 1], -0.5, 0.6, FINGER_VMAX))
    joints.append(JointSpec("thumb_roll", base, _origin([0.012, 0.0, 0.0]),
                            [1, 0, 0], -0.7, 0.7, FINGER_VMAX))
    joints.append(JointSpec("thumb_mcp", base + 1, _origin([0.02, 0.0, 0.0]),
                            [0, 1, 0], -0.4, 1.9, FINGER_VMAX))
    joints.append(JointSpec("thumb_ip", base + 2, _origin([0.045, 0.0, 0.0]),
                            [0, 1, 0], -0.3, 1.8, FINGER_VMAX))
    links.append(LinkSpec(base + 1, Capsule([0.004, 0, 0], [0.042, 0, 0], 0.012)))
    links.append(LinkSpec(base + 2, Capsule([0.004, 0, 0], [0.04, 0, 0], 0.011)))
    links.append(LinkSpec(base + 3, Capsule([0.004, 0, 0], [0.032, 0, 0], 0.010)))

    return KinematicModel(joints, links, root_frame="palm", name="hand16")


def build_arm6() -> KinematicModel:
    joints = [
        JointSpec("shoulder_yaw", -1, _origin([0, 0, 0.10]), [0, 0, 1], -2.9, 2.9, 2.0),
        JointSpec("shoulder_pitch", 0, _origin([0, 0, 0.08]), [0, 1, 0], -2.0, 2.0, 2.0),
        JointSpec("elbow", 1, _origin([0, 0, 0.30]), [0, 1, 0], -2.4, 2.4, 2.5),
        JointSpec("wrist_roll", 2, _origin([0, 0, 0.25]), [0, 0, 1], -3.0, 3.0, 3.0),
        JointSpec("wrist_pitch", 3, _origin([0, 0, 0.06]), [0, 1, 0], -1.8, 1.8, 3.0),
        JointSpec("wrist_yaw", 4, _origin([0, 0, 0.06]), [0, 0, 1], -3.0, 3.0, 3.0),
    ]
    links = [
        LinkSpec(0, Capsule([0, 0, -0.08], [0, 0, 0.04], 0.05)),
        LinkSpec(1, Capsule([0, 0, 0.02], [0, 0, 0.28], 0.045)),
        LinkSpec(2, Capsule([0, 0, 0.02], [0, 0, 0.23], 0.04)),
        LinkSpec(4, Capsule([0, 0, 0.0], [0, 0, 0.05], 0.035)),
    ]
    return KinematicModel(joints, links, root_frame="base", name="arm6")


def default_hand_mapping() -> dict:
    # glove layout: fingers thumb/index/middle/ring/pinky, 4 channels each
    # [MCP, PIP, DIP, ABD]; channels 20..26 are wrist/palm extras
    FLEX = (-0.3, 2.3)
    ABD = (-0.5, 0.5)
    glove_base = {"thumb": 0, "index": 4, "middle": 8, "ring": 12}
    entries = []

    def entry(robot_joint, channel, direction, rng):
        entries.append(
            {
                "robot_joint": robot_joint,
                "glove_channel": channel,
                "direction": direction,
                "glove_min": rng[0],
                "glove_max": rng[1],
            }
        )

    for f, finger in enumerate(("index", "middle", "ring")):
        g = glove_base[finger]
        abd_dir = -1 if finger == "ring" else 1
        entry(4 * f + 0, g + 0, 1, FLEX)      # mcp flexion
        entry(4 * f + 1, g + 3, abd_dir, ABD)  # abduction
        entry(4 * f + 2, g + 1, 1, FLEX)      # pip
        entry(4 * f + 3, g + 2, 1, FLEX)      # dip
    g = glove_base["thumb"]
    entry(12, g + 3, 1, ABD)   # cmc swing from thumb abduction
    entry(13, g + 0, 1, FLEX)  # roll from thumb mcp
    entry(14, g + 1, 1, FLEX)  # mcp from thumb pip
    entry(15, g + 2, 1, FLEX)  # ip from thumb dip
    return {"entries": entries}


def _look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera pose looking along +z toward a target point."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    from phantomarm.transforms import quat_from_matrix

    return RigidTransform(quat_from_matrix(np.column_stack([x, y, z])), position)


def default_scene() -> dict:
    intr = {"fx": 420.0, "fy": 420.0, "cx": 320.0, "cy": 240.0}
    top = _look_at([0.45, 0.0, 1.1], [0.45, 0.0, 0.0], up=(1.0, 0.0, 0.0))
    third = _look_at([1.3, 0.9, 0.6], [0.4, 0.0, 0.3])
    return {
        "robot_model": "bundled:armhand22",
        "hand_model": "bundled:hand16",
        "hand_joints_offset": 6,
        "mapping": "bundled:hand16_mapping",
        "networks": None,
        "cameras": [
            {"name": "top", "intrinsics": intr, "pose_source": "fixed", "pose": top.to_dict()},
            {"name": "third", "intrinsics": intr, "pose_source": "floating",
             "true_pose": third.to_dict()},
        ],
        "tag_pose": RigidTransform(pos=[0.5, -0.3, 0.0]).to_dict(),
        "rate_hz": 60.0,
        "gate_threshold": 0.25,
        "seed": 0,
        "task": "default-scene",
    }


def main():
    MODELS_DIR.mkdir(parents=True, exist_ok=True)
    hand = build_hand16()
    arm = build_arm6()
    combined = attach_model(arm, hand, mount_joint=5,
                            mount_offset=RigidTransform(pos=[0, 0, 0.04]), name="armhand22")

    for model, fname in ((hand, "hand16.json"), (arm, "arm6.json"), (combined, "armhand22.json")):
        (MODELS_DIR / fname).write_text(json.dumps(model_to_dict(model), indent=1))
        print(f"wrote {fname}: {model.n_joints} joints, {model.n_links} links, "
              f"{len(model.collision_pairs)} tested pairs")

    (MODELS_DIR / "hand16_mapping.json").write_text(json.dumps(default_hand_mapping(), indent=1))
    print("wrote hand16_mapping.json")

    (MODELS_DIR / "scene_default.json").write_text(json.dumps(default_scene(), indent=1))
    print("wrote scene_default.json")

    rng = np.random.default_rng(12345)
    n = 20000
    Q = rng.uniform(hand.lowers, hand.uppers, size=(n, hand.n_joints))
    labels = check_self_collision_batch(hand, Q)
    print(f"\nhand16 uniform-sample stats (n={n}):")
    print(f"  any-collision rate: {labels.any(axis=1).mean():.3f}")
    for k in range(hand.n_links):
        print(f"  link {k:2d} ({hand.joints[hand.links[k].joint].name}): "
              f"positive rate {labels[:, k].mean():.3f}")


if __name__ == "__main__":
    main()
