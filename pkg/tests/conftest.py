import os

# acceptance criteria are stated single-threaded; pin BLAS before numpy loads
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from phantomarm.kinematics import Capsule, JointSpec, KinematicModel, LinkSpec
from phantomarm.transforms import RigidTransform


def make_folding_finger(n_joints: int = 3, seg: float = 0.1, radius: float = 0.015,
                        lower: float = -2.9, upper: float = 2.9) -> KinematicModel:
    """Planar finger that folds onto itself; distal links hit proximal ones."""
    joints = []
    links = []
    for i in range(n_joints):
        origin = RigidTransform(pos=[0.0 if i == 0 else seg, 0.0, 0.0])
        joints.append(JointSpec(f"j{i}", i - 1, origin, [0, 1, 0], lower, upper, 4.0))
        links.append(LinkSpec(i, Capsule([0.01, 0, 0], [seg - 0.01, 0, 0], radius)))
    return KinematicModel(joints, links, root_frame="root", name=f"finger{n_joints}")


def random_tree_model(rng: np.random.Generator, max_joints: int = 8,
                      with_links: bool = False) -> KinematicModel:
    """Random kinematic tree with random origins and axes."""
    from phantomarm.transforms import random_transform

    n = int(rng.integers(1, max_joints + 1))
    joints = []
    links = []
    for i in range(n):
        parent = -1 if i == 0 else int(rng.integers(-1, i))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        lower = float(rng.uniform(-3.0, -0.1))
        upper = float(rng.uniform(0.1, 3.0))
        joints.append(
            JointSpec(f"j{i}", parent, random_transform(rng, 0.3), axis, lower, upper,
                      float(rng.uniform(0.5, 5.0)))
        )
        if with_links:
            a = rng.uniform(-0.05, 0.05, 3)
            b = rng.uniform(-0.05, 0.05, 3)
            links.append(LinkSpec(i, Capsule(a, b, float(rng.uniform(0.005, 0.03)))))
    return KinematicModel(joints, links)


@pytest.fixture(scope="session")
def finger3() -> KinematicModel:
    return make_folding_finger()
