import json

import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial.transform import Rotation

from phantomarm.kinematics import (
    Capsule,
    DimensionError,
    JointSpec,
    KinematicModel,
    LinkSpec,
    ModelError,
    capsule_distance,
    check_self_collision,
    check_self_collision_batch,
    forward_kinematics,
    forward_kinematics_batch,
    link_capsules_world,
    load_bundled,
    load_model,
    model_from_dict,
    model_to_dict,
    segment_distance,
)
from phantomarm.transforms import RigidTransform

from conftest import make_folding_finger, random_tree_model


# ---------------------------------------------------------------------------
# Independent FK oracle: naive 4x4 homogeneous matrix products via scipy
# ---------------------------------------------------------------------------

def _oracle_order(model):
    order, placed = [], set()
    while len(order) < model.n_joints:
        for i in range(model.n_joints):
            if i in placed:
                continue
            if model.joints[i].parent == -1 or model.joints[i].parent in placed:
                order.append(i)
                placed.add(i)
    return order


def fk_matrix_oracle(model, q):
    mats = [None] * model.n_joints
    for i in _oracle_order(model):
        joint = model.joints[i]
        origin = np.eye(4)
        wq = joint.origin.quat
        origin[:3, :3] = Rotation.from_quat([wq[1], wq[2], wq[3], wq[0]]).as_matrix()
        origin[:3, 3] = joint.origin.pos
        spin = np.eye(4)
        spin[:3, :3] = Rotation.from_rotvec(np.asarray(joint.axis) * q[i]).as_matrix()
        local = origin @ spin
        mats[i] = local if joint.parent == -1 else mats[joint.parent] @ local
    return mats


def test_fk_zero_config_single_joint_is_identity():
    m = KinematicModel([JointSpec("j", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0)], [])
    f = forward_kinematics(m, [0.0])[0]
    npt.assert_allclose(f.to_matrix(), np.eye(4), atol=1e-15)


def test_fk_quarter_turn_child_offset():
    joints = [
        JointSpec("root", -1, RigidTransform.identity(), [0, 0, 1], -3.2, 3.2, 1.0),
        JointSpec("child", 0, RigidTransform(pos=[1.0, 0.0, 0.0]), [0, 0, 1], -3.2, 3.2, 1.0),
    ]
    m = KinematicModel(joints, [])
    frames = forward_kinematics(m, [np.pi / 2, 0.0])
    # the child mount point (1,0,0) lands at (0,1,0) once the parent rotates
    npt.assert_allclose(frames[0].apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)
    npt.assert_allclose(frames[1].pos, [0.0, 1.0, 0.0], atol=1e-12)
    # and the child frame orientation follows the rotated parent
    npt.assert_allclose(frames[1].quat, frames[0].quat, atol=1e-12)


def test_fk_matches_matrix_oracle_random_chain():
    rng = np.random.default_rng(21)
    for _ in range(20):
        m = random_tree_model(rng, max_joints=5)
        q = rng.uniform(m.lowers, m.uppers)
        frames = forward_kinematics(m, q)
        oracle = fk_matrix_oracle(m, q)
        for f, om in zip(frames, oracle):
            npt.assert_allclose(f.to_matrix(), om, atol=1e-9)


def test_fk_batch_matches_scalar():
    rng = np.random.default_rng(22)
    m = random_tree_model(rng, max_joints=6)
    Q = rng.uniform(m.lowers, m.uppers, size=(40, m.n_joints))
    quats, poss = forward_kinematics_batch(m, Q)
    for k in (0, 17, 39):
        frames = forward_kinematics(m, Q[k])
        for j, f in enumerate(frames):
            npt.assert_allclose(poss[k, j], f.pos, atol=1e-12)
            assert min(np.linalg.norm(quats[k, j] - f.quat),
                       np.linalg.norm(quats[k, j] + f.quat)) < 1e-12


def test_fk_determinism_bitwise():
    rng = np.random.default_rng(23)
    m = random_tree_model(rng, max_joints=8)
    q = rng.uniform(m.lowers, m.uppers)
    a = forward_kinematics(m, q)
    b = forward_kinematics(m, q)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.quat, fb.quat)
        assert np.array_equal(fa.pos, fb.pos)


def test_fk_locality_only_subtree_moves():
    rng = np.random.default_rng(24)
    for _ in range(10):
        m = random_tree_model(rng, max_joints=7)
        q = rng.uniform(m.lowers, m.uppers)
        i = int(rng.integers(m.n_joints))
        q2 = q.copy()
        q2[i] = rng.uniform(m.joints[i].lower, m.joints[i].upper)

        def in_subtree(j):
            while j != -1:
                if j == i:
                    return True
                j = m.joints[j].parent
            return False

        fa = forward_kinematics(m, q)
        fb = forward_kinematics(m, q2)
        for j in range(m.n_joints):
            same = np.allclose(fa[j].to_matrix(), fb[j].to_matrix(), atol=1e-12)
            if j == i:
                continue  # its own frame moves iff q actually changed
            if not in_subtree(j):
                assert same, f"joint {j} outside subtree of {i} moved"


def test_fk_dimension_error():
    m = make_folding_finger()
    with pytest.raises(DimensionError):
        forward_kinematics(m, [0.0, 0.0])


# ---------------------------------------------------------------------------
# Capsule distances
# ---------------------------------------------------------------------------

def grid_min_distance(c1: Capsule, c2: Capsule, base: int = 1000, refine_levels: int = 3):
    """Dense parameter-grid minimization; squared distance is convex in
    (s, t), so refinement around the coarse argmin brackets the optimum."""
    d1 = c1.b - c1.a
    d2 = c2.b - c2.a

    def eval_grid(s_lo, s_hi, t_lo, t_hi, n):
        s = np.linspace(s_lo, s_hi, n)
        t = np.linspace(t_lo, t_hi, n)
        p = c1.a[None, None, :] + s[:, None, None] * d1
        q = c2.a[None, None, :] + t[None, :, None] * d2
        d = np.linalg.norm(p - q, axis=-1)
        idx = np.unravel_index(np.argmin(d), d.shape)
        return d[idx], s[idx[0]], t[idx[1]], (s_hi - s_lo) / (n - 1), (t_hi - t_lo) / (n - 1)

    best, s0, t0, hs, ht = eval_grid(0.0, 1.0, 0.0, 1.0, base)
    for _ in range(refine_levels):
        s_lo, s_hi = max(0.0, s0 - 2 * hs), min(1.0, s0 + 2 * hs)
        t_lo, t_hi = max(0.0, t0 - 2 * ht), min(1.0, t0 + 2 * ht)
        best, s0, t0, hs, ht = eval_grid(s_lo, s_hi, t_lo, t_hi, 101)
    return best - (c1.radius + c2.radius)


def test_capsule_distance_trivial_cases():
    c = Capsule([0, 0, 0], [1, 0, 0], 1.0)
    assert capsule_distance(c, c) == pytest.approx(-2.0)
    s1 = Capsule([0, 0, 0], [0, 0, 0], 1.0)
    s2 = Capsule([3, 0, 0], [3, 0, 0], 1.0)
    assert capsule_distance(s1, s2) == pytest.approx(1.0)
    para = Capsule([0, 3.0, 0], [1, 3.0, 0], 1.0)
    assert capsule_distance(c, para) == pytest.approx(1.0)


def test_capsule_distance_skew_matches_grid_oracle():
    rng = np.random.default_rng(25)
    for _ in range(30):
        c1 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.3))
        c2 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.3))
        assert capsule_distance(c1, c2) == pytest.approx(grid_min_distance(c1, c2, base=300), abs=1e-6)


def test_capsule_distance_symmetric():
    rng = np.random.default_rng(26)
    for _ in range(50):
        c1 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.3))
        c2 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.3))
        assert capsule_distance(c1, c2) == pytest.approx(capsule_distance(c2, c1), abs=1e-12)


def test_capsule_distance_monotone_along_separating_direction():
    rng = np.random.default_rng(27)
    tried = 0
    while tried < 30:
        c1 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), 0.05)
        c2 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), 0.05)
        if capsule_distance(c1, c2) <= 0.01:
            continue
        tried += 1
        # separating direction from closest points, recovered via tiny probes
        center1 = 0.5 * (c1.a + c1.b)
        center2 = 0.5 * (c2.a + c2.b)
        direction = center2 - center1
        norm = np.linalg.norm(direction)
        if norm < 1e-6:
            continue
        direction = direction / norm
        prev = capsule_distance(c1, c2)
        for step in (0.1, 0.2, 0.4):
            shifted = Capsule(c2.a + step * direction, c2.b + step * direction, c2.radius)
            cur = capsule_distance(c1, shifted)
            assert cur > prev
            prev = cur


def test_segment_distance_batch_matches_scalar():
    rng = np.random.default_rng(28)
    p1 = rng.uniform(-1, 1, (200, 3))
    q1 = rng.uniform(-1, 1, (200, 3))
    p2 = rng.uniform(-1, 1, (200, 3))
    q2 = rng.uniform(-1, 1, (200, 3))
    # mix in degenerate segments
    q1[:20] = p1[:20]
    q2[10:30] = p2[10:30]
    from phantomarm.kinematics import segment_distance_batch

    batch = segment_distance_batch(p1, q1, p2, q2)
    for i in range(200):
        assert batch[i] == pytest.approx(segment_distance(p1[i], q1[i], p2[i], q2[i]), abs=1e-12)


# ---------------------------------------------------------------------------
# Self collision
# ---------------------------------------------------------------------------

def sampled_capsule_gap(c1: Capsule, c2: Capsule, n: int = 10_000):
    """Point-sampling oracle: densely sample both axes, min pairwise distance
    minus radii. Tolerance is one sample spacing."""
    s = np.linspace(0.0, 1.0, n)
    pts1 = c1.a[None, :] + s[:, None] * (c1.b - c1.a)
    pts2 = c2.a[None, :] + s[:, None] * (c2.b - c2.a)
    best = np.inf
    for chunk in np.array_split(pts1, 10):
        d = np.sqrt(((chunk[:, None, :] - pts2[None, :, :]) ** 2).sum(-1))
        best = min(best, float(d.min()))
    spacing = max(np.linalg.norm(c1.b - c1.a), np.linalg.norm(c2.b - c2.a)) / (n - 1)
    return best - (c1.radius + c2.radius), spacing


def test_two_separated_parallel_capsules_no_collision():
    joints = [
        JointSpec("a", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
        JointSpec("b", -1, RigidTransform(pos=[0.0, 3.0, 0.0]), [0, 0, 1], -1, 1, 1.0),
    ]
    links = [
        LinkSpec(0, Capsule([0, 0, 0], [1, 0, 0], 1.0)),
        LinkSpec(1, Capsule([0, 0, 0], [1, 0, 0], 1.0)),
    ]
    m = KinematicModel(joints, links)
    assert check_self_collision(m, [0.0, 0.0]).tolist() == [False, False]


def test_two_coincident_capsules_collide():
    joints = [
        JointSpec("a", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
        JointSpec("b", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
    ]
    links = [
        LinkSpec(0, Capsule([0, 0, 0], [1, 0, 0], 0.5)),
        LinkSpec(1, Capsule([0, 0, 0], [1, 0, 0], 0.5)),
    ]
    m = KinematicModel(joints, links)
    assert check_self_collision(m, [0.0, 0.0]).tolist() == [True, True]


def test_folded_finger_labels_match_point_sampling_oracle(finger3):
    rng = np.random.default_rng(29)
    configs = [np.array([0.0, 2.6, 2.6])]  # folded onto itself
    configs += [rng.uniform(finger3.lowers, finger3.uppers) for _ in range(5)]
    for q in configs:
        frames = forward_kinematics(finger3, q)
        caps = link_capsules_world(finger3, frames)
        labels = check_self_collision(finger3, q)
        oracle = np.zeros(finger3.n_links, dtype=bool)
        skip = False
        for i, j in finger3.collision_pairs:
            gap, spacing = sampled_capsule_gap(caps[i], caps[j])
            if abs(gap) <= spacing:  # within oracle resolution, skip config
                skip = True
                break
            if gap < 0:
                oracle[i] = oracle[j] = True
        if not skip:
            assert labels.tolist() == oracle.tolist(), f"config {q}"


def test_folded_finger_actually_collides(finger3):
    labels = check_self_collision(finger3, [0.0, 2.6, 2.6])
    assert labels[0] and labels[2]


def test_masked_pairs_never_labeled():
    joints = [
        JointSpec("a", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
        JointSpec("b", -1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
    ]
    links = [
        LinkSpec(0, Capsule([0, 0, 0], [1, 0, 0], 0.5), mask=frozenset({1})),
        LinkSpec(1, Capsule([0, 0, 0], [1, 0, 0], 0.5)),
    ]
    m = KinematicModel(joints, links)
    assert m.collision_pairs == []
    assert check_self_collision(m, [0.0, 0.0]).tolist() == [False, False]


def test_adjacent_links_masked_by_default(finger3):
    # parent-child joints never tested against each other
    for i, j in finger3.collision_pairs:
        ji, jj = finger3.links[i].joint, finger3.links[j].joint
        assert finger3.joints[ji].parent != jj and finger3.joints[jj].parent != ji


def test_batch_collision_matches_scalar(finger3):
    rng = np.random.default_rng(30)
    Q = rng.uniform(finger3.lowers, finger3.uppers, size=(100, 3))
    batch = check_self_collision_batch(finger3, Q)
    for k in range(100):
        npt.assert_array_equal(batch[k], check_self_collision(finger3, Q[k]))


def test_collision_labels_symmetric(finger3):
    # a label implies a partner outside the mask is also labeled
    rng = np.random.default_rng(31)
    Q = rng.uniform(finger3.lowers, finger3.uppers, size=(200, 3))
    labels = check_self_collision_batch(finger3, Q)
    for row in labels:
        assert row.sum() != 1


# ---------------------------------------------------------------------------
# Model loading
# ---------------------------------------------------------------------------

def test_bundled_models_load():
    hand = load_bundled("hand16")
    arm = load_bundled("arm6")
    combined = load_bundled("armhand22")
    assert hand.n_joints == 16 and hand.n_links == 12
    assert arm.n_joints == 6
    assert combined.n_joints == 22


def test_model_round_trip(tmp_path, finger3):
    doc = model_to_dict(finger3)
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    back = load_model(path)
    assert back.n_joints == finger3.n_joints
    q = np.array([0.3, -0.4, 1.1])
    for fa, fb in zip(forward_kinematics(finger3, q), forward_kinematics(back, q)):
        npt.assert_allclose(fa.to_matrix(), fb.to_matrix(), atol=0)


def test_load_errors_name_the_problem(tmp_path):
    bad = {"joints": [{"name": "j", "parent": 0, "origin": {"quat": [1, 0, 0, 0], "pos": [0, 0, 0]},
                       "axis": [0, 0, 1], "lower": -1, "upper": 1, "max_velocity": 1}], "links": []}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(ModelError, match="own parent"):
        load_model(p)

    bad["joints"][0]["parent"] = -1
    bad["joints"][0]["lower"] = 2.0
    p.write_text(json.dumps(bad))
    with pytest.raises(ModelError, match="lower"):
        load_model(p)

    bad["joints"][0]["lower"] = -1.0
    bad["joints"][0]["axis"] = [0, 0, 2]
    p.write_text(json.dumps(bad))
    with pytest.raises(ModelError, match="axis"):
        load_model(p)

    del bad["joints"][0]["axis"]
    p.write_text(json.dumps(bad))
    with pytest.raises(ModelError, match="missing field"):
        load_model(p)


def test_cycle_detected():
    with pytest.raises(ModelError, match="cycle|parent"):
        joints = [
            JointSpec("a", 1, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
            JointSpec("b", 0, RigidTransform.identity(), [0, 0, 1], -1, 1, 1.0),
        ]
        KinematicModel(joints, [])


def test_zero_radius_capsule_rejected():
    with pytest.raises(ModelError):
        Capsule([0, 0, 0], [1, 0, 0], 0.0)
