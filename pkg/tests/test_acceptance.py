"""Acceptance suite: one test per release criterion.

Each test prints a PASS/FAIL line with the measured numbers (run with -s to
see them live). The expensive fixtures (200k-sample dataset, trained
networks) are shared across criteria. Figures and CSV reports land in
test_reports/ at the repo root.
"""

import json
import time
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest
from scipy.spatial.transform import Rotation

from phantomarm.calibration import (
    FIXED_CAM,
    FLOAT_CAM,
    float_recovery_error,
    observe_tag,
    random_scene,
    solve_float_to_base,
    solve_tag_to_base,
)
from phantomarm.collision_net import (
    TrainingConfig,
    bce_loss_grad,
    composite_loss_grad,
    correct,
    generate_dataset,
    train_corrector,
    train_predictor,
)
from phantomarm.kinematics import (
    Capsule,
    bundled_model_path,
    capsule_distance,
    check_self_collision,
    check_self_collision_batch,
    forward_kinematics,
    link_capsules_world,
    load_bundled,
)
from phantomarm.mlp import init_mlp
from phantomarm.retarget import GLOVE_CHANNELS, GloveSample, WristSample, build_mapping, load_mapping, map_hand
from phantomarm.service import load_scene, replay
from phantomarm.session import InputTick, PedalDown, PedalUp, Phase, TeleopSession, TrajectoryDone
from phantomarm.streams import ScriptedSource, circle_wrist, record_trace
from phantomarm.transforms import RigidTransform

from conftest import make_folding_finger, random_tree_model
from test_kinematics import fk_matrix_oracle, grid_min_distance
from test_mlp import _flat_grads, _grad_check
from test_session import identity_mapping

REPORTS = Path(__file__).resolve().parents[1] / "test_reports"
REPORTS.mkdir(exist_ok=True)

DATASET_SEED = 7
TRAIN_SEED = 3


def report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="session")
def trained_nets():
    """200k-sample dataset on the bundled hand plus both trained networks."""
    hand = load_bundled("hand16")
    t0 = time.perf_counter()
    dataset = generate_dataset(hand, 200_000, seed=DATASET_SEED)
    predictor, pred_report = train_predictor(dataset, TrainingConfig(seed=TRAIN_SEED))
    predictor_wall = time.perf_counter() - t0
    corrector, corr_report = train_corrector(dataset, predictor, hand, TrainingConfig(seed=TRAIN_SEED))
    return {
        "hand": hand,
        "dataset": dataset,
        "predictor": predictor,
        "corrector": corrector,
        "predictor_wall_s": predictor_wall,
        "pred_report": pred_report,
        "corr_report": corr_report,
    }


# ---------------------------------------------------------------------------
# 1. Endpoint mapping property
# ---------------------------------------------------------------------------

def test_endpoint_mapping_property():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        corr, granges, rlimits = [], [], []
        for i in range(n):
            gmin = rng.uniform(-2.0, 1.0)
            rmin = rng.uniform(-2.0, 1.0)
            corr.append((i, int(rng.integers(GLOVE_CHANNELS)), 1 if rng.uniform() < 0.5 else -1))
            granges.append((gmin, gmin + rng.uniform(0.05, 3.0)))
            rlimits.append((rmin, rmin + rng.uniform(0.05, 3.0)))
        table = build_mapping(corr, granges, rlimits)
        for e, (gmin, gmax), (rmin, rmax) in zip(table.entries, granges, rlimits):
            lo, hi = ((rmin, rmax) if e.direction == 1 else (rmax, rmin))
            worst = max(worst, abs(e.apply(gmin) - lo), abs(e.apply(gmax) - hi))
    elapsed = time.perf_counter() - t0
    report(
        "endpoint-mapping-property",
        worst <= 1e-9 and elapsed < 1.0,
        f"1000 tables, max endpoint error {worst:.3g} (limit 1e-9), {elapsed:.3f}s (limit 1s)",
    )


# ---------------------------------------------------------------------------
# 2. FK oracle equivalence
# ---------------------------------------------------------------------------

def _quats_to_matrices(q):
    """Vectorized [w,x,y,z] batch to rotation matrices (local comparison helper)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def test_fk_oracle_equivalence():
    from phantomarm.kinematics import forward_kinematics_batch

    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        model = random_tree_model(rng, max_joints=8)
        Q = rng.uniform(model.lowers, model.uppers, size=(100, model.n_joints))
        quats, poss = forward_kinematics_batch(model, Q)
        rots = _quats_to_matrices(quats)
        for k in range(Q.shape[0]):
            oracle = fk_matrix_oracle(model, Q[k])
            for j, om in enumerate(oracle):
                worst = max(
                    worst,
                    float(np.abs(rots[k, j] - om[:3, :3]).max()),
                    float(np.abs(poss[k, j] - om[:3, 3]).max()),
                )
    elapsed = time.perf_counter() - t0
    report(
        "fk-oracle-equivalence",
        worst <= 1e-9 and elapsed < 10.0,
        f"100 trees x 100 configs, max deviation from matrix oracle {worst:.3g} (limit 1e-9), "
        f"{elapsed:.1f}s (limit 10s)",
    )


# ---------------------------------------------------------------------------
# 3. Collision oracle
# ---------------------------------------------------------------------------

def test_collision_oracle_grid_and_masks():
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        c1 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.4))
        c2 = Capsule(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(0.01, 0.4))
        got = capsule_distance(c1, c2)
        want = grid_min_distance(c1, c2, base=1000)
        worst = max(worst, abs(got - want))

    # symmetry and mask respect on random articulated models
    symmetric = True
    mask_respected = True
    for _ in range(10):
        model = random_tree_model(rng, max_joints=6, with_links=True)
        Q = rng.uniform(model.lowers, model.uppers, size=(20, model.n_joints))
        labels = check_self_collision_batch(model, Q)
        symmetric &= not np.any(labels.sum(axis=1) == 1)
        masked = {(i, j) for i in range(model.n_links) for j in model._effective_masks[i]}
        for k in range(Q.shape[0]):
            frames = forward_kinematics(model, Q[k])
            caps = link_capsules_world(model, frames)
            expected = np.zeros(model.n_links, dtype=bool)
            for i in range(model.n_links):
                for j in range(i + 1, model.n_links):
                    if (i, j) in masked:
                        continue
                    if capsule_distance(caps[i], caps[j]) < 0:
                        expected[i] = expected[j] = True
            mask_respected &= bool(np.array_equal(labels[k], expected))
    elapsed = time.perf_counter() - t0
    report(
        "collision-oracle",
        worst <= 1e-6 and symmetric and mask_respected and elapsed < 60.0,
        f"200 pairs vs 1e6-point grid, max deviation {worst:.3g} (limit 1e-6); "
        f"symmetric={symmetric} mask_respected={mask_respected}; {elapsed:.1f}s (limit 60s)",
    )


# ---------------------------------------------------------------------------
# 4. Gradient checks
# ---------------------------------------------------------------------------

def test_gradient_checks():
    rng = np.random.default_rng(104)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(10):
        net = init_mlp([3, 4, 2], ["relu", "sigmoid"], rng)
        x = rng.normal(size=(3, 3))
        t = rng.uniform(size=(3, 2)) < 0.5

        def bce_lg():
            cache = []
            probs = net.forward(x, cache)
            loss, dp = bce_loss_grad(probs, t)
            grads, _ = net.backward(cache, dp)
            return loss, _flat_grads(net, grads)

        worst = max(worst, _grad_check(bce_lg, net))

    for trial in range(10):
        predictor = init_mlp([3, 5, 2], ["relu", "sigmoid"], rng)
        center = rng.normal(size=3) * 0.1
        half = rng.uniform(0.5, 2.0, 3)
        corrector = init_mlp([3, 4, 3], ["tanh", "linear"], rng, output_squash=(center, half))
        q = rng.normal(size=(3, 3)) * 0.5

        def comp_lg():
            cache = []
            corrected = corrector.forward(q, cache)
            loss, _, _, d = composite_loss_grad(q, corrected, predictor, alpha=1.0, beta=3.0)
            grads, _ = corrector.backward(cache, d)
            return loss, _flat_grads(corrector, grads)

        worst = max(worst, _grad_check(comp_lg, corrector))
    elapsed = time.perf_counter() - t0
    report(
        "gradient-checks",
        worst < 1e-4 and elapsed < 30.0,
        f"20 tiny nets, max relative error {worst:.3g} (limit 1e-4), {elapsed:.1f}s (limit 30s)",
    )


# ---------------------------------------------------------------------------
# 5. Predictor quality
# ---------------------------------------------------------------------------

def test_predictor_quality(trained_nets):
    dataset = trained_nets["dataset"]
    predictor = trained_nets["predictor"]
    X, y = dataset.subset(dataset.test_idx)
    per_link = ((predictor.forward(X) > 0.5) == y).mean(axis=0)
    wall = trained_nets["predictor_wall_s"]

    from phantomarm import reporting

    reporting.write_accuracy_report(per_link, REPORTS)
    reporting.write_training_report(trained_nets["pred_report"], REPORTS, "cpn")
    report(
        "predictor-quality",
        float(per_link.min()) >= 0.95 and wall < 600.0,
        f"held-out per-link accuracy min {per_link.min():.4f} mean {per_link.mean():.4f} "
        f"(limit: every link >= 0.95); dataset+training {wall:.0f}s (limit 600s)",
    )


# ---------------------------------------------------------------------------
# 6. Corrector quality
# ---------------------------------------------------------------------------

def test_corrector_quality(trained_nets):
    hand = trained_nets["hand"]
    dataset = trained_nets["dataset"]
    X, y = dataset.subset(dataset.test_idx)
    colliding = X[y.any(axis=1)][:1000]
    assert colliding.shape[0] == 1000
    outs = np.empty_like(colliding)
    gated = 0
    for k, q in enumerate(colliding):
        res = correct(q, trained_nets["predictor"], trained_nets["corrector"])
        outs[k] = res.corrected
        gated += res.was_gated
    still = check_self_collision_batch(hand, outs).any(axis=1)
    deviation = np.abs(outs - colliding) / hand.ranges
    rate = float(still.mean())
    dev = float(deviation.mean())
    report(
        "corrector-quality",
        rate <= 0.05 and dev <= 0.20,
        f"1000 held-out colliding configs: corrected collision rate {rate:.4f} (limit 0.05), "
        f"mean per-joint deviation {dev:.4f} of range (limit 0.20), gate fired {gated}/1000",
    )


# ---------------------------------------------------------------------------
# 7. Real-time pipeline latency
# ---------------------------------------------------------------------------

def test_realtime_pipeline_latency(trained_nets):
    hand = trained_nets["hand"]
    table = load_mapping(bundled_model_path("hand16_mapping"), hand)
    rng = np.random.default_rng(107)
    gloves = [GloveSample(float(i), rng.uniform(-0.4, 2.4, GLOVE_CHANNELS)) for i in range(10_000)]
    latencies = np.empty(10_000)
    for i, glove in enumerate(gloves):
        t0 = time.perf_counter()
        q = map_hand(table, glove)
        correct(q, trained_nets["predictor"], trained_nets["corrector"])
        latencies[i] = (time.perf_counter() - t0) * 1e3
    median = float(np.median(latencies))

    from phantomarm import reporting

    reporting.write_latency_report(latencies, REPORTS)
    hist, edges = np.histogram(latencies, bins=10)
    buckets = ", ".join(f"{edges[i]:.3f}-{edges[i+1]:.3f}ms:{hist[i]}" for i in range(len(hist)))
    print(f"latency histogram: {buckets}")
    report(
        "realtime-pipeline",
        median <= 16.7,
        f"10k iterations, median {median:.4f} ms (limit 16.7 ms), p99 "
        f"{np.percentile(latencies, 99):.4f} ms, implied rate {1e3 / median:.0f} Hz",
    )


# ---------------------------------------------------------------------------
# 8. Calibration chain
# ---------------------------------------------------------------------------

def test_calibration_chain():
    rng = np.random.default_rng(108)
    worst_rot = worst_trans = 0.0
    for _ in range(500):
        scene = random_scene(rng)
        tag_to_base = solve_tag_to_base(scene.base_to_fixed, observe_tag(scene, FIXED_CAM))
        recovered = solve_float_to_base(tag_to_base, observe_tag(scene, FLOAT_CAM))
        rot_err, trans_err = float_recovery_error(scene, recovered)
        worst_rot = max(worst_rot, rot_err)
        worst_trans = max(worst_trans, trans_err)

    means = []
    for sigma in (0.005, 0.01, 0.02):
        errs = []
        for _ in range(500):
            scene = random_scene(rng)
            tag_to_base = solve_tag_to_base(
                scene.base_to_fixed, observe_tag(scene, FIXED_CAM, rng, sigma, 0.0))
            recovered = solve_float_to_base(
                tag_to_base, observe_tag(scene, FLOAT_CAM, rng, sigma, 0.0))
            errs.append(float_recovery_error(scene, recovered)[0])
        means.append(float(np.mean(errs)))
    monotone = means[0] < means[1] < means[2]
    report(
        "calibration-chain",
        worst_rot <= 1e-9 and worst_trans <= 1e-9 and monotone,
        f"500 noiseless trials: max rot err {worst_rot:.3g} rad, max trans err {worst_trans:.3g} m "
        f"(limit 1e-9); noisy mean rot err {means[0]:.4f} < {means[1]:.4f} < {means[2]:.4f} "
        f"for sigma 0.005/0.01/0.02 (monotone={monotone})",
    )


# ---------------------------------------------------------------------------
# 9. FSM safety
# ---------------------------------------------------------------------------

def _random_walk_tick(rng, t, pos):
    pos = pos + rng.normal(0.0, 0.004, 3)
    wrist = WristSample(t, RigidTransform(pos=pos))
    glove = GloveSample(t, rng.uniform(-2.9, 2.9, GLOVE_CHANNELS))
    return InputTick(wrist, glove), pos


def test_fsm_safety():
    import logging

    from phantomarm.kinematics import attach_model

    logging.disable(logging.WARNING)  # planner failures are an expected outcome here
    arm2 = load_bundled("arm6")
    finger = make_folding_finger()
    combined = attach_model(arm2, finger, mount_joint=5, name="accept_armfinger",
                            mount_offset=RigidTransform(pos=[0.0, 0.0, 0.08]))
    t0 = time.perf_counter()
    freeze_ok = True
    purity_ok = True
    displacement_worst = 0.0
    displacement_checks = 0
    for seed in range(100):
        # arm-mounted sessions exercise the end-effector rebase; hand-only
        # sessions cover the bulk of the randomized FSM walk cheaply
        model, offset = (combined, 6) if seed < 20 else (finger, 0)
        rng = np.random.default_rng(1000 + seed)
        session = TeleopSession(model, identity_mapping(model, offset), hand_offset=offset,
                                recorder_metadata={"task": "fsm", "seed": seed, "model_hash": "-"})
        t = 0.0
        pos = np.array([0.3, 0.0, 0.5])
        preview_baseline = None
        pending_check = False
        for _ in range(10_000):
            r = rng.uniform()
            if r < 0.82:
                t += rng.uniform(0.005, 0.03)
                event, pos = _random_walk_tick(rng, t, pos)
            elif r < 0.90:
                event = PedalDown()
            elif r < 0.97:
                event = PedalUp()
            else:
                event = TrajectoryDone()

            prev_phase = session.phase
            ee_before = session.ee_pose() if pending_check and isinstance(event, InputTick) else None
            session.step(event)
            assert session.phase in (Phase.LIVE, Phase.PREVIEW, Phase.EXECUTING)

            if session.phase == Phase.PREVIEW:
                if prev_phase != Phase.PREVIEW:
                    preview_baseline = session.robot_q.copy()
                elif not np.array_equal(session.robot_q, preview_baseline):
                    freeze_ok = False
            if prev_phase == Phase.EXECUTING and session.phase == Phase.LIVE:
                pending_check = True
            elif ee_before is not None and session.phase == Phase.LIVE:
                disp = float(np.linalg.norm(session.last_ee_target.position - ee_before.pos))
                displacement_worst = max(displacement_worst, disp)
                displacement_checks += 1
                pending_check = False
            elif session.phase != Phase.LIVE:
                pending_check = False
        _, counts = session.recorder.finalize()
        purity_ok &= counts["PREVIEW"] == 0
    logging.disable(logging.NOTSET)
    elapsed = time.perf_counter() - t0
    report(
        "fsm-safety",
        freeze_ok and purity_ok and displacement_worst < 1e-9 and displacement_checks > 100,
        f"100 seeds x 10k events in {elapsed:.0f}s: robot frozen in PREVIEW={freeze_ok}, "
        f"demos free of PREVIEW={purity_ok}, max post-execution displacement "
        f"{displacement_worst:.3g} over {displacement_checks} resumes (limit 1e-9)",
    )


# ---------------------------------------------------------------------------
# 10. Headless replay determinism
# ---------------------------------------------------------------------------

def test_replay_determinism(trained_nets, tmp_path):
    # full scene including the trained networks
    trained_nets["predictor"].save(tmp_path / "cpn.json")
    trained_nets["corrector"].save(tmp_path / "ccn.json")
    scene_doc = {
        "robot_model": "bundled:armhand22",
        "hand_model": "bundled:hand16",
        "hand_joints_offset": 6,
        "mapping": "bundled:hand16_mapping",
        "networks": {"predictor": str(tmp_path / "cpn.json"), "corrector": str(tmp_path / "ccn.json")},
        "tag_pose": RigidTransform(pos=[0.5, -0.3, 0.0]).to_dict(),
        "rate_hz": 60.0,
        "seed": 1,
        "task": "determinism-check",
    }
    scene_path = tmp_path / "scene.json"
    scene_path.write_text(json.dumps(scene_doc))
    scene = load_scene(scene_path)

    frames = list(ScriptedSource(circle_wrist(0.06, 2.0, center=(0.45, 0.0, 0.55)), 60, 3.0))
    trace = tmp_path / "trace.jsonl"
    record_trace(frames, trace)
    pedal = tmp_path / "pedal.json"
    pedal.write_text(json.dumps([[1.0, "down"], [1.6, "up"]]))

    replay(scene, trace, pedal, tmp_path / "run_a")
    replay(scene, trace, pedal, tmp_path / "run_b")
    demo_a = (tmp_path / "run_a" / "demo.jsonl").read_bytes()
    demo_b = (tmp_path / "run_b" / "demo.jsonl").read_bytes()
    identical = demo_a == demo_b
    report(
        "replay-determinism",
        identical and len(demo_a) > 0,
        f"two replays, demo files {len(demo_a)} bytes, bitwise identical={identical}",
    )
