"""Assisted teleoperation sandbox.

Human wrist and glove streams are retargeted onto a simulated arm+hand,
screened by a learned self-collision correction stage, previewed as a
phantom overlay, and committed through a pedal-driven state machine that
records clean demonstrations.
"""

from .transforms import RigidTransform, compose, invert
from .kinematics import (
    Capsule,
    DimensionError,
    JointSpec,
    KinematicModel,
    LinkSpec,
    ModelError,
    attach_model,
    capsule_distance,
    check_self_collision,
    check_self_collision_batch,
    forward_kinematics,
    forward_kinematics_batch,
    load_bundled,
    load_model,
)
from .retarget import (
    GLOVE_CHANNELS,
    EndEffectorTarget,
    GloveSample,
    MappingTable,
    WristSample,
    build_mapping,
    map_hand,
    wrist_to_target,
)
from .collision_net import (
    CollisionDataset,
    CorrectionResult,
    TrainingConfig,
    correct,
    generate_dataset,
    grid_search,
    train_corrector,
    train_predictor,
)
from .mlp import Adam, Mlp, init_mlp
from .calibration import (
    CameraIntrinsics,
    FrameGraph,
    TagObservation,
    project_point,
    solve_float_to_base,
    solve_tag_to_base,
)
from .trajectory import LimitError, PlanningError, Trajectory, plan_trajectory
from .session import (
    DemoRecord,
    DemoRecorder,
    InputTick,
    PedalDown,
    PedalUp,
    Phase,
    TeleopSession,
    TrajectoryDone,
    load_demo,
)

__version__ = "0.1.0"
