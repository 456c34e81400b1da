"""Learned self-collision avoidance for the robot hand.

Two networks ride on the geometric collision oracle:

* a collision *predictor* that scores, per link, the probability that a
  joint configuration self-collides (trained with mean binary cross-entropy
  against oracle labels), and
* a configuration *corrector* that maps colliding configurations to nearby
  safe ones, trained with a composite loss: alpha * per-joint MSE against
  the input plus beta * mean predicted collision probability of the output,
  with gradients flowing through the frozen predictor.

Datasets come from uniform per-joint sampling within limits, labeled by
``check_self_collision``. Training is plain minibatch Adam, deterministic
under the configured seed. At runtime ``correct`` gates the corrector on the
predictor's maximum output so safe configurations pass through untouched.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import KinematicModel, check_self_collision_batch
from .mlp import Adam, Mlp, init_mlp

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7

PREDICTOR_HIDDEN = (128, 128)
CORRECTOR_HIDDEN = (256, 256)


class TrainingDivergence(RuntimeError):
    """Loss became non-finite; message names the epoch."""


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 256
    epochs: int = 50
    alpha: float = 1.0
    beta: float = 5.0
    seed: int = 0
    # oversample colliding configs to this batch fraction when rarer than the threshold
    oversample_threshold: float = 0.05
    oversample_fraction: float = 0.3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")


@dataclass
class CollisionDataset:
    configs: np.ndarray  # (n, dof)
    labels: np.ndarray  # (n, m) bool
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        splits = [set(self.train_idx.tolist()), set(self.val_idx.tolist()), set(self.test_idx.tolist())]
        for i in range(3):
            for j in range(i + 1, 3):
                if splits[i] & splits[j]:
                    raise ValueError("dataset splits must be disjoint")

    @property
    def n(self) -> int:
        return self.configs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.configs[idx], self.labels[idx]


def generate_dataset(model: KinematicModel, n: int, seed: int = 0, shards: int = 1,
                     split=(0.8, 0.1, 0.1)) -> CollisionDataset:
    """Uniform per-joint samples within limits, labeled by the geometric
    oracle. Sharded sampling merges deterministically regardless of how the
    shards would be scheduled."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seqs = np.random.SeedSequence(seed).spawn(shards)
    counts = [n // shards] * shards
    counts[-1] += n - sum(counts)
    parts = []
    for seq, count in zip(seqs, counts):
        rng = np.random.Generator(np.random.PCG64(seq))
        parts.append(rng.uniform(model.lowers, model.uppers, size=(count, model.n_joints)))
    configs = np.concatenate(parts, axis=0)
    labels = check_self_collision_batch(model, configs)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(shards + 1)[-1]))
    perm = rng.permutation(n)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return CollisionDataset(
        configs=configs,
        labels=labels,
        train_idx=perm[:n_train],
        val_idx=perm[n_train:n_train + n_val],
        test_idx=perm[n_train + n_val:],
    )


# ----------------------------------------------------------------------
# Networks
# ----------------------------------------------------------------------

def make_predictor(n_joints: int, n_links: int, rng: np.random.Generator,
                   hidden=PREDICTOR_HIDDEN) -> Mlp:
    sizes = [n_joints, *hidden, n_links]
    return init_mlp(sizes, ["relu"] * len(hidden) + ["sigmoid"], rng)


def make_corrector(model: KinematicModel, rng: np.random.Generator,
                   hidden=CORRECTOR_HIDDEN) -> Mlp:
    sizes = [model.n_joints, *hidden, model.n_joints]
    center = 0.5 * (model.lowers + model.uppers)
    half_range = 0.5 * (model.uppers - model.lowers)
    net = init_mlp(sizes, ["relu"] * len(hidden) + ["linear"], rng,
                   output_squash=(center, half_range))
    # start all outputs at the mid-range anchor: the similarity term then pulls
    # them toward the inputs until the predictor's boundary gradient resists.
    # initializing at the inputs instead strands deep collisions where both the
    # predictor's sigmoid and the output tanh are saturated (zero gradient).
    net.layers[-1].weights[...] = 0.0
    net.layers[-1].bias[...] = 0.0
    return net


def collision_probabilities(predictor: Mlp, q) -> np.ndarray:
    """Per-link collision probabilities for one configuration."""
    return predictor.forward(np.asarray(q, dtype=float))


def correct_config(corrector: Mlp, q) -> np.ndarray:
    """Corrected configuration; the output squash keeps it within limits."""
    return corrector.forward(np.asarray(q, dtype=float))


# ----------------------------------------------------------------------
# Losses (values and hand-derived gradients)
# ----------------------------------------------------------------------

def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clipped away from {0,1}."""
    p = np.clip(np.asarray(probs, dtype=float), BCE_EPS, 1.0 - BCE_EPS)
    t = np.asarray(labels, dtype=float)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def bce_loss_grad(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus dLoss/dprobs, zero where the clip is active."""
    probs = np.asarray(probs, dtype=float)
    t = np.asarray(labels, dtype=float)
    p = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))
    grad = (p - t) / (p * (1.0 - p)) / p.size
    grad = np.where((probs > BCE_EPS) & (probs < 1.0 - BCE_EPS), grad, 0.0)
    return loss, grad


def composite_loss(q: np.ndarray, corrected: np.ndarray, predictor: Mlp,
                   alpha: float, beta: float) -> tuple[float, float, float]:
    """Total, per-joint MSE, and mean predicted collision probability."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    corrected = np.atleast_2d(np.asarray(corrected, dtype=float))
    mse = float(np.mean((corrected - q) ** 2))
    coll = float(np.mean(predictor.forward(corrected)))
    return alpha * mse + beta * coll, mse, coll


def composite_loss_grad(q: np.ndarray, corrected: np.ndarray, predictor: Mlp,
                        alpha: float, beta: float):
    """Composite loss and dLoss/dcorrected (through the frozen predictor)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    corrected = np.atleast_2d(np.asarray(corrected, dtype=float))
    mse = float(np.mean((corrected - q) ** 2))
    d_mse = 2.0 * (corrected - q) / corrected.size

    cache: list = []
    probs = predictor.forward(corrected, cache)
    coll = float(np.mean(probs))
    _, d_coll = predictor.backward(cache, np.full_like(probs, 1.0 / probs.size))

    total = alpha * mse + beta * coll
    return total, mse, coll, alpha * d_mse + beta * d_coll


# ----------------------------------------------------------------------
# Training loops
# ----------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float  # predictor: accuracy at 0.5; corrector: oracle collision rate


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    wall_time_s: float = 0.0

    def rows(self) -> list[tuple]:
        return [(e.epoch, e.train_loss, e.val_loss, e.val_metric) for e in self.epochs]


def _batches(n_items: int, batch_size: int, rng: np.random.Generator,
             positive_idx: np.ndarray | None = None,
             negative_idx: np.ndarray | None = None,
             positive_fraction: float = 0.0):
    """Yield index batches; optionally force a fraction of positives."""
    if positive_idx is None or positive_fraction <= 0.0:
        perm = rng.permutation(n_items)
        for start in range(0, n_items, batch_size):
            yield perm[start:start + batch_size]
        return
    n_pos = max(1, int(round(batch_size * positive_fraction)))
    n_neg = batch_size - n_pos
    n_batches = max(1, n_items // batch_size)
    for _ in range(n_batches):
        pos = rng.choice(positive_idx, size=n_pos, replace=True)
        neg = rng.choice(negative_idx, size=n_neg, replace=True)
        yield np.concatenate([pos, neg])


def train_predictor(dataset: CollisionDataset, config: TrainingConfig,
                    hidden=PREDICTOR_HIDDEN) -> tuple[Mlp, TrainingReport]:
    """Fit the per-link collision classifier on the train split."""
    if dataset.n == 0 or dataset.train_idx.size == 0:
        raise ValueError("dataset has no training split")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    net = make_predictor(dataset.configs.shape[1], dataset.n_labels, rng, hidden)
    opt = Adam(net, config.learning_rate, config.beta1, config.beta2)

    X_train, y_train = dataset.subset(dataset.train_idx)
    X_val, y_val = dataset.subset(dataset.val_idx)
    any_hit = y_train.any(axis=1)
    pos_rate = float(any_hit.mean())
    pos_idx = np.flatnonzero(any_hit)
    neg_idx = np.flatnonzero(~any_hit)
    oversample = pos_rate < config.oversample_threshold and pos_idx.size > 0 and neg_idx.size > 0
    if oversample:
        logger.info("positive rate %.3f below %.3f, oversampling to %.0f%% of each batch",
                    pos_rate, config.oversample_threshold, 100 * config.oversample_fraction)

    report = TrainingReport()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        losses = []
        for batch in _batches(
            X_train.shape[0], config.batch_size, rng,
            positive_idx=pos_idx if oversample else None,
            negative_idx=neg_idx if oversample else None,
            positive_fraction=config.oversample_fraction if oversample else 0.0,
        ):
            cache: list = []
            probs = net.forward(X_train[batch], cache)
            loss, d_probs = bce_loss_grad(probs, y_train[batch])
            if not np.isfinite(loss):
                raise TrainingDivergence(f"predictor loss diverged at epoch {epoch}")
            grads, _ = net.backward(cache, d_probs)
            opt.step(grads)
            losses.append(loss)
        val_probs = net.forward(X_val) if X_val.size else np.zeros((0, dataset.n_labels))
        val_loss = bce_loss(val_probs, y_val) if X_val.size else float("nan")
        val_acc = float(((val_probs > 0.5) == y_val).mean()) if X_val.size else float("nan")
        if not np.isfinite(val_loss) and X_val.size:
            raise TrainingDivergence(f"predictor val loss diverged at epoch {epoch}")
        report.epochs.append(EpochStats(epoch, float(np.mean(losses)), val_loss, val_acc))
        logger.debug("predictor epoch %d: train %.4f val %.4f acc %.4f",
                     epoch, report.epochs[-1].train_loss, val_loss, val_acc)
    report.wall_time_s = time.perf_counter() - t0
    return net, report


def train_corrector(dataset: CollisionDataset, predictor: Mlp, model: KinematicModel,
                    config: TrainingConfig, hidden=CORRECTOR_HIDDEN) -> tuple[Mlp, TrainingReport]:
    """Fit the corrector on the colliding portion of the train split.

    The predictor stays frozen; the validation metric is the *oracle*
    collision rate of corrected validation configs, not the predictor's
    opinion of them.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed + 1))
    net = make_corrector(model, rng, hidden)
    opt = Adam(net, config.learning_rate, config.beta1, config.beta2)

    X_train, y_train = dataset.subset(dataset.train_idx)
    X_train = X_train[y_train.any(axis=1)]
    X_val, y_val = dataset.subset(dataset.val_idx)
    X_val = X_val[y_val.any(axis=1)]
    if X_train.shape[0] == 0:
        raise ValueError("no colliding configurations in the training split")

    report = TrainingReport()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        losses = []
        for batch in _batches(X_train.shape[0], config.batch_size, rng):
            q = X_train[batch]
            cache: list = []
            corrected = net.forward(q, cache)
            loss, _, _, d_corr = composite_loss_grad(q, corrected, predictor, config.alpha, config.beta)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"corrector loss diverged at epoch {epoch}")
            grads, _ = net.backward(cache, d_corr)
            opt.step(grads)
            losses.append(loss)
        if X_val.shape[0]:
            corrected_val = net.forward(X_val)
            val_loss, _, _ = composite_loss(X_val, corrected_val, predictor, config.alpha, config.beta)
            val_rate = float(check_self_collision_batch(model, corrected_val).any(axis=1).mean())
        else:
            val_loss, val_rate = float("nan"), float("nan")
        report.epochs.append(EpochStats(epoch, float(np.mean(losses)), val_loss, val_rate))
        logger.debug("corrector epoch %d: train %.4f val %.4f oracle rate %.4f",
                     epoch, report.epochs[-1].train_loss, val_loss, val_rate)
    report.wall_time_s = time.perf_counter() - t0
    return net, report


@dataclass
class GridCell:
    alpha: float
    beta: float
    val_collision_rate: float
    val_mse: float


@dataclass
class GridSearchResult:
    best_alpha: float
    best_beta: float
    cells: list[GridCell]
    infeasible: bool  # no cell met the MSE cap; best is lowest collision rate


def grid_search(alpha_grid, beta_grid, dataset: CollisionDataset, predictor: Mlp,
                model: KinematicModel, config: TrainingConfig,
                mse_cap: float = 0.25) -> GridSearchResult:
    """Train one corrector per (alpha, beta) cell and pick the lowest oracle
    collision rate among cells whose validation MSE stays under the cap."""
    alpha_grid = list(alpha_grid)
    beta_grid = list(beta_grid)
    if not alpha_grid or not beta_grid:
        raise ValueError("grids must be non-empty")
    X_val, y_val = dataset.subset(dataset.val_idx)
    X_val = X_val[y_val.any(axis=1)]
    cells = []
    for alpha in alpha_grid:
        for beta in beta_grid:
            cell_cfg = replace(config, alpha=float(alpha), beta=float(beta))
            net, _ = train_corrector(dataset, predictor, model, cell_cfg)
            corrected = net.forward(X_val)
            rate = float(check_self_collision_batch(model, corrected).any(axis=1).mean())
            mse = float(np.mean((corrected - X_val) ** 2))
            cells.append(GridCell(float(alpha), float(beta), rate, mse))
            logger.info("grid cell alpha=%.3g beta=%.3g: collision rate %.4f mse %.4f",
                        alpha, beta, rate, mse)
    feasible = [c for c in cells if c.val_mse <= mse_cap]
    infeasible = not feasible
    pool = cells if infeasible else feasible
    best = min(pool, key=lambda c: (c.val_collision_rate, c.val_mse))
    if infeasible:
        logger.warning("no grid cell met mse cap %.4g; returning lowest collision rate", mse_cap)
    return GridSearchResult(best.alpha, best.beta, cells, infeasible)


# ----------------------------------------------------------------------
# Runtime gate
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CorrectionResult:
    corrected: np.ndarray
    was_gated: bool
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("collision probabilities must lie in [0, 1]")


def correct(q, predictor: Mlp, corrector: Mlp, gate_threshold: float = 0.25) -> CorrectionResult:
    """Pass configurations through untouched unless the predictor flags them.

    When the maximum per-link probability reaches the threshold the
    corrector replaces the configuration.
    """
    q = np.asarray(q, dtype=float)
    probs = predictor.forward(q)
    if float(probs.max()) < gate_threshold:
        return CorrectionResult(q, False, probs)
    return CorrectionResult(corrector.forward(q), True, probs)
