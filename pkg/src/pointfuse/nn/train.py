"""Desk-scale training loop: sample, rotate, forward, weighted loss, backward, Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..sampling import PointSet, rotate_scene_z, sample_random
from .model import (
    ModelConfig,
    forward,
    gradients,
    init_params,
    inverse_frequency_weights,
    weighted_cross_entropy,
)
from .optim import AdamState, adam_step, learning_rate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingSample:
    """One sub-volume (all points inside its window, with labels) and the scene it came from."""

    subvolume: PointSet
    scene: PointSet


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 2000
    batch_size: int = 1
    augment: bool = True
    log_every: int = 10
    class_weights: Optional[np.ndarray] = None  # default: inverse frequency over the dataset


@dataclass
class TrainResult:
    params: dict
    losses: list[float]
    logged: list[tuple[int, float]] = field(default_factory=list)
    class_weights: Optional[np.ndarray] = None


def scene_center(scene: PointSet) -> np.ndarray:
    lo, hi = scene.positions.min(axis=0), scene.positions.max(axis=0)
    c = (lo + hi) / 2
    c[2] = 0.0
    return c


def draw_inputs(sample: TrainingSample, config: ModelConfig, rng: np.random.Generator, augment: bool):
    sub_idx = sample_random(np.arange(len(sample.subvolume)), config.subvolume_points, rng)
    scene_idx = sample_random(np.arange(len(sample.scene)), config.scene_points, rng)
    sub = sample.subvolume.take(sub_idx)
    scene = sample.scene.take(scene_idx)
    if augment:
        angle = float(rng.uniform(0.0, 2 * np.pi))
        c = scene_center(sample.scene)
        sub = rotate_scene_z(sub, angle, c)
        scene = rotate_scene_z(scene, angle, c)
    return sub, scene


def train_toy(
    dataset: Sequence[TrainingSample],
    config: ModelConfig,
    steps: int,
    seed: int = 0,
    train: TrainConfig | None = None,
    params=None,
    callback: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Deterministic given `seed`.  Every step draws `batch_size` samples and
    averages their gradients before one Adam update."""
    if not dataset:
        raise ValueError("empty training dataset")
    train = train or TrainConfig()
    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(config, seed)
    if train.class_weights is None:
        all_labels = np.concatenate([s.subvolume.labels for s in dataset])
        cw = inverse_frequency_weights(all_labels, config.num_classes)
    else:
        cw = np.asarray(train.class_weights, dtype=np.float64)
    state = AdamState()
    losses: list[float] = []
    logged: list[tuple[int, float]] = []

    for step in range(steps):
        total = None
        loss_sum = 0.0
        for _ in range(train.batch_size):
            sample = dataset[int(rng.integers(len(dataset)))]
            sub, scene = draw_inputs(sample, config, rng, train.augment)
            if not np.any(sub.labels > 0):
                continue
            trace = forward(sub, scene, config, params, rng=rng)
            loss = weighted_cross_entropy(trace.logits, sub.labels, cw)
            grads = gradients(trace, loss)
            loss_sum += float(loss.data)
            if total is None:
                total = grads
            else:
                for k in total:
                    total[k] += grads[k]
        if total is None:
            losses.append(float("nan"))
            continue
        loss_val = loss_sum / train.batch_size
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"loss became {loss_val} at step {step}; last finite losses {losses[-5:]}")
        for k in total:
            total[k] /= train.batch_size
        lr = learning_rate(step, train.base_lr, train.lr_decay, train.decay_every)
        try:
            adam_step(params, total, state, lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        losses.append(loss_val)
        if train.log_every and step % train.log_every == 0:
            logged.append((step, loss_val))
            log.info("step %d loss %.5f lr %.2e", step, loss_val, lr)
            if callback is not None:
                callback(step, loss_val)
    return TrainResult(params, losses, logged, cw)
