"""SGD training loop over synthetic or file-backed feature sequences.

Optimizer semantics: velocity = momentum * velocity + grad + wd * param,
param -= lr * velocity, so lr = 0 leaves parameters untouched (weight
decay included).  The learning rate drops by 10x at the configured epochs.
Runs single-threaded over parameters; given a seed the whole loop is
deterministic.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .data import FeatureSequence
from .errors import ConfigError, NumericError
from .evaluate import BoundaryAnnotation, sweep
from .head import soft_labels
from .model import BoundaryDetector, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 15
    lr_drop_epochs: tuple = (8, 12)   # 10x drop after these epochs
    batch_videos: int = 4
    seed: int = 0
    label_source: str = "union"       # union | first: which raters build targets
    eval_every: int = 0               # 0: no in-loop validation

    @classmethod
    def paper_config(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=30, lr_drop_epochs=(16, 24))
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if any(d >= self.epochs for d in self.lr_drop_epochs):
            raise ConfigError(
                f"lr drop epochs {self.lr_drop_epochs} must all be < epochs ({self.epochs})")
        if self.batch_videos < 1:
            raise ConfigError(f"batch_videos must be >= 1, got {self.batch_videos}")
        if self.label_source not in ("union", "first"):
            raise ConfigError(f"label_source must be 'union' or 'first', got '{self.label_source}'")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    seconds: float
    val_f1_005: float | None = None
    val_f1_avg: float | None = None


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"epochs": [vars(e) for e in self.epochs]}


class SGD:
    """Momentum SGD with coupled weight decay, fixed parameter order."""

    def __init__(self, params: dict, momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            p.data = p.data - lr * v


def boundary_frames_for_training(annotation: BoundaryAnnotation, length: int,
                                 fps: float, label_source: str) -> list:
    """Boundary frame indices that build the training targets."""
    raters = annotation.raters[:1] if label_source == "first" else annotation.raters
    frames = []
    for _, stamps in raters:
        for ts in stamps:
            frames.append(int(np.clip(math.floor(ts * fps + 0.5), 0, length - 1)))
    return sorted(frames)


def build_targets(seq: FeatureSequence, annotation: BoundaryAnnotation,
                  cfg: ModelConfig, label_source: str) -> np.ndarray:
    frames = boundary_frames_for_training(
        annotation, seq.features.shape[0], seq.fps, label_source)
    return soft_labels(frames, seq.features.shape[0], sigma=cfg.label_sigma,
                       hard=not cfg.gaussian_labels)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    lr = cfg.lr
    for drop in cfg.lr_drop_epochs:
        if epoch >= drop:
            lr *= 0.1
    return lr


def train(sequences: list, annotations: dict, model_cfg: ModelConfig,
          cfg: TrainConfig, out_dir: str | None = None,
          val_sequences: list | None = None, val_annotations: dict | None = None):
    """Train a detector; returns (model, TrainLog).

    Writes ``epoch_<e>.scxw`` plus a final ``model.scxw`` under ``out_dir``
    when given.  Aborts with NumericError on a non-finite loss, pointing at
    the last finite checkpoint.
    """
    cfg.validate()
    model_cfg.validate()
    if not sequences:
        raise ConfigError("training dataset is empty")
    model = BoundaryDetector(model_cfg, seed=cfg.seed)
    optimizer = SGD(model.params, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    targets = [build_targets(s, annotations[s.video_id], model_cfg, cfg.label_source)
               for s in sequences]

    history = TrainLog()
    last_checkpoint = None
    for epoch in range(cfg.epochs):
        start = time.monotonic()
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(sequences))
        epoch_loss = 0.0
        batches = 0
        for s in range(0, len(order), cfg.batch_videos):
            idx = order[s:s + cfg.batch_videos]
            tz.zero_grads(model.params)
            losses = [model.loss(sequences[i].features, targets[i]) for i in idx]
            total = losses[0]
            for extra in losses[1:]:
                total = tz.add(total, extra)
            total = total * (1.0 / len(losses))
            value = total.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}; last finite checkpoint: "
                    f"{last_checkpoint or 'none written'}")
            tz.backward(total)
            optimizer.step(lr)
            epoch_loss += value
            batches += 1
        record = EpochRecord(epoch=epoch, loss=epoch_loss / batches,
                             seconds=time.monotonic() - start)
        if cfg.eval_every and val_sequences and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate_model(model, val_sequences, val_annotations)
            record.val_f1_005 = report.rows[0][3]
            record.val_f1_avg = report.average_f1
        history.epochs.append(record)
        log.info("epoch %d: loss %.4f lr %.4g (%.1fs)%s", epoch, record.loss, lr,
                 record.seconds,
                 f" val F1@0.05 {record.val_f1_005:.3f}" if record.val_f1_005 is not None else "")
        if out_dir:
            path = os.path.join(out_dir, f"epoch_{epoch}.scxw")
            model.save(path)
            last_checkpoint = path
    if out_dir:
        model.save(os.path.join(out_dir, "model.scxw"))
    return model, history


def evaluate_model(model: BoundaryDetector, sequences: list, annotations: dict,
                   aggregation: str = "micro"):
    """Predict every sequence and sweep the evaluation thresholds."""
    predictions = {}
    for seq in sequences:
        predictions[seq.video_id] = model.predict(seq).boundaries
    return sweep(predictions, annotations, aggregation=aggregation)
