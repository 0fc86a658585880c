"""Boundary classification head, soft labels, losses and score decoding.

The head is three same-padded 1D convolutions (C -> C -> C -> 1, kernel 3,
ReLU between) over the reassembled per-frame sequence, followed by a
sigmoid.  Targets are Gaussian-smoothed: each annotated boundary frame
spreads exp(-(t-t')^2 / 2 sigma^2) to its neighbours, contributions are
summed over boundaries and clamped to 1 so they stay valid BCE targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .errors import ConfigError, InputError
from .tensor import Tensor

SCORE_CLIP = 1e-7  # BCE probability clipping bound


@dataclass
class ScoreSequence:
    """Per-frame boundary probabilities plus decoded timestamps."""

    scores: np.ndarray                      # [T] in [0, 1]
    boundaries: list = field(default_factory=list)  # seconds, strictly increasing


def init_head_params(channels: int, rng: np.random.Generator,
                     prefix: str = "head.") -> dict:
    widths = [channels, channels, channels, 1]
    params = {}
    for i in range(3):
        cin, cout = widths[i], widths[i + 1]
        params[f"{prefix}conv{i}.weight"] = Tensor(
            tz.he_uniform(rng, (cout, cin, 3), cin * 3), requires_grad=True)
        params[f"{prefix}conv{i}.bias"] = Tensor(
            np.zeros(cout, dtype=np.float32), requires_grad=True)
    return params


def classify(seq: Tensor, params: dict, prefix: str = "head.") -> Tensor:
    """Score a [T, C] frame sequence, returning [T] boundary probabilities."""
    t, c = seq.shape
    expected = params[prefix + "conv0.weight"].shape[1]
    if c != expected:
        raise ConfigError(f"head expects {expected} channels, got {c}")
    h = tz.reshape(tz.transpose(seq, (1, 0)), (1, c, t))
    for i in range(3):
        h = tz.conv1d(h, params[f"{prefix}conv{i}.weight"], params[f"{prefix}conv{i}.bias"])
        if i < 2:
            h = tz.relu(h)
    return tz.sigmoid(tz.reshape(h, (t,)))


def soft_labels(boundary_frames, length: int, sigma: float = 1.0,
                hard: bool = False) -> np.ndarray:
    """Per-frame targets in [0, 1] from annotated boundary frame indices.

    Gaussian contributions are truncated beyond 4*sigma and the summed
    label is clamped to 1; ``hard=True`` gives plain 0/1 targets instead.
    """
    labels = np.zeros(length, dtype=np.float32)
    radius = 0 if hard else int(math.ceil(4.0 * sigma))
    for b in boundary_frames:
        b = int(b)
        if not 0 <= b < length:
            raise InputError(f"boundary frame {b} outside sequence of length {length}")
        lo, hi = max(0, b - radius), min(length - 1, b + radius)
        for t in range(lo, hi + 1):
            labels[t] += math.exp(-((t - b) ** 2) / (2.0 * sigma * sigma))
    return np.minimum(labels, 1.0)


def bce_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross entropy against [0, 1] targets."""
    if scores.shape != labels.shape:
        raise InputError(f"scores length {scores.shape} != labels length {labels.shape}")
    y = Tensor(labels)
    p = tz.clip(scores, SCORE_CLIP, 1.0 - SCORE_CLIP)
    pos = tz.mul(y, tz.log(p))
    neg = tz.mul(1.0 - y, tz.log(1.0 - p))
    return -tz.mean(tz.add(pos, neg))


def mse_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean squared error, the ablation alternative to BCE."""
    if scores.shape != labels.shape:
        raise InputError(f"scores length {scores.shape} != labels length {labels.shape}")
    d = tz.sub(scores, Tensor(labels))
    return tz.mean(tz.mul(d, d))


def decode_boundaries(scores: np.ndarray, timestamps: np.ndarray,
                      threshold: float = 0.5, min_separation: int = 2) -> list:
    """Pick boundary timestamps from a score sequence.

    Frame t is a boundary iff scores[t] >= threshold and it is a strict
    local maximum within +-min_separation frames, with ties broken toward
    the earlier frame (it must strictly beat earlier neighbours and only
    tie-or-beat later ones).
    """
    t_len = len(scores)
    out = []
    for t in range(t_len):
        s = scores[t]
        if s < threshold:
            continue
        lo, hi = max(0, t - min_separation), min(t_len - 1, t + min_separation)
        if any(scores[u] >= s for u in range(lo, t)):
            continue
        if any(scores[u] > s for u in range(t + 1, hi + 1)):
            continue
        out.append(float(timestamps[t]))
    return out
