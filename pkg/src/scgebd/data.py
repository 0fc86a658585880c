"""File formats, uniform frame sampling and the synthetic data generator.

Feature files are binary (features are bulky): little-endian magic
``SCXF``, version u32, id length u32 + UTF-8 id, T u32, C u32, fps f32,
then T*C float32 values row-major.  Annotations and predictions are JSON
documents keyed by video id.

The synthetic generator plants piecewise-constant segment latents with
short linear transitions between them; change points become ground-truth
boundaries and three simulated raters observe them with Gaussian jitter.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .evaluate import BoundaryAnnotation

FEATURE_MAGIC = b"SCXF"
FEATURE_VERSION = 1


@dataclass
class FeatureSequence:
    """Frame features plus aligned timestamps."""

    video_id: str
    features: np.ndarray    # [T, C] float32
    timestamps: np.ndarray  # [T] seconds
    fps: float

    @property
    def duration(self) -> float:
        return self.features.shape[0] / self.fps


@dataclass
class SyntheticSpec:
    """Parameters of the planted-boundary generator; deterministic per seed."""

    seed: int = 0
    num_videos: int = 1
    length: int = 100           # frames per video (T)
    channels: int = 32          # feature dimension (C)
    fps: float = 1.0
    segments_min: int = 3
    segments_max: int = 6
    latent_dim: int | None = None   # default: equals channels
    noise_sigma: float = 0.3
    jitter_sigma: float = 1.0       # rater jitter, in frames
    raters: int = 3
    min_segment_frames: int = 5
    transition_frames: int = 2      # linear blend width at each change point
    id_prefix: str = "synth"

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ConfigError(f"num_videos must be >= 1, got {self.num_videos}")
        if self.length < 1 or self.channels < 1:
            raise ConfigError(f"length and channels must be >= 1, got {self.length}x{self.channels}")
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if not 1 <= self.segments_min <= self.segments_max:
            raise ConfigError(
                f"segment range invalid: [{self.segments_min}, {self.segments_max}]")
        if self.noise_sigma < 0 or self.jitter_sigma < 0:
            raise ConfigError("noise and jitter sigmas must be nonnegative")
        if self.raters < 1:
            raise ConfigError(f"raters must be >= 1, got {self.raters}")
        if self.min_segment_frames < 1:
            raise ConfigError(f"min_segment_frames must be >= 1, got {self.min_segment_frames}")
        if self.transition_frames < 0:
            raise ConfigError(f"transition_frames must be >= 0, got {self.transition_frames}")
        if self.segments_max * self.min_segment_frames > self.length:
            raise ConfigError(
                f"{self.segments_max} segments of >= {self.min_segment_frames} frames "
                f"do not fit in {self.length} frames")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")


def default_timestamps(length: int, fps: float) -> np.ndarray:
    return np.arange(length, dtype=np.float64) / fps


# ---------------------------------------------------------------------------
# uniform sampling
# ---------------------------------------------------------------------------

def sample_uniform(seq: FeatureSequence, target: int = 100) -> FeatureSequence:
    """Uniformly sample ``target`` frames, carrying timestamps along.

    Index i maps to round(i * (len-1) / (target-1)); a source shorter than
    the target is covered by replication.
    """
    source = seq.features.shape[0]
    if source < 1:
        raise InputError("cannot sample an empty sequence")
    if target == source:
        return seq
    if target == 1:
        idx = np.zeros(1, dtype=np.int64)
    else:
        positions = np.arange(target, dtype=np.float64) * (source - 1) / (target - 1)
        idx = np.floor(positions + 0.5).astype(np.int64)
    return FeatureSequence(
        video_id=seq.video_id,
        features=np.ascontiguousarray(seq.features[idx]),
        timestamps=seq.timestamps[idx].copy(),
        fps=seq.fps,
    )


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def _latent_projection(spec: SyntheticSpec) -> np.ndarray | None:
    dim = spec.latent_dim
    if dim is None or dim == spec.channels:
        return None
    rng = np.random.default_rng([spec.seed, 0xBEEF])
    return (rng.normal(0, 1, (dim, spec.channels)) / math.sqrt(dim)).astype(np.float32)


def _plant_boundaries(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    segments = int(rng.integers(spec.segments_min, spec.segments_max + 1))
    slack = spec.length - segments * spec.min_segment_frames
    extra = rng.multinomial(slack, [1.0 / segments] * segments)
    lengths = spec.min_segment_frames + extra
    return np.cumsum(lengths)[:-1]  # change points: first frame of each new segment


def generate_video(spec: SyntheticSpec, index: int):
    """One synthetic video: (FeatureSequence, BoundaryAnnotation, true boundary frames)."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    boundaries = _plant_boundaries(rng, spec)
    segments = len(boundaries) + 1
    dim = spec.latent_dim if spec.latent_dim is not None else spec.channels
    latents = rng.normal(0, 1, (segments, dim)).astype(np.float32)
    projection = _latent_projection(spec)
    if projection is not None:
        latents = latents @ projection

    seg_idx = np.zeros(spec.length, dtype=np.int64)
    for b in boundaries:
        seg_idx[b:] += 1
    clean = latents[seg_idx]
    width = spec.transition_frames
    if width > 0:
        # linear cross-fade around each change point
        for b in boundaries:
            prev_latent = latents[seg_idx[b] - 1]
            next_latent = latents[seg_idx[b]]
            for off in range(-width, width + 1):
                t = b + off
                if 0 <= t < spec.length:
                    w = (off + width) / (2.0 * width)
                    clean[t] = (1.0 - w) * prev_latent + w * next_latent
    noise = rng.normal(0, spec.noise_sigma, clean.shape).astype(np.float32)
    features = (clean + noise).astype(np.float32)

    video_id = f"{spec.id_prefix}{index:05d}"
    duration = spec.length / spec.fps
    raters = []
    for r in range(spec.raters):
        jitter = rng.normal(0, spec.jitter_sigma, len(boundaries))
        stamps = np.clip((boundaries + jitter) / spec.fps, 0.0, duration)
        raters.append((f"rater_{r}", sorted(float(s) for s in stamps)))
    annotation = BoundaryAnnotation(video_id=video_id, duration=duration, raters=raters)
    seq = FeatureSequence(video_id=video_id, features=features,
                          timestamps=default_timestamps(spec.length, spec.fps), fps=spec.fps)
    return seq, annotation, boundaries


def generate_dataset(spec: SyntheticSpec, start_index: int = 0):
    """(sequences, annotations dict) for spec.num_videos videos."""
    spec.validate()
    sequences, annotations = [], {}
    for i in range(start_index, start_index + spec.num_videos):
        seq, annotation, _ = generate_video(spec, i)
        sequences.append(seq)
        annotations[annotation.video_id] = annotation
    return sequences, annotations


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def write_features(path: str, seq: FeatureSequence) -> None:
    features = np.ascontiguousarray(seq.features, dtype=np.float32)
    t, c = features.shape
    encoded = seq.video_id.encode("utf-8")
    blob = bytearray()
    blob += FEATURE_MAGIC
    blob += struct.pack("<II", FEATURE_VERSION, len(encoded))
    blob += encoded
    blob += struct.pack("<IIf", t, c, seq.fps)
    blob += features.tobytes()
    _atomic_write(path, bytes(blob))


def read_features(path: str) -> FeatureSequence:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise InputError(f"feature file {path}: truncated while reading {what} "
                             f"(need {n} bytes at offset {pos}, file has {len(data)})")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != FEATURE_MAGIC:
        raise InputError(f"feature file {path}: bad magic, not a feature file")
    version, id_len = struct.unpack("<II", take(8, "header"))
    if version != FEATURE_VERSION:
        raise InputError(f"feature file {path}: unsupported version {version}")
    video_id = take(id_len, "video id").decode("utf-8")
    t, c, fps = struct.unpack("<IIf", take(12, "dimensions"))
    if t < 1 or c < 1:
        raise InputError(f"feature file {path}: invalid dimensions {t}x{c}")
    if fps <= 0:
        raise InputError(f"feature file {path}: fps must be positive, got {fps}")
    payload = take(4 * t * c, f"{t}x{c} payload")
    if pos != len(data):
        raise InputError(f"feature file {path}: {len(data) - pos} trailing bytes")
    features = np.frombuffer(payload, dtype="<f4").reshape(t, c).copy()
    return FeatureSequence(video_id=video_id, features=features,
                           timestamps=default_timestamps(t, fps), fps=fps)


# ---------------------------------------------------------------------------
# annotation / prediction JSON
# ---------------------------------------------------------------------------

def write_annotations(path: str, annotations: dict) -> None:
    doc = {}
    for vid, a in sorted(annotations.items()):
        doc[vid] = {
            "duration": a.duration,
            "raters": {rid: list(stamps) for rid, stamps in a.raters},
        }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))


def read_annotations(path: str) -> dict:
    doc = _read_json(path)
    annotations = {}
    for vid, rec in doc.items():
        if not isinstance(rec, dict) or "duration" not in rec or "raters" not in rec:
            raise InputError(f"{path}: video '{vid}': expected duration and raters fields")
        raters = [(rid, [float(t) for t in stamps])
                  for rid, stamps in sorted(rec["raters"].items())]
        annotation = BoundaryAnnotation(video_id=vid, duration=float(rec["duration"]),
                                        raters=raters)
        annotation.validate()
        annotations[vid] = annotation
    return annotations


def write_predictions(path: str, predictions: dict) -> None:
    doc = {vid: [float(t) for t in stamps] for vid, stamps in sorted(predictions.items())}
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))


def read_predictions(path: str) -> dict:
    doc = _read_json(path)
    predictions = {}
    for vid, stamps in doc.items():
        if not isinstance(stamps, list):
            raise InputError(f"{path}: video '{vid}': expected a list of timestamps")
        values = [float(t) for t in stamps]
        if any(b < a for a, b in zip(values, values[1:])):
            raise InputError(f"{path}: video '{vid}': timestamps not sorted")
        predictions[vid] = values
    return predictions


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a top-level object keyed by video id")
    return doc


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
