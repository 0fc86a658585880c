"""End-to-end boundary detector: partition, encode, compare, classify.

One forward pass handles a whole video: the frame sequence is partitioned
into K slices of context windows, all windows are projected to model width
and encoded in a single batch, grouped similarity maps are read into
per-frame vectors, the vectors are scattered back to frame order, and the
conv head scores every real frame.  Predictions at padded indices are
dropped when scattering.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint, head as head_mod, similarity as sim, spos, tensor as tz
from .data import FeatureSequence
from .encoder import EncoderConfig, encode, init_encoder_params
from .errors import ConfigError, InputError
from .head import ScoreSequence, init_head_params
from .similarity import SIMILARITY_KINDS
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Architecture switches; desk-scale defaults, paper_config() for the
    full-size variant."""

    in_channels: int = 32
    channels: int = 64
    window: int = 8            # K; context is K frames each side, L = 2K+1
    groups: int = 4
    layers: int = 2
    heads: int = 4
    ffn_multiplier: int = 4
    similarity: str = "cosine"
    positional_embedding: bool = True
    clamp_right_context: bool = False
    label_sigma: float = 1.0
    gaussian_labels: bool = True
    loss: str = "bce"
    decode_threshold: float = 0.5
    decode_min_separation: int = 2

    @property
    def window_length(self) -> int:
        return 2 * self.window + 1

    @classmethod
    def paper_config(cls, **overrides) -> "ModelConfig":
        base = dict(channels=256, layers=6, window=8, groups=4)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.window < 1:
            raise ConfigError(f"window (K) must be >= 1, got {self.window}")
        if self.channels % self.groups != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by groups ({self.groups})")
        if self.similarity not in SIMILARITY_KINDS:
            raise ConfigError(
                f"similarity must be one of {SIMILARITY_KINDS}, got '{self.similarity}'")
        if self.loss not in ("bce", "mse"):
            raise ConfigError(f"loss must be 'bce' or 'mse', got '{self.loss}'")
        if not 0.0 <= self.decode_threshold <= 1.0:
            raise ConfigError(
                f"decode_threshold must lie in [0, 1], got {self.decode_threshold}")
        if self.decode_min_separation < 1:
            raise ConfigError(
                f"decode_min_separation must be >= 1, got {self.decode_min_separation}")
        if self.label_sigma <= 0:
            raise ConfigError(f"label_sigma must be positive, got {self.label_sigma}")
        self.encoder_config().validate()
        sim.fcn_channel_schedule(self.groups, self.channels)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(layers=self.layers, channels=self.channels, heads=self.heads,
                             ffn_multiplier=self.ffn_multiplier,
                             window_length=self.window_length,
                             positional_embedding=self.positional_embedding)


class BoundaryDetector:
    """Model parameters plus the forward pipeline."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict = {}
        self.params["input_proj.weight"] = Tensor(
            tz.he_uniform(rng, (cfg.in_channels, cfg.channels), cfg.in_channels),
            requires_grad=True)
        self.params["input_proj.bias"] = Tensor(
            np.zeros(cfg.channels, dtype=np.float32), requires_grad=True)
        self.params.update(init_encoder_params(cfg.encoder_config(), rng))
        self.params.update(sim.init_fcn_params(cfg.groups, cfg.channels, rng))
        self.params.update(init_head_params(cfg.channels, rng))
        self.last_forward_window_count = 0

    # ------------------------------------------------------------------
    # forward pieces
    # ------------------------------------------------------------------

    def _stack_windows(self, features: np.ndarray):
        batches = spos.partition(features, self.cfg.window,
                                 clamp_to_last_real_frame=self.cfg.clamp_right_context)
        stacked = np.concatenate([b.windows for b in batches], axis=0)
        per_slice = batches[0].windows.shape[0]
        return stacked, per_slice

    def forward(self, features: np.ndarray, return_similarity: bool = False):
        """Score a [T, C_in] sequence; returns a [T] score Tensor.

        With ``return_similarity`` also returns the [T', G, L, L] map stack
        in padded-frame order (window centers, before scattering).
        """
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise InputError(f"expected [T, C] features, got shape {features.shape}")
        t_real, c_in = features.shape
        if c_in != self.cfg.in_channels:
            raise ConfigError(
                f"model expects {self.cfg.in_channels} input channels, got {c_in}")
        cfg = self.cfg
        k = cfg.window
        stacked, per_slice = self._stack_windows(features)
        self.last_forward_window_count = stacked.shape[0]

        x = Tensor(stacked)                                  # [K*N, L, C_in]
        flat = tz.reshape(x, (-1, c_in))
        proj = tz.add(tz.matmul(flat, self.params["input_proj.weight"]),
                      self.params["input_proj.bias"])
        x = tz.reshape(proj, (stacked.shape[0], cfg.window_length, cfg.channels))

        encoded = encode(x, cfg.encoder_config(), self.params)
        grouped = sim.split_groups(encoded, cfg.groups)
        maps = sim.similarity(grouped, cfg.similarity)       # [K*N, G, L, L]
        pooled = sim.read_patterns(maps, self.params)        # [K*N, C]

        # scatter back to frame order: row t comes from slice t mod K
        by_slice = tz.reshape(pooled, (k, per_slice, cfg.channels))
        seq = tz.reshape(tz.transpose(by_slice, (1, 0, 2)), (k * per_slice, cfg.channels))
        seq = tz.narrow(seq, 0, 0, t_real)                   # drop padded frames
        scores = head_mod.classify(seq, self.params)
        if return_similarity:
            sim_maps = tz.reshape(maps, (k, per_slice, *maps.shape[1:]))
            sim_maps = tz.transpose(sim_maps, (1, 0, 2, 3, 4))
            merged = sim_maps.data.reshape(k * per_slice, *maps.shape[1:])
            return scores, merged
        return scores

    def loss(self, features: np.ndarray, labels: np.ndarray):
        scores = self.forward(features)
        if self.cfg.loss == "mse":
            return head_mod.mse_loss(scores, labels)
        return head_mod.bce_loss(scores, labels)

    def predict(self, seq: FeatureSequence) -> ScoreSequence:
        """Single forward pass, then peak decoding to timestamps."""
        with tz.no_grad():
            scores = self.forward(seq.features).data.copy()
        boundaries = head_mod.decode_boundaries(
            scores, seq.timestamps, threshold=self.cfg.decode_threshold,
            min_separation=self.cfg.decode_min_separation)
        return ScoreSequence(scores=scores, boundaries=boundaries)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path: str) -> None:
        """Checkpoint weights; the config goes to ``<path>.json`` alongside."""
        checkpoint.save_arrays(path, {k: v.data for k, v in self.params.items()})
        payload = json.dumps(asdict(self.cfg), indent=2, sort_keys=True).encode("utf-8")
        cfg_path = config_path_for(path)
        directory = os.path.dirname(os.path.abspath(cfg_path))
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, cfg_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str, cfg: ModelConfig | None = None) -> "BoundaryDetector":
        if cfg is None:
            cfg_path = config_path_for(path)
            if not os.path.exists(cfg_path):
                raise InputError(f"no config found at {cfg_path}; pass one explicitly")
            with open(cfg_path, "r", encoding="utf-8") as fh:
                cfg = ModelConfig(**json.load(fh))
        model = cls(cfg, seed=0)
        arrays = checkpoint.load_arrays(path)
        if set(arrays) != set(model.params):
            missing = sorted(set(model.params) - set(arrays))
            extra = sorted(set(arrays) - set(model.params))
            raise InputError(
                f"checkpoint {path} does not match the model config "
                f"(missing: {missing[:3]}{'...' if len(missing) > 3 else ''}, "
                f"unexpected: {extra[:3]}{'...' if len(extra) > 3 else ''})")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].data.shape:
                raise InputError(
                    f"checkpoint {path}: array '{name}' has shape {arr.shape}, "
                    f"config implies {model.params[name].data.shape}")
            model.params[name].data = arr.astype(np.float32)
        return model


def config_path_for(ckpt_path: str) -> str:
    return ckpt_path + ".json"
