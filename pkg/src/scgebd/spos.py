"""Structured re-partitioning of a frame sequence into context windows.

A T x C sequence is zero-padded to T' (divisible by K) and split into K
slices.  Slice k serves every frame t with t mod K == k and hands it a
length L = 2K+1 window: the K frames before it, the frame itself, and the
K frames after it, edges clamped by replication.  Every frame is a window
center in exactly one slice, so downstream modules see rectangular
N x L x C batches that cover the sequence one-to-one and can run in
parallel.

The left context of slice k is built by prepending K-k copies of the first
padded frame and dropping the last K-k frames, then viewing the result as
N x K x C; the right context prepends nothing but appends k+1 copies of the
last padded frame and drops the first k+1.  Both shifted views line up row
n with candidate frame t = n*K + k.  Note the right edge replicates the
last *padded* frame, which is a zero vector whenever padding was added;
``clamp_to_last_real_frame`` switches the right context to clamp at the
last real frame instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, InternalError, UsageError


@dataclass
class PaddedSequence:
    """Zero-padded feature sequence; T' = ceil(T/K)*K rows."""

    features: np.ndarray  # [T', C]
    original_length: int

    @property
    def padded_length(self) -> int:
        return self.features.shape[0]

    @property
    def pad_count(self) -> int:
        return self.padded_length - self.original_length


@dataclass
class SliceContext:
    """Left/right shifted views plus candidates for one slice."""

    slice_index: int
    left: np.ndarray        # [N, K, C]
    right: np.ndarray       # [N, K, C]
    candidates: np.ndarray  # [N, C]


@dataclass
class ContextWindowBatch:
    """N context windows of length L = 2K+1 for one slice."""

    windows: np.ndarray       # [N, L, C]
    slice_index: int
    frame_indices: np.ndarray  # [N] absolute (padded) frame positions


def pad_sequence(features: np.ndarray, window: int) -> PaddedSequence:
    """Append zero rows until the length is divisible by ``window``."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise InputError(f"expected a nonempty T x C feature matrix, got shape {tuple(features.shape)}")
    if window < 1:
        raise InputError(f"window size must be >= 1, got {window}")
    t, c = features.shape
    padded_len = -(-t // window) * window
    if padded_len == t:
        padded = features
    else:
        padded = np.concatenate([features, np.zeros((padded_len - t, c), dtype=np.float32)])
    return PaddedSequence(features=padded, original_length=t)


def build_slice(padded: PaddedSequence, slice_index: int, window: int,
                clamp_to_last_real_frame: bool = False) -> SliceContext:
    """Construct the shifted left/right context views for one slice."""
    k, big_k = slice_index, window
    if not 0 <= k < big_k:
        raise UsageError(f"slice index {k} out of range for {big_k} slices")
    v = padded.features
    t_pad, _ = v.shape
    n = t_pad // big_k

    left_src = np.concatenate([np.repeat(v[:1], big_k - k, axis=0), v])[:t_pad]
    left = left_src.reshape(n, big_k, -1)

    if clamp_to_last_real_frame:
        # alternative semantics: right contexts never see zero pad rows
        t_real = padded.original_length
        centers = np.arange(n) * big_k + k
        idx = np.clip(centers[:, None] + np.arange(1, big_k + 1)[None, :], 0, t_real - 1)
        right = v[idx]
    else:
        right_src = np.concatenate([v, np.repeat(v[-1:], k + 1, axis=0)])[k + 1:]
        right = right_src.reshape(n, big_k, -1)

    candidates = v[k::big_k]
    return SliceContext(slice_index=k, left=left, right=right, candidates=candidates)


def context_windows(ctx: SliceContext, window: int) -> ContextWindowBatch:
    """Concatenate [left, candidate, right] along time into N x L x C."""
    n = ctx.candidates.shape[0]
    windows = np.concatenate([ctx.left, ctx.candidates[:, None, :], ctx.right], axis=1)
    frames = np.arange(n) * window + ctx.slice_index
    return ContextWindowBatch(windows=np.ascontiguousarray(windows),
                              slice_index=ctx.slice_index, frame_indices=frames)


def partition(features: np.ndarray, window: int,
              clamp_to_last_real_frame: bool = False) -> list:
    """Re-partition a T x C sequence into K batches of context windows.

    Every padded frame index appears as a window center in exactly one
    batch; batch k covers frames k, k+K, k+2K, ...
    """
    padded = pad_sequence(features, window)
    return [
        context_windows(build_slice(padded, k, window, clamp_to_last_real_frame), window)
        for k in range(window)
    ]


def scatter_outputs(per_slice_outputs: list, original_length: int) -> np.ndarray:
    """Interleave K per-slice outputs back into frame order.

    Output row t comes from slice t mod K, row t div K; rows at padded
    indices >= original_length are dropped.
    """
    k = len(per_slice_outputs)
    arrays = [np.asarray(o) for o in per_slice_outputs]
    first = arrays[0].shape
    for i, a in enumerate(arrays):
        if a.shape != first:
            raise InternalError(f"slice output {i} has shape {a.shape}, expected {first} like slice 0")
    stacked = np.stack(arrays, axis=1)  # [N, K, ...]
    merged = stacked.reshape(first[0] * k, *first[1:])
    return merged[:original_length]
