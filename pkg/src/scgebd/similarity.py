"""Grouped pairwise similarity maps and the convolutional pattern reader.

Encoded windows are split channel-wise into G groups; each group yields an
L x L map of pairwise frame similarities, so one window becomes a G x L x L
stack whose block structure reveals boundaries.  Cosine is the default
metric; euclidean, manhattan and chebyshev run as negated distances (the
diagonal is 0 and off-diagonal entries are <= 0).  A 4-layer 3x3 conv
network (channels G -> C/4 -> C/2 -> C -> C, ReLU between layers) reads the
stack and spatial average pooling turns it into one C-vector per frame.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tz
from .errors import ConfigError
from .tensor import Tensor

SIMILARITY_KINDS = ("cosine", "euclidean", "manhattan", "chebyshev")

COSINE_EPS = 1e-8      # guards zero vectors (pad frames): their cosine is 0
_NORM_FLOOR = 1e-12    # keeps sqrt differentiable at zero vectors


def split_groups(x: Tensor, groups: int) -> Tensor:
    """Reshape [N, L, C] into grouped channels [N, L, G, C/G].

    Channel c of group g is original channel g*(C/G) + c; pure view, no
    data movement.
    """
    n, l, c = x.shape
    if c % groups != 0:
        raise ConfigError(f"channels ({c}) not divisible by groups ({groups})")
    return tz.reshape(x, (n, l, groups, c // groups))


def similarity(grouped: Tensor, kind: str = "cosine") -> Tensor:
    """Pairwise per-group similarity maps, [N, L, G, C'] -> [N, G, L, L]."""
    if kind not in SIMILARITY_KINDS:
        raise ConfigError(f"unknown similarity kind '{kind}', expected one of {SIMILARITY_KINDS}")
    x = tz.transpose(grouped, (0, 2, 1, 3))  # [N, G, L, C']
    n, g, l, _ = x.shape
    if kind in ("cosine", "euclidean"):
        dots = tz.matmul(x, tz.transpose(x, (0, 1, 3, 2)))          # [N, G, L, L]
        sumsq = tz.summation(tz.mul(x, x), axis=-1, keepdims=True)  # [N, G, L, 1]
        if kind == "cosine":
            norms = tz.sqrt(tz.add(sumsq, tz.Tensor(_NORM_FLOOR)))
            denom = tz.mul(norms, tz.transpose(norms, (0, 1, 3, 2))) + COSINE_EPS
            return tz.div(dots, denom)
        # ||a-b||^2 = ||a||^2 + ||b||^2 - 2ab; relu clamps rounding negatives
        sq = tz.relu(tz.add(sumsq, tz.transpose(sumsq, (0, 1, 3, 2))) - dots * 2.0)
        off_diag = Tensor(1.0 - np.eye(l, dtype=np.float32))
        return -tz.mul(tz.sqrt(sq + _NORM_FLOOR), off_diag)
    # manhattan / chebyshev: one row of the map per step keeps rank <= 4
    columns = []
    for i in range(l):
        ref = tz.narrow(x, 2, i, 1)                 # [N, G, 1, C']
        diff = tz.absolute(tz.sub(x, ref))          # [N, G, L, C']
        if kind == "manhattan":
            col = tz.summation(diff, axis=-1)       # [N, G, L]
        else:
            col = tz.amax(diff, axis=-1)
        columns.append(tz.reshape(col, (n, g, 1, l)))
    return -tz.concat(columns, axis=2)


def fcn_channel_schedule(groups: int, channels: int) -> list:
    """Conv channel widths G -> C/4 -> C/2 -> C -> C."""
    if channels % 4 != 0:
        raise ConfigError(f"channels ({channels}) must be divisible by 4 for the pattern reader")
    return [groups, channels // 4, channels // 2, channels, channels]


def init_fcn_params(groups: int, channels: int, rng: np.random.Generator,
                    prefix: str = "fcn.") -> dict:
    schedule = fcn_channel_schedule(groups, channels)
    params = {}
    for i in range(4):
        cin, cout = schedule[i], schedule[i + 1]
        params[f"{prefix}conv{i}.weight"] = Tensor(
            tz.he_uniform(rng, (cout, cin, 3, 3), cin * 9), requires_grad=True)
        params[f"{prefix}conv{i}.bias"] = Tensor(
            np.zeros(cout, dtype=np.float32), requires_grad=True)
    return params


def read_patterns(maps: Tensor, params: dict, prefix: str = "fcn.") -> Tensor:
    """Run the 4-layer conv reader and pool, [N, G, L, L] -> [N, C].

    Internally the stack runs channels-last (one cheap transpose of the
    G-channel input) to keep the conv gathers cache-friendly; results
    match the channels-first formulation within float rounding.
    """
    expected = params[prefix + "conv0.weight"].shape[1]
    if maps.shape[1] != expected:
        raise ConfigError(
            f"pattern reader expects {expected} input channels, got {maps.shape[1]} groups")
    h = tz.transpose(maps, (0, 2, 3, 1))
    for i in range(4):
        h = tz.conv2d_cl(h, params[f"{prefix}conv{i}.weight"], params[f"{prefix}conv{i}.bias"])
        if i < 3:
            h = tz.relu(h)
    return tz.mean(h, axis=(1, 2))
