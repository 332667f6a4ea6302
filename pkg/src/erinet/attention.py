"""Multi-head cross-attention over a spatial feature map.

Each head gates the feature map twice: a spatial attention map in (0,1)
produced by a small conv stack, and per-channel gates in (0,1) produced by a
squeeze-style bottleneck on the pooled features. The gated map is then
average-pooled to one vector per sample, and a block sums its heads in index
order.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigInvalid, ShapeMismatch
from .nn import Conv2d, Linear
from .tensor import Tensor


class CrossAttentionHead:
    """Spatial gate (conv 1x1 -> relu -> conv 3x3 -> sigmoid) times channel
    gate (GAP -> linear C->C/r -> relu -> linear C/r->C -> sigmoid)."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if reduction < 1 or channels % reduction != 0:
            raise ConfigInvalid(f"reduction {reduction} must divide channel count {channels}")
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction
        self.spatial_conv1 = Conv2d(channels, hidden, 1, rng, bias=True)
        self.spatial_conv2 = Conv2d(hidden, 1, 3, rng, padding=1, bias=True)
        self.channel_fc1 = Linear(channels, hidden, rng)
        self.channel_fc2 = Linear(hidden, channels, rng)

    def __call__(self, fmap: Tensor) -> Tensor:
        return attention_head_forward(self, fmap)

    def _children(self, prefix: str):
        yield prefix + "spatial_conv1.", self.spatial_conv1
        yield prefix + "spatial_conv2.", self.spatial_conv2
        yield prefix + "channel_fc1.", self.channel_fc1
        yield prefix + "channel_fc2.", self.channel_fc2

    def named_parameters(self, prefix: str = ""):
        for child_prefix, child in self._children(prefix):
            yield from child.named_parameters(child_prefix)

    def named_buffers(self, prefix: str = ""):
        return iter(())


def attention_head_forward(head: CrossAttentionHead, fmap: Tensor) -> Tensor:
    """Gate the [N, C, h, w] map spatially and per channel, then pool to [N, C]."""
    fmap = T.as_tensor(fmap)
    if fmap.ndim != 4 or fmap.shape[1] != head.channels:
        raise ShapeMismatch(f"attention head expects [N, {head.channels}, h, w], got {fmap.shape}")
    spatial_map = T.sigmoid(head.spatial_conv2(T.relu(head.spatial_conv1(fmap))))
    pooled = T.reduce("mean", fmap, axes=(2, 3))
    gates = T.sigmoid(head.channel_fc2(T.relu(head.channel_fc1(pooled))))
    gates_4d = T.reshape(gates, (fmap.shape[0], head.channels, 1, 1))
    gated = T.mul(T.mul(fmap, spatial_map), gates_4d)
    return T.reduce("mean", gated, axes=(2, 3))


class AttentionBlock:
    """H independent heads over one feature map, summed in index order."""

    def __init__(self, channels: int, heads: int = 4, reduction: int = 4, rng: np.random.Generator | None = None):
        if heads < 1:
            raise ConfigInvalid("attention block needs at least one head")
        rng = rng if rng is not None else np.random.default_rng()
        self.channels = channels
        self.heads = [CrossAttentionHead(channels, reduction, rng) for _ in range(heads)]

    def __call__(self, fmap: Tensor) -> Tensor:
        return attention_block_forward(self, fmap)

    def named_parameters(self, prefix: str = ""):
        for i, head in enumerate(self.heads):
            yield from head.named_parameters(f"{prefix}head{i}.")

    def named_buffers(self, prefix: str = ""):
        return iter(())


def attention_block_forward(block: AttentionBlock, fmap: Tensor) -> Tensor:
    out = attention_head_forward(block.heads[0], fmap)
    for head in block.heads[1:]:
        out = T.add(out, attention_head_forward(head, fmap))
    return out
