"""Layer library: linear, conv, batch-norm, residual blocks, a configurable
ResNet-style backbone, and an LSTM, all composed from tensor primitives.

Every layer enumerates its parameters under stable hierarchical names so two
models built from the same config agree on the name set, which is what the
checkpoint format keys on. Initialization: He-normal for conv weights,
Xavier-uniform for linear, uniform(-1/sqrt(h), 1/sqrt(h)) for LSTM matrices
with the forget-gate bias at 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BatchTooSmall, ConfigInvalid, LengthOutOfRange, ShapeMismatch
from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    std = float(np.sqrt(2.0 / fan_in))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def lstm_uniform(rng: np.random.Generator, shape: tuple[int, ...], hidden_dim: int) -> Tensor:
    limit = 1.0 / float(np.sqrt(hidden_dim))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class Linear:
    """Affine map x -> x @ W.T + b with W of shape [out, in]."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = xavier_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix: str = ""):
        return iter(())


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"linear expects [B, {layer.in_dim}], got {x.shape}")
    return T.add(T.matmul(x, T.transpose(layer.weight)), layer.bias)


class Conv2d:
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
    ):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (self.bias.shape[0], 1, 1)))
        return out

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        if self.bias is not None:
            yield prefix + "bias", self.bias

    def named_buffers(self, prefix: str = ""):
        return iter(())


class BatchNorm2d:
    """Per-channel normalization over [N, C, H, W].

    Train mode normalizes with batch statistics (population variance over
    N*H*W) and folds them into the running buffers with the given momentum.
    Eval mode uses the running buffers only, so it is deterministic.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=T.default_dtype())
        self.running_var = np.ones(channels, dtype=T.default_dtype())
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm_forward(self, x)

    def named_parameters(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var


def batchnorm_forward(bn: BatchNorm2d, x: Tensor) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != bn.channels:
        raise ShapeMismatch(f"batchnorm expects [N, {bn.channels}, H, W], got {x.shape}")
    n, _, h, w = x.shape
    gamma = T.reshape(bn.gamma, (bn.channels, 1, 1))
    beta = T.reshape(bn.beta, (bn.channels, 1, 1))
    if bn.training:
        if n * h * w < 2:
            raise BatchTooSmall(f"batchnorm train mode needs N*H*W >= 2, got {n * h * w}")
        mean = T.reduce("mean", x, axes=(0, 2, 3), keepdims=True)
        centered = T.sub(x, mean)
        var = T.reduce("mean", T.mul(centered, centered), axes=(0, 2, 3), keepdims=True)
        normalized = T.div(centered, T.sqrt(var + bn.eps))
        out = T.add(T.mul(normalized, gamma), beta)
        m = bn.momentum
        bn.running_mean = ((1.0 - m) * bn.running_mean + m * mean.data.reshape(-1)).astype(bn.running_mean.dtype)
        bn.running_var = ((1.0 - m) * bn.running_var + m * var.data.reshape(-1)).astype(bn.running_var.dtype)
        return out
    rm = Tensor._wrap(bn.running_mean.reshape(bn.channels, 1, 1).astype(x.data.dtype))
    scale = (1.0 / np.sqrt(bn.running_var + bn.eps)).reshape(bn.channels, 1, 1).astype(x.data.dtype)
    out = T.mul(T.sub(x, rm), Tensor._wrap(scale))
    return T.add(T.mul(out, gamma), beta)


class ResidualBlock:
    """Two 3x3 conv+BN pairs with a skip; 1x1 projection when the shape changes."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1, rng, stride=stride, padding=0)
            self.proj_bn = BatchNorm2d(out_channels)
        else:
            self.proj = None
            self.proj_bn = None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return T.relu(T.add(out, skip))

    def _children(self, prefix: str):
        yield prefix + "conv1.", self.conv1
        yield prefix + "bn1.", self.bn1
        yield prefix + "conv2.", self.conv2
        yield prefix + "bn2.", self.bn2
        if self.proj is not None:
            yield prefix + "proj.", self.proj
            yield prefix + "proj_bn.", self.proj_bn

    def named_parameters(self, prefix: str = ""):
        for child_prefix, child in self._children(prefix):
            yield from child.named_parameters(child_prefix)

    def named_buffers(self, prefix: str = ""):
        for child_prefix, child in self._children(prefix):
            yield from child.named_buffers(child_prefix)

    def set_training(self, training: bool) -> None:
        self.bn1.training = training
        self.bn2.training = training
        if self.proj_bn is not None:
            self.proj_bn.training = training


STAGE_STRIDES = (1, 2, 2, 2)


@dataclass(frozen=True)
class BackboneConfig:
    """Four-stage miniature of the ResNet-18 stage layout.

    The default is desk scale: 3x32x32 input down to a 64x4x4 feature map.
    """

    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    input_size: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ConfigInvalid("backbone needs exactly 4 stages")
        if any(c < 1 for c in self.stage_channels) or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigInvalid("stage channels and block counts must be >= 1")
        if any(e < 1 for e in self.input_size):
            raise ConfigInvalid("input extents must be >= 1")
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "input_size", tuple(int(e) for e in self.input_size))

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[3]

    def output_spatial(self) -> tuple[int, int]:
        """Spatial extents of the feature map, by the composed conv shape law."""
        h, w = self.input_size[1], self.input_size[2]
        h = conv_output_size(h, 3, 1, 1)  # stem
        w = conv_output_size(w, 3, 1, 1)
        for stride in STAGE_STRIDES:
            h = conv_output_size(h, 3, stride, 1)
            w = conv_output_size(w, 3, stride, 1)
        return h, w


class Backbone:
    """Stem conv + four residual stages; emits the spatial feature map unpooled."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        in_ch = cfg.input_size[0]
        self.stem = Conv2d(in_ch, cfg.stage_channels[0], 3, rng, stride=1, padding=1)
        self.stem_bn = BatchNorm2d(cfg.stage_channels[0])
        self.stages: list[list[ResidualBlock]] = []
        prev = cfg.stage_channels[0]
        for channels, blocks, stride in zip(cfg.stage_channels, cfg.blocks_per_stage, STAGE_STRIDES):
            stage = []
            for b in range(blocks):
                stage.append(ResidualBlock(prev, channels, stride if b == 0 else 1, rng))
                prev = channels
            self.stages.append(stage)

    def __call__(self, frames: Tensor) -> Tensor:
        return backbone_forward(self, frames)

    def named_parameters(self, prefix: str = ""):
        yield from self.stem.named_parameters(prefix + "stem.")
        yield from self.stem_bn.named_parameters(prefix + "stem_bn.")
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                yield from block.named_parameters(f"{prefix}stage{i}.block{j}.")

    def named_buffers(self, prefix: str = ""):
        yield from self.stem_bn.named_buffers(prefix + "stem_bn.")
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage):
                yield from block.named_buffers(f"{prefix}stage{i}.block{j}.")

    def set_training(self, training: bool) -> None:
        self.stem_bn.training = training
        for stage in self.stages:
            for block in stage:
                block.set_training(training)


def backbone_forward(backbone: Backbone, frames: Tensor) -> Tensor:
    frames = T.as_tensor(frames)
    expected = backbone.cfg.input_size
    if frames.ndim != 4 or tuple(frames.shape[1:]) != expected:
        raise ShapeMismatch(f"backbone expects [N, {expected[0]}, {expected[1]}, {expected[2]}], got {frames.shape}")
    out = T.relu(backbone.stem_bn(backbone.stem(frames)))
    for stage in backbone.stages:
        for block in stage:
            out = block(out)
    return out


_GATES = ("i", "f", "g", "o")


class LstmLayer:
    """Single LSTM layer; weights per gate: W [H, D], U [H, H], b [H]."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.W = {k: lstm_uniform(rng, (hidden_dim, input_dim), hidden_dim) for k in _GATES}
        self.U = {k: lstm_uniform(rng, (hidden_dim, hidden_dim), hidden_dim) for k in _GATES}
        self.b = {k: Tensor(np.zeros(hidden_dim), requires_grad=True) for k in _GATES}
        self.b["f"].data[:] = 1.0

    def named_parameters(self, prefix: str = ""):
        for k in _GATES:
            yield f"{prefix}W_{k}", self.W[k]
        for k in _GATES:
            yield f"{prefix}U_{k}", self.U[k]
        for k in _GATES:
            yield f"{prefix}b_{k}", self.b[k]

    def named_buffers(self, prefix: str = ""):
        return iter(())


def _validate_lengths(lengths, batch: int, t_max: int) -> list[int]:
    lengths = [int(l) for l in lengths]
    if len(lengths) != batch:
        raise LengthOutOfRange(f"expected {batch} lengths, got {len(lengths)}")
    for l in lengths:
        if not 1 <= l <= t_max:
            raise LengthOutOfRange(f"length {l} outside [1, {t_max}]")
    return lengths


def lstm_step_sequence(layer: LstmLayer, seq: Tensor, lengths: list[int]) -> list[Tensor]:
    """Run the recurrence over [B, T, D]; returns the masked hidden state per step.

    The state stops updating once a sequence's length is exhausted, so padded
    steps contribute nothing to the outputs or to any gradient.
    """
    batch, t_max, dim = seq.shape
    if dim != layer.input_dim:
        raise ShapeMismatch(f"lstm expects feature dim {layer.input_dim}, got {dim}")
    lengths = _validate_lengths(lengths, batch, t_max)
    dtype = seq.data.dtype
    wt = {k: T.transpose(layer.W[k]) for k in _GATES}
    ut = {k: T.transpose(layer.U[k]) for k in _GATES}
    h = Tensor._wrap(np.zeros((batch, layer.hidden_dim), dtype=dtype))
    c = Tensor._wrap(np.zeros((batch, layer.hidden_dim), dtype=dtype))
    outputs = []
    lengths_arr = np.asarray(lengths)
    for t in range(t_max):
        x_t = seq[:, t, :]
        mask = Tensor._wrap((t < lengths_arr).astype(dtype).reshape(batch, 1))
        gate_i = T.sigmoid(T.add(T.add(T.matmul(x_t, wt["i"]), T.matmul(h, ut["i"])), layer.b["i"]))
        gate_f = T.sigmoid(T.add(T.add(T.matmul(x_t, wt["f"]), T.matmul(h, ut["f"])), layer.b["f"]))
        cand = T.tanh(T.add(T.add(T.matmul(x_t, wt["g"]), T.matmul(h, ut["g"])), layer.b["g"]))
        gate_o = T.sigmoid(T.add(T.add(T.matmul(x_t, wt["o"]), T.matmul(h, ut["o"])), layer.b["o"]))
        c_new = T.add(T.mul(gate_f, c), T.mul(gate_i, cand))
        h_new = T.mul(gate_o, T.tanh(c_new))
        inv_mask = Tensor._wrap(1.0 - mask.data)
        c = T.add(T.mul(c_new, mask), T.mul(c, inv_mask))
        h = T.add(T.mul(h_new, mask), T.mul(h, inv_mask))
        outputs.append(h)
    return outputs


def lstm_forward(layer: LstmLayer, seq: Tensor, lengths) -> Tensor:
    """Final hidden state per sequence, taken at t = lengths[b] - 1."""
    seq = T.as_tensor(seq)
    if seq.ndim != 3:
        raise ShapeMismatch(f"lstm expects [B, T, D], got {seq.shape}")
    return lstm_step_sequence(layer, seq, list(lengths))[-1]
