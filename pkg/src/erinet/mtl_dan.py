"""Multi-task facial feature extractor.

A shared backbone feeds two independent attention blocks (expression and
action-unit tasks). The valence/arousal task sees only the globally pooled
backbone feature. Every task head receives the shared feature (concatenated
attention outputs of the two attended tasks) next to its own feature, so all
three head inputs live in R^{3C}:

    expr head: [shared || attn_expr]   -> 8-way softmax
    au head:   [shared || attn_au]     -> 12 sigmoid units
    va head:   [shared || pooled]      -> 2 tanh units

The per-frame descriptor is the fixed-order concatenation
[expr || au || va] in R^22, either post-activation (default) or raw logits.
The whole extractor can be frozen, excluding it from gradient computation
and optimizer updates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics
from . import tensor as T
from .attention import AttentionBlock
from .errors import FrozenModel, LabelOutOfRange
from .nn import Backbone, BackboneConfig, Linear
from .optim import Adam
from .tensor import Tensor

EXPR_DIM = 8
AU_DIM = 12
VA_DIM = 2
DESCRIPTOR_DIM = EXPR_DIM + AU_DIM + VA_DIM

DESCRIPTOR_MODES = ("activated", "logits")


@dataclass
class EmotionDescriptor:
    """Batched per-frame task outputs and their fixed-order concatenation."""

    v_expr: Tensor  # [N, 8]
    v_au: Tensor  # [N, 12]
    v_va: Tensor  # [N, 2]
    concat: Tensor  # [N, 22], always [expr || au || va]
    mode: str


@dataclass
class ForwardInternals:
    """Intermediate features exposed for routing and gradient-isolation tests."""

    fmap: Tensor
    attn_expr: Tensor
    attn_au: Tensor
    pooled: Tensor
    shared: Tensor
    expr_logits: Tensor
    au_logits: Tensor
    va_logits: Tensor


class MtlDanModel:
    def __init__(
        self,
        backbone_cfg: BackboneConfig,
        rng: np.random.Generator,
        attn_heads: int = 4,
        attn_reduction: int = 4,
        descriptor_mode: str = "activated",
    ):
        if descriptor_mode not in DESCRIPTOR_MODES:
            raise ValueError(f"descriptor_mode must be one of {DESCRIPTOR_MODES}")
        c = backbone_cfg.feature_dim
        self.backbone = Backbone(backbone_cfg, rng)
        self.attn_expr = AttentionBlock(c, attn_heads, attn_reduction, rng)
        self.attn_au = AttentionBlock(c, attn_heads, attn_reduction, rng)
        self.head_expr = Linear(3 * c, EXPR_DIM, rng)
        self.head_au = Linear(3 * c, AU_DIM, rng)
        self.head_va = Linear(3 * c, VA_DIM, rng)
        self.descriptor_mode = descriptor_mode
        self._pretrain_optimizer: Adam | None = None
        self._pretrain_lr: float | None = None

    @property
    def feature_dim(self) -> int:
        return self.backbone.cfg.feature_dim

    def __call__(self, frames: Tensor) -> EmotionDescriptor:
        return mtl_dan_forward(self, frames)

    def named_parameters(self, prefix: str = ""):
        yield from self.backbone.named_parameters(prefix + "backbone.")
        yield from self.attn_expr.named_parameters(prefix + "attn_expr.")
        yield from self.attn_au.named_parameters(prefix + "attn_au.")
        yield from self.head_expr.named_parameters(prefix + "head_expr.")
        yield from self.head_au.named_parameters(prefix + "head_au.")
        yield from self.head_va.named_parameters(prefix + "head_va.")

    def named_buffers(self, prefix: str = ""):
        yield from self.backbone.named_buffers(prefix + "backbone.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_training(self, training: bool) -> None:
        self.backbone.set_training(training)

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters())


def set_frozen(model: MtlDanModel, frozen: bool) -> None:
    """Include or exclude every extractor parameter from gradient computation."""
    for p in model.parameters():
        p.requires_grad = not frozen
        if frozen:
            p.grad = None


def mtl_dan_forward(model: MtlDanModel, frames: Tensor, return_internals: bool = False):
    frames = T.as_tensor(frames)
    fmap = model.backbone(frames)
    attn_expr = model.attn_expr(fmap)
    attn_au = model.attn_au(fmap)
    pooled = T.reduce("mean", fmap, axes=(2, 3))
    shared = T.concat([attn_expr, attn_au], axis=1)
    expr_logits = model.head_expr(T.concat([shared, attn_expr], axis=1))
    au_logits = model.head_au(T.concat([shared, attn_au], axis=1))
    va_logits = model.head_va(T.concat([shared, pooled], axis=1))
    if model.descriptor_mode == "activated":
        v_expr = T.softmax(expr_logits, axis=1)
        v_au = T.sigmoid(au_logits)
        v_va = T.tanh(va_logits)
    else:
        v_expr, v_au, v_va = expr_logits, au_logits, va_logits
    descriptor = EmotionDescriptor(
        v_expr=v_expr,
        v_au=v_au,
        v_va=v_va,
        concat=T.concat([v_expr, v_au, v_va], axis=1),
        mode=model.descriptor_mode,
    )
    if return_internals:
        internals = ForwardInternals(
            fmap=fmap,
            attn_expr=attn_expr,
            attn_au=attn_au,
            pooled=pooled,
            shared=shared,
            expr_logits=expr_logits,
            au_logits=au_logits,
            va_logits=va_logits,
        )
        return descriptor, internals
    return descriptor


def _log_softmax(logits: Tensor) -> Tensor:
    shifted = T.sub(logits, T.reduce("max", logits, axes=1, keepdims=True))
    log_norm = T.log(T.reduce("sum", T.exp(shifted), axes=1, keepdims=True))
    return T.sub(shifted, log_norm)


def cross_entropy(logits: Tensor, class_indices: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer class labels."""
    n, k = logits.shape
    onehot = np.zeros((n, k), dtype=logits.data.dtype)
    onehot[np.arange(n), class_indices] = 1.0
    picked = T.reduce("sum", T.mul(_log_softmax(logits), Tensor._wrap(onehot)), axes=1)
    return T.neg(T.reduce("mean", picked))


def binary_cross_entropy(probs: Tensor, targets: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean BCE over probabilities in (0,1); eps keeps the logs finite."""
    t = Tensor._wrap(np.asarray(targets, dtype=probs.data.dtype))
    one = Tensor._wrap(np.ones_like(probs.data))
    pos = T.mul(t, T.log(probs + eps))
    negt = T.mul(T.sub(one, t), T.log(T.sub(one, probs) + eps))
    return T.neg(T.reduce("mean", T.add(pos, negt)))


def mtl_pretrain_step(
    model: MtlDanModel,
    frames,
    expr_labels,
    au_labels,
    va_labels,
    lr: float = 1e-3,
    optimizer: Adam | None = None,
) -> float:
    """One joint multi-task optimization step on synthetic auxiliary labels.

    Loss: cross-entropy on the 8-way expression class, BCE on the 12 unit
    bits, and a concordance loss on the valence/arousal pair. Repeated calls
    with the same ``lr`` reuse one Adam instance held on the model.
    """
    if model.frozen:
        raise FrozenModel("cannot pretrain a frozen extractor")
    expr_labels = np.asarray(expr_labels)
    au_labels = np.asarray(au_labels)
    va_labels = np.asarray(va_labels)
    if expr_labels.min() < 0 or expr_labels.max() >= EXPR_DIM:
        raise LabelOutOfRange(f"expression class must be in [0, {EXPR_DIM - 1}]")
    if not np.isin(au_labels, (0, 1)).all():
        raise LabelOutOfRange("action-unit labels must be 0/1 bits")
    if np.abs(va_labels).max() > 1.0:
        raise LabelOutOfRange("valence/arousal labels must lie in [-1, 1]")
    if optimizer is None:
        if model._pretrain_optimizer is None or model._pretrain_lr != lr:
            model._pretrain_optimizer = Adam(model.parameters(), lr=lr)
            model._pretrain_lr = lr
        optimizer = model._pretrain_optimizer
    model.set_training(True)
    descriptor, internals = mtl_dan_forward(model, T.as_tensor(frames), return_internals=True)
    loss = T.add(
        T.add(
            cross_entropy(internals.expr_logits, expr_labels),
            binary_cross_entropy(T.sigmoid(internals.au_logits), au_labels),
        ),
        metrics.correlation_loss("ccc", T.tanh(internals.va_logits), va_labels),
    )
    value = loss.item()
    T.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    return value


def extract_descriptors(
    model: MtlDanModel,
    frame_sequences,
    workers: int = 1,
    cache: dict | None = None,
    ids=None,
) -> list[np.ndarray]:
    """Frozen-path feature extraction: per-frame descriptors for each sequence.

    Runs the extractor in eval mode with recording disabled, optionally
    fanning samples out across threads (the model is only read). Results are
    merged in input order, so worker count never changes the output. With a
    ``cache`` dict and per-sequence ``ids``, repeated extraction of the same
    video is skipped.
    """
    model.set_training(False)
    if ids is None:
        ids = [None] * len(frame_sequences)

    def one(index: int) -> np.ndarray:
        key = ids[index]
        if cache is not None and key is not None and key in cache:
            return cache[key]
        out = mtl_dan_forward(model, T.as_tensor(frame_sequences[index])).concat.data
        if cache is not None and key is not None:
            cache[key] = out
        return out

    with T.no_grad():
        if workers <= 1 or len(frame_sequences) <= 1:
            return [one(i) for i in range(len(frame_sequences))]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(frame_sequences))))
