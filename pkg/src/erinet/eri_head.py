"""Temporal regression head: per-frame 22-dim descriptors -> LSTM over the
sampled frame sequence -> fully connected -> sigmoid -> 7 bounded reaction
intensities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from . import tensor as T
from .errors import BatchTooSmall, FrozenViolation, ShapeMismatch
from .mtl_dan import DESCRIPTOR_DIM, MtlDanModel, extract_descriptors
from .nn import Linear, LstmLayer, lstm_step_sequence
from .optim import Adam
from .tensor import Tensor


@dataclass(frozen=True)
class ReactionVector:
    """Seven intensities in [0,1], ordered as :data:`metrics.CATEGORIES`."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != metrics.N_CATEGORIES:
            raise ShapeMismatch(f"reaction vector needs {metrics.N_CATEGORIES} entries, got {values.size}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("reaction intensities must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])


class EriHead:
    def __init__(self, rng: np.random.Generator, hidden_dim: int = 64, num_layers: int = 1):
        self.hidden_dim = hidden_dim
        self.lstm_layers = [
            LstmLayer(DESCRIPTOR_DIM if i == 0 else hidden_dim, hidden_dim, rng) for i in range(num_layers)
        ]
        self.fc = Linear(hidden_dim, metrics.N_CATEGORIES, rng)

    def __call__(self, descriptors: Tensor, lengths) -> Tensor:
        return eri_forward(self, descriptors, lengths)

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.lstm_layers):
            yield from layer.named_parameters(f"{prefix}lstm{i}.")
        yield from self.fc.named_parameters(prefix + "fc.")

    def named_buffers(self, prefix: str = ""):
        return iter(())

    def parameters(self):
        return [p for _, p in self.named_parameters()]


def eri_forward(head: EriHead, descriptors: Tensor, lengths) -> Tensor:
    """Predict [B, 7] intensities; sigmoid keeps every output inside (0, 1)."""
    descriptors = T.as_tensor(descriptors)
    if descriptors.ndim != 3 or descriptors.shape[2] != DESCRIPTOR_DIM:
        raise ShapeMismatch(f"descriptors must be [B, T, {DESCRIPTOR_DIM}], got {descriptors.shape}")
    lengths = list(lengths)
    seq = descriptors
    steps = lstm_step_sequence(head.lstm_layers[0], seq, lengths)
    for layer in head.lstm_layers[1:]:
        batch = seq.shape[0]
        stacked = T.concat([T.reshape(h, (batch, 1, head.hidden_dim)) for h in steps], axis=1)
        steps = lstm_step_sequence(layer, stacked, lengths)
    return T.sigmoid(head.fc(steps[-1]))


def _parameter_bytes(model: MtlDanModel) -> bytes:
    return b"".join(p.data.tobytes() for p in model.parameters())


def pad_descriptor_sequences(sequences: list[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    """Zero-pad per-sample [T_b, 22] descriptor arrays to one [B, T_max, 22]."""
    lengths = [int(s.shape[0]) for s in sequences]
    t_max = max(lengths)
    out = np.zeros((len(sequences), t_max, DESCRIPTOR_DIM), dtype=sequences[0].dtype)
    for b, seq in enumerate(sequences):
        out[b, : lengths[b]] = seq
    return out, lengths


def eri_train_step(
    extractor: MtlDanModel,
    head: EriHead,
    batch,
    loss_kind: str,
    optimizer: Adam,
    descriptor_cache: dict | None = None,
    workers: int = 1,
    verify_frozen: bool = False,
) -> float:
    """One optimization step of the head on top of the frozen extractor.

    Frames pass through the extractor per sample (outside the gradient
    graph), the head predicts from the padded descriptor sequences, and the
    correlation loss of the chosen kind updates head parameters only.
    """
    if not extractor.frozen:
        raise FrozenViolation("the extractor must be frozen during reaction-intensity training")
    n = batch.frames.shape[0]
    if n < 2:
        raise BatchTooSmall(f"correlation training needs a batch of >= 2, got {n}")
    before = _parameter_bytes(extractor) if verify_frozen else None
    frame_seqs = [batch.frames[b, : batch.lengths[b]] for b in range(n)]
    descriptor_seqs = extract_descriptors(
        extractor, frame_seqs, workers=workers, cache=descriptor_cache, ids=batch.video_ids
    )
    padded, lengths = pad_descriptor_sequences(descriptor_seqs)
    pred = eri_forward(head, T.as_tensor(padded), lengths)
    loss = metrics.correlation_loss(loss_kind, pred, batch.labels)
    value = loss.item()
    T.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    if verify_frozen and _parameter_bytes(extractor) != before:
        raise FrozenViolation("extractor parameter bytes changed during a head training step")
    return value


def predict_reactions(
    extractor: MtlDanModel,
    head: EriHead,
    frame_sequences: list[np.ndarray],
    workers: int = 1,
    descriptor_cache: dict | None = None,
    ids=None,
) -> np.ndarray:
    """Forward the full pipeline without recording; returns [N, 7]."""
    descriptor_seqs = extract_descriptors(
        extractor, frame_sequences, workers=workers, cache=descriptor_cache, ids=ids
    )
    padded, lengths = pad_descriptor_sequences(descriptor_seqs)
    with T.no_grad():
        return eri_forward(head, T.as_tensor(padded), lengths).data.copy()
