"""Training and evaluation drivers used by the command-line surface.

Everything here is deterministic for a fixed config: batch order is seeded
per epoch, the numeric path is single-threaded unless extractor workers are
requested (worker count never changes results, only wall time), and reports
embed the config plus a content hash of the manifest they ran on.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, build_models
from .data import Batch, SequenceSample, load_manifest, load_samples, make_batches
from .eri_head import EriHead, eri_forward, eri_train_step, predict_reactions
from .errors import SplitEmpty
from .metrics import CATEGORIES, CorrelationReport, evaluate_mean_pcc
from .mtl_dan import DESCRIPTOR_DIM, MtlDanModel, mtl_dan_forward
from .optim import Adam
from .tensor import Tensor


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_mean_pcc: float
    val_mean_pcc: float | None


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int
    best_metric: float
    checkpoint_path: str
    report_path: str
    steps: int


def manifest_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _joint_train_step(
    extractor: MtlDanModel,
    head: EriHead,
    batch: Batch,
    loss_kind: str,
    optimizer: Adam,
) -> float:
    """Unfrozen path: gradients flow through the extractor as well."""
    extractor.set_training(True)
    n = batch.frames.shape[0]
    t_max = max(batch.lengths)
    padded_rows = []
    for b in range(n):
        frames = T.as_tensor(batch.frames[b, : batch.lengths[b]])
        desc = mtl_dan_forward(extractor, frames).concat
        pad_rows = t_max - batch.lengths[b]
        if pad_rows:
            desc = T.concat(
                [desc, Tensor._wrap(np.zeros((pad_rows, DESCRIPTOR_DIM), dtype=desc.data.dtype))], axis=0
            )
        padded_rows.append(T.reshape(desc, (1, t_max, DESCRIPTOR_DIM)))
    descriptors = T.concat(padded_rows, axis=0)
    pred = eri_forward(head, descriptors, batch.lengths)
    loss = metrics.correlation_loss(loss_kind, pred, batch.labels)
    value = loss.item()
    T.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    return value


def _split_predictions(
    extractor: MtlDanModel,
    head: EriHead,
    samples: list[SequenceSample],
    workers: int,
    cache: dict | None,
) -> tuple[np.ndarray, np.ndarray]:
    preds = predict_reactions(
        extractor,
        head,
        [s.frames for s in samples],
        workers=workers,
        descriptor_cache=cache,
        ids=[s.video_id for s in samples],
    )
    targets = np.stack([s.norm_label.values for s in samples])
    return preds, targets


def train(config: RunConfig) -> TrainResult:
    manifest_path = Path(config.manifest)
    manifest = load_manifest(manifest_path)
    data_root = Path(config.data_root) if config.data_root else manifest_path.parent
    train_samples = load_samples(manifest, data_root, "train", config.label_norm, workers=config.extractor_workers)
    if not train_samples:
        raise SplitEmpty("train split is empty")
    val_samples = load_samples(manifest, data_root, "val", config.label_norm, workers=config.extractor_workers)

    extractor, head = build_models(config)
    trainable = head.parameters() if config.freeze_extractor else head.parameters() + extractor.parameters()
    optimizer = Adam(trainable, lr=config.lr)
    cache: dict | None = {} if (config.cache_descriptors and config.freeze_extractor) else None

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.eric"
    report_path = out_dir / "train_report.csv"

    history: list[EpochStats] = []
    best_metric = -np.inf
    best_epoch = -1
    steps = 0
    max_steps = config.max_steps or None
    for epoch in range(config.epochs):
        batches = make_batches(
            train_samples, config.batch_size, shuffle_seed=config.seed * 100003 + epoch, for_correlation=True
        )
        losses = []
        for batch in batches:
            if config.freeze_extractor:
                loss = eri_train_step(
                    extractor,
                    head,
                    batch,
                    config.loss_kind,
                    optimizer,
                    descriptor_cache=cache,
                    workers=config.extractor_workers,
                )
            else:
                loss = _joint_train_step(extractor, head, batch, config.loss_kind, optimizer)
            losses.append(loss)
            steps += 1
            if max_steps and steps >= max_steps:
                break
        train_preds, train_targets = _split_predictions(extractor, head, train_samples, config.extractor_workers, cache)
        train_pcc = evaluate_mean_pcc(train_preds, train_targets).mean_pcc
        val_pcc = None
        if len(val_samples) >= 2:
            val_preds, val_targets = _split_predictions(extractor, head, val_samples, config.extractor_workers, cache)
            val_pcc = evaluate_mean_pcc(val_preds, val_targets).mean_pcc
        history.append(EpochStats(epoch, float(np.mean(losses)), train_pcc, val_pcc))
        selection = val_pcc if val_pcc is not None else train_pcc
        if selection > best_metric:
            best_metric = selection
            best_epoch = epoch
            save_checkpoint(extractor, head, config, checkpoint_path)
        if max_steps and steps >= max_steps:
            break
    _write_train_report(report_path, config, manifest_sha256(manifest_path), history)
    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_metric=float(best_metric),
        checkpoint_path=str(checkpoint_path),
        report_path=str(report_path),
        steps=steps,
    )


def _write_train_report(path, config: RunConfig, manifest_hash: str, history: list[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config: {config.to_json()}\n")
        fh.write(f"# manifest_sha256: {manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_mean_pcc", "val_mean_pcc"])
        for row in history:
            writer.writerow(
                [
                    row.epoch,
                    repr(row.train_loss),
                    repr(row.train_mean_pcc),
                    "" if row.val_mean_pcc is None else repr(row.val_mean_pcc),
                ]
            )


def evaluate(
    checkpoint_path,
    manifest_path,
    split: str,
    workers: int = 1,
    report_path=None,
) -> CorrelationReport:
    extractor, head, config = load_checkpoint(checkpoint_path)
    manifest = load_manifest(manifest_path)
    data_root = Path(config.data_root) if config.data_root else Path(manifest_path).parent
    samples = load_samples(manifest, data_root, split, config.label_norm, workers=workers)
    if len(samples) < 2:
        raise SplitEmpty(f"split {split!r} needs at least 2 samples, found {len(samples)}")
    preds, targets = _split_predictions(extractor, head, samples, workers, cache=None)
    report = evaluate_mean_pcc(preds, targets)
    if report_path is not None:
        write_eval_report(report_path, config, manifest_sha256(manifest_path), split, report)
    return report


def write_eval_report(path, config: RunConfig, manifest_hash: str, split: str, report: CorrelationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config: {config.to_json()}\n")
        fh.write(f"# manifest_sha256: {manifest_hash}\n")
        fh.write(f"# split: {split}\n")
        writer = csv.writer(fh)
        writer.writerow(list(CATEGORIES) + ["mean_pcc", "n_samples", "degenerate_categories"])
        writer.writerow(
            [repr(float(v)) for v in report.per_category]
            + [repr(report.mean_pcc), report.n_samples, ";".join(str(i) for i in report.degenerate_categories)]
        )
