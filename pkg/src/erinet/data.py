"""Dataset plumbing: frame-index sampling, label normalization, manifest and
frame-file formats, synthetic data with a planted learnable signal, and
variable-length batch assembly.

External formats
----------------
Manifest: UTF-8 CSV with header
    video_id,frame_file,n_frames,adoration,amusement,anxiety,disgust,empathic_pain,fear,surprise,split

Frame file (.ftz): magic ``FTZ1``, four unsigned 32-bit little-endian extents
T, C, H, W, then T*C*H*W little-endian 32-bit floats, row-major. The stored
frames are post-sampling (already every 30th), so T == ceil(n_frames / 30).

The synthetic generator plants a recoverable signal: each video carries a
7-dim latent drawn once, injected into every frame through seven mutually
orthogonal spatial patterns; per-frame noise is projected off those patterns.
At signal_strength 1 the labels are an exact affine image of the latent, so
the generator's own inverse check can reconstruct them from the frames.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eri_head import ReactionVector
from .errors import (
    BatchTooSmall,
    ConfigInvalid,
    EmptyVideo,
    LabelOutOfRange,
    ManifestInvalid,
)
from .metrics import CATEGORIES, N_CATEGORIES

SAMPLING_STRIDE = 30

LABEL_NORM_MODES = ("minus1-over-99", "over-100")

MANIFEST_HEADER = ("video_id", "frame_file", "n_frames") + CATEGORIES + ("split",)

SPLITS = ("train", "val", "test")

_FTZ_MAGIC = b"FTZ1"


def sample_frame_indices(n_total_frames: int) -> list[int]:
    """First frame of every 30-frame window: {0, 30, 60, ...} below n."""
    if n_total_frames < 1:
        raise EmptyVideo(f"video has {n_total_frames} frames")
    return list(range(0, int(n_total_frames), SAMPLING_STRIDE))


def sampled_frame_count(n_total_frames: int) -> int:
    if n_total_frames < 1:
        raise EmptyVideo(f"video has {n_total_frames} frames")
    return math.ceil(n_total_frames / SAMPLING_STRIDE)


def normalize_label(raw, mode: str = "minus1-over-99") -> ReactionVector:
    """Map raw [1, 100] intensities into [0, 1]."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.size != N_CATEGORIES:
        raise LabelOutOfRange(f"label needs {N_CATEGORIES} entries, got {raw.size}")
    if raw.min() < 1.0 or raw.max() > 100.0:
        raise LabelOutOfRange(f"raw intensities must lie in [1, 100], got range [{raw.min()}, {raw.max()}]")
    if mode == "minus1-over-99":
        return ReactionVector((raw - 1.0) / 99.0)
    if mode == "over-100":
        return ReactionVector(raw / 100.0)
    raise ConfigInvalid(f"label_norm must be one of {LABEL_NORM_MODES}, got {mode!r}")


def denormalize_label(normalized, mode: str = "minus1-over-99") -> np.ndarray:
    values = normalized.values if isinstance(normalized, ReactionVector) else np.asarray(normalized, dtype=np.float64)
    if mode == "minus1-over-99":
        return values * 99.0 + 1.0
    if mode == "over-100":
        return values * 100.0
    raise ConfigInvalid(f"label_norm must be one of {LABEL_NORM_MODES}, got {mode!r}")


# ---------------------------------------------------------------------------
# Frame files


def write_ftz(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ConfigInvalid(f"frame tensor must be [T, C, H, W], got shape {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(_FTZ_MAGIC)
        fh.write(struct.pack("<4I", *frames.shape))
        fh.write(frames.tobytes())


def read_ftz(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FTZ_MAGIC:
            raise ManifestInvalid(f"{path}: bad frame-file magic {magic!r}")
        t, c, h, w = struct.unpack("<4I", fh.read(16))
        payload = fh.read(t * c * h * w * 4)
    if len(payload) != t * c * h * w * 4:
        raise ManifestInvalid(f"{path}: truncated frame file")
    return np.frombuffer(payload, dtype="<f4").reshape(t, c, h, w).copy()


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestRow:
    video_id: str
    frame_file: str
    n_frames: int
    raw_label: np.ndarray  # [7] in [1, 100]
    split: str


@dataclass
class Manifest:
    rows: list[ManifestRow]

    def split(self, name: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == name]

    def validate(self) -> "Manifest":
        seen = set()
        for row in self.rows:
            if row.video_id in seen:
                raise ManifestInvalid(f"duplicate video_id {row.video_id!r}")
            seen.add(row.video_id)
            if row.n_frames < 1:
                raise EmptyVideo(f"{row.video_id}: n_frames {row.n_frames}")
            if row.split not in SPLITS:
                raise ManifestInvalid(f"{row.video_id}: unknown split {row.split!r}")
            label = np.asarray(row.raw_label)
            if label.shape != (N_CATEGORIES,) or label.min() < 1.0 or label.max() > 100.0:
                raise LabelOutOfRange(f"{row.video_id}: labels must be 7 values in [1, 100]")
        return self


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in manifest.rows:
            writer.writerow(
                [row.video_id, row.frame_file, row.n_frames]
                + [repr(float(v)) for v in row.raw_label]
                + [row.split]
            )


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != MANIFEST_HEADER:
            raise ManifestInvalid(f"{path}: unexpected header {header}")
        rows = []
        for record in reader:
            if not record:
                continue
            if len(record) != len(MANIFEST_HEADER):
                raise ManifestInvalid(f"{path}: row has {len(record)} fields")
            rows.append(
                ManifestRow(
                    video_id=record[0],
                    frame_file=record[1],
                    n_frames=int(record[2]),
                    raw_label=np.array([float(v) for v in record[3:10]]),
                    split=record[10],
                )
            )
    return Manifest(rows).validate()


@dataclass
class SequenceSample:
    """One video's sampled frames plus its raw and normalized labels."""

    video_id: str
    frames: np.ndarray  # [T, C, H, W]
    raw_label: np.ndarray  # [7] in [1, 100]
    norm_label: ReactionVector

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])


def load_samples(
    manifest: Manifest,
    data_root,
    split: str,
    label_norm: str = "minus1-over-99",
    workers: int = 1,
) -> list[SequenceSample]:
    """Read a split's frame files; optionally across threads, merged in manifest order."""
    root = Path(data_root)
    rows = manifest.split(split)

    def one(row: ManifestRow) -> SequenceSample:
        frames = read_ftz(root / row.frame_file)
        expected = sampled_frame_count(row.n_frames)
        if frames.shape[0] != expected:
            raise ManifestInvalid(
                f"{row.video_id}: frame file holds {frames.shape[0]} frames, expected ceil({row.n_frames}/30)={expected}"
            )
        return SequenceSample(
            video_id=row.video_id,
            frames=frames,
            raw_label=row.raw_label.copy(),
            norm_label=normalize_label(row.raw_label, label_norm),
        )

    if workers <= 1 or len(rows) <= 1:
        return [one(r) for r in rows]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, rows))


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass
class Batch:
    frames: np.ndarray  # [B, T_max, C, H, W], zero-padded
    lengths: list[int]
    labels: np.ndarray  # [B, 7], normalized
    video_ids: list[str]  # sample order record


def make_batches(
    samples: list[SequenceSample],
    batch_size: int,
    shuffle_seed: int | None = None,
    for_correlation: bool = False,
) -> list[Batch]:
    """Partition samples into zero-padded batches; order is seed-deterministic.

    With ``for_correlation`` any batch of fewer than 2 samples is rejected,
    since the correlation losses are undefined there.
    """
    if batch_size < 1:
        raise ConfigInvalid(f"batch_size must be >= 1, got {batch_size}")
    order = list(range(len(samples)))
    if shuffle_seed is not None:
        order = list(np.random.default_rng(shuffle_seed).permutation(len(samples)))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        if for_correlation and len(chunk) < 2:
            raise BatchTooSmall(
                f"correlation training produced a batch of {len(chunk)}; adjust batch_size or sample count"
            )
        lengths = [s.length for s in chunk]
        t_max = max(lengths)
        shape = chunk[0].frames.shape[1:]
        frames = np.zeros((len(chunk), t_max) + shape, dtype=np.float32)
        for b, s in enumerate(chunk):
            frames[b, : s.length] = s.frames
        batches.append(
            Batch(
                frames=frames,
                lengths=lengths,
                labels=np.stack([s.norm_label.values for s in chunk]).astype(np.float64),
                video_ids=[s.video_id for s in chunk],
            )
        )
    return batches


# ---------------------------------------------------------------------------
# Synthetic dataset with a planted signal


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int
    frame_dims: tuple[int, int, int] = (3, 32, 32)
    seed: int = 0
    signal_strength: float = 1.0
    val_fraction: float = 0.2
    noise_scale: float = 0.25
    signal_amplitude: float = 0.3
    baseline: float = 0.5
    latent_dim: int = 2
    min_frames: int = 30
    max_frames: int = 600

    def __post_init__(self):
        c, h, w = self.frame_dims
        if self.n_videos < 2:
            raise ConfigInvalid(f"n_videos must be >= 2, got {self.n_videos}")
        if c < 1 or h < 8 or w < 8 or h % 4 or w % 4:
            raise ConfigInvalid(f"frame_dims must be (C>=1, H, W) with H, W >= 8 and divisible by 4, got {self.frame_dims}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigInvalid("signal_strength must lie in [0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigInvalid("val_fraction must lie in [0, 1)")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigInvalid("need 1 <= min_frames <= max_frames")
        if self.signal_amplitude <= 0:
            raise ConfigInvalid("signal_amplitude must be positive")
        if not 1 <= self.latent_dim <= N_CATEGORIES:
            raise ConfigInvalid(f"latent_dim must lie in [1, {N_CATEGORIES}]")
        object.__setattr__(self, "frame_dims", tuple(int(e) for e in self.frame_dims))


def signal_patterns(frame_dims: tuple[int, int, int]) -> np.ndarray:
    """Seven unit-RMS spatial patterns, mutually orthogonal by construction.

    Pattern k is the indicator of one tile in a 2x4 spatial grid, placed on
    channel k mod C. Disjoint supports make the flat inner products exactly
    zero, and the nonzero tile means keep the planted latent visible to
    pooled (first-order) features, not just to rectified ones.
    """
    c, h, w = frame_dims
    th, tw = h // 2, w // 4
    patterns = np.zeros((N_CATEGORIES, c, h, w))
    for k in range(N_CATEGORIES):
        row, col = divmod(k, 4)
        patterns[k, k % c, row * th : (row + 1) * th, col * tw : (col + 1) * tw] = 1.0
        patterns[k] /= np.sqrt((patterns[k] ** 2).mean())
    return patterns


def _smooth_noise(rng: np.random.Generator, frame_dims: tuple[int, int, int]) -> np.ndarray:
    c, h, w = frame_dims
    coarse = rng.normal(size=(c, h // 4, w // 4))
    return np.kron(coarse, np.ones((1, 4, 4)))


def _latent_to_label01(z: np.ndarray, strength: float, noise: np.ndarray) -> np.ndarray:
    # Correlation metrics are scale-invariant, so a narrow span loses nothing;
    # it keeps targets in the sigmoid head's linear zone, where the planted
    # linear signal is learnable in few steps with small weights.
    return np.clip(0.5 + 0.1 * strength * z + (1.0 - strength) * noise, 0.0, 1.0)


def generate_synthetic(config: SynthConfig, out_dir) -> Manifest:
    """Write frames/, manifest.csv and dataset_meta.json under out_dir.

    Deterministic given the seed: rerunning produces byte-identical files.
    """
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    patterns = signal_patterns(config.frame_dims)
    pattern_norms = (patterns**2).sum(axis=(1, 2, 3))
    # Pattern amplitudes live on a low-dimensional manifold. Videos end up
    # densely packed in latent space, so an arbitrary relabeling (the
    # shuffled-label control) is a high-frequency function that a smooth
    # model cannot fit quickly, while the true labels stay an easy smooth
    # regression. Rows are L1-normalized so every z stays in [-1, 1].
    mixing = rng.normal(size=(N_CATEGORIES, config.latent_dim))
    mixing /= np.abs(mixing).sum(axis=1, keepdims=True)
    n_train = config.n_videos - round(config.n_videos * config.val_fraction)
    rows = []
    for v in range(config.n_videos):
        video_id = f"synth{v:05d}"
        n_frames = int(rng.integers(config.min_frames, config.max_frames + 1))
        t = sampled_frame_count(n_frames)
        z = mixing @ rng.uniform(-1.0, 1.0, size=config.latent_dim)
        label_noise = rng.normal(0.0, 0.3, size=N_CATEGORIES)
        signal = np.tensordot(config.signal_amplitude * z, patterns, axes=1)
        frames = np.empty((t,) + config.frame_dims)
        for ti in range(t):
            noise = _smooth_noise(rng, config.frame_dims) * config.noise_scale
            # Project the noise off the signal patterns so the planted latent
            # stays exactly recoverable from the frame statistics. The
            # constant baseline keeps the extractor away from its relu kinks.
            coeffs = (noise * patterns).sum(axis=(1, 2, 3)) / pattern_norms
            noise -= np.tensordot(coeffs, patterns, axes=1)
            frames[ti] = config.baseline + signal + noise
        label01 = _latent_to_label01(z, config.signal_strength, label_noise)
        raw = 1.0 + 99.0 * label01
        frame_file = f"frames/{video_id}.ftz"
        write_ftz(out / frame_file, frames)
        rows.append(
            ManifestRow(
                video_id=video_id,
                frame_file=frame_file,
                n_frames=n_frames,
                raw_label=raw,
                split="train" if v < n_train else "val",
            )
        )
    manifest = Manifest(rows).validate()
    save_manifest(manifest, out / "manifest.csv")
    meta = {
        "baseline": config.baseline,
        "frame_dims": list(config.frame_dims),
        "max_frames": config.max_frames,
        "min_frames": config.min_frames,
        "n_videos": config.n_videos,
        "noise_scale": config.noise_scale,
        "seed": config.seed,
        "signal_amplitude": config.signal_amplitude,
        "signal_strength": config.signal_strength,
        "val_fraction": config.val_fraction,
    }
    (out / "dataset_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def verify_planted_signal(out_dir) -> float:
    """Generator's inverse check: reconstruct labels from frame statistics.

    Only exact at signal_strength 1 (no label noise); returns the max
    absolute error in raw label units across all videos.
    """
    out = Path(out_dir)
    meta = json.loads((out / "dataset_meta.json").read_text(encoding="utf-8"))
    if meta["signal_strength"] != 1.0:
        raise ConfigInvalid("inverse check is exact only at signal_strength 1")
    manifest = load_manifest(out / "manifest.csv")
    patterns = signal_patterns(tuple(meta["frame_dims"]))
    pattern_norms = (patterns**2).sum(axis=(1, 2, 3))
    worst = 0.0
    amplitude = meta.get("signal_amplitude", 1.0)
    baseline = meta.get("baseline", 0.0)
    for row in manifest.rows:
        frames = read_ftz(out / row.frame_file).astype(np.float64)
        mean_frame = frames.mean(axis=0) - baseline
        z_hat = (mean_frame * patterns).sum(axis=(1, 2, 3)) / pattern_norms / amplitude
        raw_hat = 1.0 + 99.0 * _latent_to_label01(z_hat, 1.0, np.zeros(N_CATEGORIES))
        worst = max(worst, float(np.abs(raw_hat - row.raw_label).max()))
    return worst


# ---------------------------------------------------------------------------
# Toy multi-task labels for extractor pretraining


def generate_toy_multitask(
    n_samples: int,
    frame_dims: tuple[int, int, int] = (3, 16, 16),
    seed: int = 0,
    n_basis: int = 8,
):
    """Frames plus (expr class, AU bits, VA pair) labels, all linear probes of
    the per-sample basis amplitudes, so the tasks are separable by design."""
    rng = np.random.default_rng(seed)
    c, h, w = frame_dims
    ii = np.arange(h).reshape(-1, 1)
    jj = np.arange(w).reshape(1, -1)
    basis = np.zeros((n_basis, c, h, w))
    for k in range(n_basis):
        fi, fj = 1 + k % 3, 1 + (k // 3) % 3
        basis[k, k % c] = np.cos(2.0 * np.pi * (fi * ii / h + fj * jj / w) + 0.37 * k)
        basis[k] /= np.sqrt((basis[k] ** 2).mean())
    w_expr = rng.normal(size=(8, n_basis))
    w_au = rng.normal(size=(12, n_basis))
    w_va = rng.normal(size=(2, n_basis))
    amplitudes = rng.uniform(-1.0, 1.0, size=(n_samples, n_basis))
    frames = np.tensordot(amplitudes, basis, axes=1) + 0.05 * rng.normal(size=(n_samples,) + frame_dims)
    expr = (w_expr @ amplitudes.T).argmax(axis=0)
    au = ((w_au @ amplitudes.T).T > 0).astype(np.float64)
    va = np.tanh((w_va @ amplitudes.T).T)
    return frames.astype(np.float32), expr.astype(np.int64), au, va
