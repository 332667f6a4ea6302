import hashlib
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erinet import data
from erinet.data import (
    Batch,
    Manifest,
    ManifestRow,
    SynthConfig,
    generate_synthetic,
    generate_toy_multitask,
    load_manifest,
    load_samples,
    make_batches,
    normalize_label,
    denormalize_label,
    read_ftz,
    sample_frame_indices,
    sampled_frame_count,
    save_manifest,
    signal_patterns,
    verify_planted_signal,
    write_ftz,
)
from erinet.errors import BatchTooSmall, ConfigInvalid, EmptyVideo, LabelOutOfRange, ManifestInvalid


def test_sample_frame_indices_examples():
    assert sample_frame_indices(300) == list(range(0, 300, 30))
    assert len(sample_frame_indices(300)) == 10
    assert sample_frame_indices(29) == [0]
    idx = sample_frame_indices(349)
    assert len(idx) == 12 and idx[-1] == 330


def test_sample_frame_indices_exhaustive_count_law():
    for n in range(1, 10001):
        assert len(sample_frame_indices(n)) == math.ceil(n / 30)


def test_empty_video_rejected():
    with pytest.raises(EmptyVideo):
        sample_frame_indices(0)
    with pytest.raises(EmptyVideo):
        sampled_frame_count(-3)


def test_normalize_label_endpoints_and_midpoint():
    ones = np.full(7, 1.0)
    hundred = np.full(7, 100.0)
    np.testing.assert_allclose(normalize_label(ones).values, 0.0)
    np.testing.assert_allclose(normalize_label(hundred).values, 1.0)
    np.testing.assert_allclose(normalize_label(np.full(7, 50.5)).values, 0.5)


def test_normalize_label_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        raw = rng.uniform(1, 100, size=7)
        for mode in ("minus1-over-99", "over-100"):
            back = denormalize_label(normalize_label(raw, mode), mode)
            np.testing.assert_allclose(back, raw, atol=1e-6)


def test_normalize_label_monotone():
    raw = np.array([1, 10, 20, 40, 60, 80, 100.0])
    values = normalize_label(raw).values
    assert (np.diff(values) > 0).all()


def test_normalize_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        normalize_label(np.full(7, 0.5))
    with pytest.raises(LabelOutOfRange):
        normalize_label(np.full(7, 100.5))


def test_ftz_round_trip(tmp_path):
    frames = np.random.default_rng(1).normal(size=(3, 2, 8, 8)).astype(np.float32)
    path = tmp_path / "clip.ftz"
    write_ftz(path, frames)
    np.testing.assert_array_equal(read_ftz(path), frames)
    raw = path.read_bytes()
    assert raw[:4] == b"FTZ1"
    assert np.frombuffer(raw[4:20], dtype="<u4").tolist() == [3, 2, 8, 8]


def test_ftz_bad_magic(tmp_path):
    path = tmp_path / "clip.ftz"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ManifestInvalid):
        read_ftz(path)


def test_manifest_round_trip(tmp_path):
    rows = [
        ManifestRow("vid0", "frames/vid0.ftz", 42, np.linspace(1, 100, 7), "train"),
        ManifestRow("vid1", "frames/vid1.ftz", 300, np.full(7, 55.25), "val"),
    ]
    path = tmp_path / "manifest.csv"
    save_manifest(Manifest(rows), path)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "video_id,frame_file,n_frames,adoration,amusement,anxiety,disgust,empathic_pain,fear,surprise,split"
    loaded = load_manifest(path)
    assert [r.video_id for r in loaded.rows] == ["vid0", "vid1"]
    np.testing.assert_allclose(loaded.rows[1].raw_label, 55.25)
    assert loaded.split("val")[0].video_id == "vid1"


def test_manifest_duplicate_ids_rejected():
    rows = [
        ManifestRow("vid0", "a.ftz", 30, np.full(7, 50.0), "train"),
        ManifestRow("vid0", "b.ftz", 30, np.full(7, 50.0), "train"),
    ]
    with pytest.raises(ManifestInvalid):
        Manifest(rows).validate()


def test_signal_patterns_orthogonal_unit_rms():
    patterns = signal_patterns((3, 32, 32))
    gram = np.einsum("kchw,lchw->kl", patterns, patterns)
    off_diagonal = gram - np.diag(np.diag(gram))
    assert np.abs(off_diagonal).max() == 0.0
    rms = np.sqrt((patterns**2).mean(axis=(1, 2, 3)))
    np.testing.assert_allclose(rms, 1.0, rtol=1e-12)


def test_generate_synthetic_deterministic(tmp_path):
    cfg = SynthConfig(n_videos=6, seed=9)
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        generate_synthetic(cfg, out)
        digest = hashlib.sha256()
        for f in sorted(out.rglob("*")):
            if f.is_file():
                digest.update(f.name.encode())
                digest.update(f.read_bytes())
        hashes.append(digest.hexdigest())
    assert hashes[0] == hashes[1]


def test_generate_synthetic_inverse_check(tmp_path):
    generate_synthetic(SynthConfig(n_videos=6, seed=11), tmp_path)
    assert verify_planted_signal(tmp_path) < 1e-3


def test_generate_synthetic_inverse_check_needs_full_strength(tmp_path):
    generate_synthetic(SynthConfig(n_videos=4, seed=12, signal_strength=0.5), tmp_path)
    with pytest.raises(ConfigInvalid):
        verify_planted_signal(tmp_path)


def test_generate_synthetic_frame_counts_and_labels(tmp_path):
    manifest = generate_synthetic(SynthConfig(n_videos=12, seed=13), tmp_path)
    for row in manifest.rows:
        assert 30 <= row.n_frames <= 600
        assert row.raw_label.min() >= 1.0 and row.raw_label.max() <= 100.0
        frames = read_ftz(tmp_path / row.frame_file)
        assert frames.shape[0] == sampled_frame_count(row.n_frames)


@pytest.mark.slow
def test_generate_synthetic_mean_sampled_count(tmp_path):
    manifest = generate_synthetic(SynthConfig(n_videos=200, seed=14), tmp_path)
    mean_t = np.mean([sampled_frame_count(r.n_frames) for r in manifest.rows])
    assert 8.0 <= mean_t <= 15.0


def test_generate_synthetic_rejects_single_video(tmp_path):
    with pytest.raises(ConfigInvalid):
        SynthConfig(n_videos=1)


def test_load_samples_worker_invariance(tmp_path):
    manifest = generate_synthetic(SynthConfig(n_videos=6, seed=15), tmp_path)
    serial = load_samples(manifest, tmp_path, "train", workers=1)
    threaded = load_samples(manifest, tmp_path, "train", workers=3)
    assert [s.video_id for s in serial] == [s.video_id for s in threaded]
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.frames, b.frames)


def test_make_batches_sizes_and_partition():
    samples = _fake_samples(10)
    batches = make_batches(samples, 4)
    assert [b.frames.shape[0] for b in batches] == [4, 4, 2]
    ids = [vid for b in batches for vid in b.video_ids]
    assert sorted(ids) == sorted(s.video_id for s in samples)
    assert len(set(ids)) == len(ids)


def test_make_batches_preserves_order_without_seed():
    samples = _fake_samples(5)
    batches = make_batches(samples, 2)
    assert [vid for b in batches for vid in b.video_ids] == [s.video_id for s in samples]


def test_make_batches_deterministic_given_seed():
    samples = _fake_samples(9)
    a = make_batches(samples, 3, shuffle_seed=5)
    b = make_batches(samples, 3, shuffle_seed=5)
    assert [x.video_ids for x in a] == [x.video_ids for x in b]


def test_make_batches_zero_padding_and_lengths():
    samples = _fake_samples(3, lengths=[2, 5, 1])
    (batch,) = make_batches(samples, 3)
    assert batch.frames.shape[1] == 5
    assert batch.lengths == [2, 5, 1]
    np.testing.assert_array_equal(batch.frames[0, 2:], 0.0)
    np.testing.assert_array_equal(batch.frames[2, 1:], 0.0)


def test_make_batches_correlation_guard():
    samples = _fake_samples(5)
    with pytest.raises(BatchTooSmall):
        make_batches(samples, 4, for_correlation=True)
    make_batches(samples, 4)  # fine when not flagged


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 20), batch_size=st.integers(1, 8), seed=st.integers(0, 1000))
def test_make_batches_partition_property(n, batch_size, seed):
    samples = _fake_samples(n)
    batches = make_batches(samples, batch_size, shuffle_seed=seed)
    ids = [vid for b in batches for vid in b.video_ids]
    assert sorted(ids) == sorted(s.video_id for s in samples)


def test_toy_multitask_labels_well_formed():
    frames, expr, au, va = generate_toy_multitask(16, frame_dims=(3, 16, 16), seed=3)
    assert frames.shape == (16, 3, 16, 16)
    assert expr.min() >= 0 and expr.max() < 8
    assert set(np.unique(au)).issubset({0.0, 1.0})
    assert np.abs(va).max() < 1.0


def _fake_samples(n, lengths=None):
    rng = np.random.default_rng(7)
    out = []
    for i in range(n):
        t = lengths[i] if lengths else int(rng.integers(1, 6))
        out.append(
            data.SequenceSample(
                video_id=f"v{i:03d}",
                frames=rng.normal(size=(t, 1, 4, 4)).astype(np.float32),
                raw_label=rng.uniform(1, 100, size=7),
                norm_label=normalize_label(rng.uniform(1, 100, size=7)),
            )
        )
    return out
