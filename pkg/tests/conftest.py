import numpy as np
import pytest

from erinet.config import RunConfig
from erinet.data import Manifest, ManifestRow, SynthConfig, generate_synthetic, save_manifest
from erinet.training import train


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or statistics checks")


# The learning-capability runs are shared between the acceptance suite and
# the data-pipeline invariants, so the expensive training happens once.

ACCEPTANCE_SYNTH = dict(n_videos=64, seed=7, signal_strength=1.0, signal_amplitude=0.2, noise_scale=0.05)
ACCEPTANCE_RUN = dict(
    batch_size=4,
    lr=2.5e-3,
    lstm_hidden=32,
    seed=8,
    max_steps=500,
    epochs=100000,
)


@pytest.fixture(scope="session")
def acceptance_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_data")
    generate_synthetic(SynthConfig(**ACCEPTANCE_SYNTH), out)
    return out


@pytest.fixture(scope="session")
def shuffled_dataset(acceptance_dataset, tmp_path_factory):
    """Same frames, train labels permuted across videos (fixed permutation)."""
    from erinet.data import load_manifest

    out = tmp_path_factory.mktemp("acceptance_shuffled")
    manifest = load_manifest(acceptance_dataset / "manifest.csv")
    train_rows = [r for r in manifest.rows if r.split == "train"]
    perm = np.random.default_rng(123).permutation(len(train_rows))
    labels = [r.raw_label for r in train_rows]
    rows, k = [], 0
    for r in manifest.rows:
        if r.split == "train":
            r = ManifestRow(r.video_id, r.frame_file, r.n_frames, labels[perm[k]], r.split)
            k += 1
        rows.append(r)
    save_manifest(Manifest(rows), out / "manifest.csv")
    return out


def _acceptance_config(manifest_dir, out_dir, data_root, **overrides):
    kwargs = dict(ACCEPTANCE_RUN)
    kwargs.update(overrides)
    return RunConfig(
        manifest=str(manifest_dir / "manifest.csv"),
        data_root=str(data_root),
        out_dir=str(out_dir),
        **kwargs,
    )


@pytest.fixture(scope="session")
def acceptance_signal_run(acceptance_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_signal_run")
    config = _acceptance_config(acceptance_dataset, out, acceptance_dataset)
    import time

    start = time.perf_counter()
    result = train(config)
    elapsed = time.perf_counter() - start
    return {"result": result, "config": config, "seconds": elapsed}


@pytest.fixture(scope="session")
def acceptance_control_run(shuffled_dataset, acceptance_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_control_run")
    config = _acceptance_config(shuffled_dataset, out, acceptance_dataset)
    import time

    start = time.perf_counter()
    result = train(config)
    elapsed = time.perf_counter() - start
    return {"result": result, "config": config, "seconds": elapsed}
