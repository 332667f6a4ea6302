"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The learning-capability criterion trains on the planted-signal set (64
videos, generator seed 7, signal strength 1) for 500 optimizer steps and is
compared against a shuffled-label control of the same configuration; both
runs are shared session fixtures.
"""

import math
import time

import numpy as np
import pytest

from erinet import tensor as T
from erinet.config import RunConfig, build_models
from erinet.data import SynthConfig, generate_synthetic, sample_frame_indices
from erinet.eri_head import eri_forward, eri_train_step
from erinet.gradcheck_suite import OPS_THRESHOLD, run_ops_checks
from erinet.metrics import ccc, correlation_loss, evaluate_mean_pcc, pcc
from erinet.mtl_dan import mtl_dan_forward
from erinet.optim import Adam
from erinet.tensor import Tensor
from erinet.training import train

from test_metrics import ccc_oracle, pcc_oracle


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: {status}{suffix}")
    assert ok, f"{name}: {detail}"


def test_gradient_suite():
    start = time.perf_counter()
    rows = run_ops_checks(seed=0)
    elapsed = time.perf_counter() - start
    worst = max(r.max_rel_error for r in rows)
    names = {r.name for r in rows}
    coverage = {"conv2d", "matmul", "relu", "sigmoid", "tanh", "softmax", "attention_head", "lstm_3steps",
                "loss_pcc", "loss_ccc"}
    ok = all(r.max_rel_error < OPS_THRESHOLD for r in rows) and coverage <= names and elapsed < 120.0
    report("gradient-suite", ok, f"{len(rows)} checks, worst {worst:.2e}, {elapsed:.1f}s")


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(0)
    worst = 0.0
    attenuation_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 50))
        x = rng.normal(size=n) * rng.uniform(0.5, 2.0)
        y = rng.normal(size=n) + 0.4 * x
        worst = max(worst, abs(pcc(x, y) - pcc_oracle(x, y)), abs(ccc(x, y) - ccc_oracle(x, y)))
        attenuation_ok &= abs(ccc(x, y)) <= abs(pcc(x, y)) + 1e-12
        preds = rng.uniform(0, 1, size=(n, 7))
        targets = rng.uniform(0, 1, size=(n, 7))
        rep = evaluate_mean_pcc(preds, targets)
        expected = np.array([pcc_oracle(preds[:, c], targets[:, c]) for c in range(7)])
        worst = max(worst, float(np.abs(rep.per_category - expected).max()))
    fixed_ok = (
        pcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
        and pcc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)
        and ccc([1, 2, 3], [2, 3, 4]) == pytest.approx(4.0 / 7.0, abs=1e-12)
    )
    report("metric-oracle-equivalence", worst < 1e-10 and fixed_ok and attenuation_ok, f"worst dev {worst:.2e}")


def test_architecture_contract():
    config = RunConfig(
        input_size=(3, 16, 16), stage_channels=(8, 8, 8, 8), attn_heads=2, attn_reduction=4, lstm_hidden=8, seed=0
    )
    extractor, head = build_models(config)
    extractor.set_training(False)
    rng = np.random.default_rng(1)
    frames = rng.normal(size=(3, 3, 16, 16)).astype(np.float32)
    descriptor = mtl_dan_forward(extractor, Tensor(frames))
    dims_ok = (
        descriptor.v_expr.shape[1] == 8
        and descriptor.v_au.shape[1] == 12
        and descriptor.v_va.shape[1] == 2
        and descriptor.concat.shape[1] == 22
    )
    outputs = eri_forward(head, Tensor(rng.uniform(0, 1, size=(5, 4, 22)).astype(np.float32)), [4, 3, 2, 1, 4])
    range_ok = outputs.shape == (5, 7) and (outputs.data > 0).all() and (outputs.data < 1).all()

    # VA-path isolation: a VA loss reaches attention through the shared
    # feature; a loss on the pooled backbone feature alone must not.
    from erinet.mtl_dan import set_frozen

    set_frozen(extractor, False)
    attn_params = [p for _, p in extractor.attn_expr.named_parameters()] + [
        p for _, p in extractor.attn_au.named_parameters()
    ]
    T.backward(T.reduce("sum", mtl_dan_forward(extractor, Tensor(frames)).v_va))
    va_reaches = any(p.grad is not None and np.abs(p.grad).max() > 0 for p in attn_params)
    for p in extractor.parameters():
        p.grad = None
    _, internals = mtl_dan_forward(extractor, Tensor(frames), return_internals=True)
    T.backward(T.reduce("sum", internals.pooled))
    pooled_isolated = all(p.grad is None for p in attn_params)
    report(
        "architecture-contract",
        dims_ok and range_ok and va_reaches and pooled_isolated,
        f"descriptor 22 = 8+12+2, outputs in (0,1), va_reaches={va_reaches}, pooled_isolated={pooled_isolated}",
    )


def test_freezing_contract(tmp_path):
    generate_synthetic(SynthConfig(n_videos=8, seed=5, frame_dims=(3, 16, 16), max_frames=150), tmp_path)
    from erinet.data import load_manifest, load_samples, make_batches

    manifest = load_manifest(tmp_path / "manifest.csv")
    samples = load_samples(manifest, tmp_path, "train")
    config = RunConfig(
        input_size=(3, 16, 16), stage_channels=(8, 8, 8, 8), attn_heads=2, attn_reduction=4, lstm_hidden=8,
        batch_size=3, seed=2,
    )
    extractor, head = build_models(config)
    optimizer = Adam(head.parameters(), lr=1e-3)
    extractor_before = b"".join(p.data.tobytes() for p in extractor.parameters())
    head_before = b"".join(p.data.tobytes() for p in head.parameters())
    steps = 0
    while steps < 100:
        for batch in make_batches(samples, 3, shuffle_seed=steps, for_correlation=True):
            eri_train_step(extractor, head, batch, "pcc", optimizer)
            steps += 1
            if steps >= 100:
                break
    extractor_after = b"".join(p.data.tobytes() for p in extractor.parameters())
    head_after = b"".join(p.data.tobytes() for p in head.parameters())
    report(
        "freezing-contract",
        extractor_after == extractor_before and head_after != head_before,
        f"{steps} steps, extractor bytes unchanged, head updated",
    )


def test_sampler_contract():
    ok = all(len(sample_frame_indices(n)) == math.ceil(n / 30) for n in range(1, 10001))
    ok = ok and len(sample_frame_indices(300)) == 10 and len(sample_frame_indices(349)) == 12
    report("sampler-contract", ok, "ceil(n/30) for n in 1..10000; 300->10; 349->12")


@pytest.mark.slow
def test_learning_capability(acceptance_signal_run, acceptance_control_run):
    signal_best = max(h.train_mean_pcc for h in acceptance_signal_run["result"].history)
    control_peak = max(h.train_mean_pcc for h in acceptance_control_run["result"].history)
    total_seconds = acceptance_signal_run["seconds"] + acceptance_control_run["seconds"]
    ok = signal_best >= 0.9 and control_peak < 0.3 and total_seconds < 600.0
    report(
        "learning-capability",
        ok,
        f"signal {signal_best:.4f} >= 0.9, shuffled control {control_peak:.4f} < 0.3, {total_seconds:.0f}s < 600s",
    )


@pytest.mark.slow
def test_learning_run_checkpoint_evaluates_on_train(acceptance_signal_run):
    from erinet.training import evaluate

    result = acceptance_signal_run["result"]
    config = acceptance_signal_run["config"]
    rep = evaluate(result.checkpoint_path, config.manifest, "train")
    report("learning-run-eval", rep.mean_pcc >= 0.9, f"saved checkpoint train mean PCC {rep.mean_pcc:.4f}")


@pytest.mark.slow
def test_planted_signal_admits_high_correlation(acceptance_dataset, tmp_path):
    # Companion bound: with clean full-batch gradients the planted signal
    # supports near-perfect train correlation through the same pipeline.
    config = RunConfig(
        manifest=str(acceptance_dataset / "manifest.csv"),
        data_root=str(acceptance_dataset),
        out_dir=str(tmp_path / "strong_run"),
        batch_size=51,
        lr=5e-3,
        lstm_hidden=32,
        seed=8,
        max_steps=500,
        epochs=100000,
    )
    result = train(config)
    best = max(h.train_mean_pcc for h in result.history)
    report("planted-signal-admits-0.95", best >= 0.95, f"best train mean PCC {best:.4f}")


def test_loss_variant_distinction():
    rng = np.random.default_rng(3)
    target = rng.uniform(0, 1, size=(16, 7))
    pred = Tensor(target + 0.2)
    pcc_loss = correlation_loss("pcc", pred, target).item()
    ccc_loss = correlation_loss("ccc", pred, target).item()
    ok = pcc_loss <= 1e-6 and ccc_loss > 0.05 and ccc_loss > pcc_loss
    report("loss-variant-distinction", ok, f"pcc loss {pcc_loss:.2e}, ccc loss {ccc_loss:.4f}")


def test_reproducibility(tmp_path):
    data_dir = tmp_path / "data"
    generate_synthetic(SynthConfig(n_videos=7, seed=3, frame_dims=(3, 16, 16), max_frames=120), data_dir)
    out_dir = tmp_path / "run"
    config = RunConfig(
        manifest=str(data_dir / "manifest.csv"),
        out_dir=str(out_dir),
        input_size=(3, 16, 16),
        stage_channels=(8, 8, 8, 8),
        attn_heads=2,
        attn_reduction=4,
        lstm_hidden=8,
        batch_size=2,
        epochs=3,
        seed=11,
    )
    artifacts = []
    for _ in range(2):
        train(config)
        artifacts.append(
            (
                (out_dir / "checkpoint.eric").read_bytes(),
                (out_dir / "train_report.csv").read_bytes(),
            )
        )
    checkpoints_equal = artifacts[0][0] == artifacts[1][0]
    reports_equal = artifacts[0][1] == artifacts[1][1]
    report("reproducibility", checkpoints_equal and reports_equal, "byte-identical checkpoint and report")
