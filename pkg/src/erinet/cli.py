"""Command-line surface: ``synth``, ``train``, ``eval`` and ``gradcheck``.

Flags mirror the run-config fields; ``--config FILE`` reads a UTF-8
key=value file first and explicit flags override it. Every failure path
prints a message and exits nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .config import RunConfig, parse_config_file
from .data import SynthConfig, generate_synthetic
from .errors import ErinetError
from .gradcheck_suite import format_table, run_model_checks, run_ops_checks
from .training import evaluate, train


def _add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; explicit flags override it")
    parser.add_argument("--manifest", help="dataset manifest CSV")
    parser.add_argument("--data-root", dest="data_root", help="directory frame files are relative to")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory for checkpoint and report")
    parser.add_argument("--loss", dest="loss_kind", choices=("pcc", "ccc"), help="training loss")
    parser.add_argument("--lr", type=float, help="Adam learning rate")
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="stop after this many optimizer steps (0 = no cap)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--freeze-extractor", dest="freeze_extractor", action="store_true", default=None)
    parser.add_argument("--no-freeze-extractor", dest="freeze_extractor", action="store_false", default=None)
    parser.add_argument("--label-norm", dest="label_norm", choices=("minus1-over-99", "over-100"))
    parser.add_argument("--descriptor-mode", dest="descriptor_mode", choices=("activated", "logits"))
    parser.add_argument("--lstm-hidden", dest="lstm_hidden", type=int)
    parser.add_argument("--lstm-layers", dest="lstm_layers", type=int)
    parser.add_argument("--attn-heads", dest="attn_heads", type=int)
    parser.add_argument("--attn-reduction", dest="attn_reduction", type=int)
    parser.add_argument("--input-size", dest="input_size", help="CxHxW, e.g. 3x32x32")
    parser.add_argument("--stage-channels", dest="stage_channels", help="four comma-separated channel counts")
    parser.add_argument("--blocks-per-stage", dest="blocks_per_stage", help="four comma-separated block counts")
    parser.add_argument("--extractor-workers", dest="extractor_workers", type=int, help="opt-in parallel extractor threads (results are unchanged)")
    parser.add_argument("--cache-descriptors", dest="cache_descriptors", action="store_true", default=None)
    parser.add_argument("--no-cache-descriptors", dest="cache_descriptors", action="store_false", default=None)


def _run_config_from_args(args: argparse.Namespace) -> RunConfig:
    mapping: dict = {}
    if args.config:
        mapping.update(parse_config_file(args.config))
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            mapping[f.name] = value
    return RunConfig.from_mapping(mapping)


def _cmd_synth(args: argparse.Namespace) -> int:
    frame_dims = tuple(int(v) for v in args.frame_dims.split("x"))
    config = SynthConfig(
        n_videos=args.n_videos,
        frame_dims=frame_dims,
        seed=args.seed,
        signal_strength=args.signal_strength,
        val_fraction=args.val_fraction,
    )
    manifest = generate_synthetic(config, args.out)
    print(f"wrote {len(manifest.rows)} videos under {args.out}")
    print(f"manifest: {Path(args.out) / 'manifest.csv'}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = _run_config_from_args(args)
    if not config.manifest:
        raise ErinetError("train needs --manifest (or manifest= in the config file)")
    result = train(config)
    last = result.history[-1]
    print(f"trained {result.steps} steps over {len(result.history)} epochs")
    print(f"final train mean PCC: {last.train_mean_pcc:.4f}")
    if last.val_mean_pcc is not None:
        print(f"final val mean PCC:   {last.val_mean_pcc:.4f}")
    print(f"best epoch {result.best_epoch} (selection metric {result.best_metric:.4f})")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"report:     {result.report_path}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate(
        args.checkpoint,
        args.manifest,
        args.split,
        workers=args.workers,
        report_path=args.out,
    )
    for line in report.lines():
        print(line)
    if args.out:
        print(f"report written to {args.out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.scope == "ops":
        rows = run_ops_checks(seed=args.seed)
    else:
        rows = run_model_checks(seed=args.seed, freeze_extractor=not args.unfrozen)
    print(format_table(rows))
    failed = [r for r in rows if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) exceeded their threshold", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erinet",
        description="Emotion reaction intensity pipeline: synthetic data, training, evaluation, gradient checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset with a planted signal")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--n-videos", dest="n_videos", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--frame-dims", dest="frame_dims", default="3x32x32", help="CxHxW")
    synth.add_argument("--signal-strength", dest="signal_strength", type=float, default=1.0)
    synth.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.2)
    synth.set_defaults(func=_cmd_synth)

    train_p = sub.add_parser("train", help="train the reaction-intensity head")
    _add_run_config_flags(train_p)
    train_p.set_defaults(func=_cmd_train)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    eval_p.add_argument("--checkpoint", required=True)
    eval_p.add_argument("--manifest", required=True)
    eval_p.add_argument("--split", default="val", choices=("train", "val", "test"))
    eval_p.add_argument("--out", help="write the report CSV here")
    eval_p.add_argument("--workers", type=int, default=1)
    eval_p.set_defaults(func=_cmd_eval)

    grad = sub.add_parser("gradcheck", help="finite-difference verification suite")
    grad.add_argument("scope", choices=("ops", "model"))
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--unfrozen", action="store_true", help="model scope: include extractor parameters")
    grad.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ErinetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
