"""Command-line entry point: ``vid <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from vid.ablation import ABLATION_ROWS, format_ablation, run_ablation
from vid.data import SyntheticSpec, gen_dataset
from vid.errors import FormatError, InfeasibleError
from vid.evaluate import DEFAULT_KS, knn_retrieval, linear_probe
from vid.nn.gradcheck import primitive_suite
from vid.sampler import SamplerConfig, format_sample, generate_batch
from vid.trainer import (
    Dataset,
    TrainConfig,
    config_from_text,
    config_to_text,
    init_model,
    load_model,
    pretrain,
    save_model,
    video_features,
)

GRAD_TOLERANCE = 1e-4


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def _load_config(path: str | None, overrides: list[str]) -> TrainConfig:
    text = Path(path).read_text() if path else ""
    if overrides:
        text += "\n" + "\n".join(overrides)
    return config_from_text(text)


def _model(args):
    cfg, params = load_model(args.checkpoint)
    if args.random_init:
        params = init_model(cfg, args.seed)
    return cfg, params


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        frames_per_video=args.frames,
        height=args.size,
        width=args.size,
        channels=args.channels,
        shape_by_class=not args.random_shapes,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, entries = gen_dataset(spec, args.videos_per_class, out)
    print(f"wrote {len(entries)} videos and {out / 'manifest.csv'}")
    return 0


def cmd_sample(args) -> int:
    cfg = SamplerConfig(args.l0, args.inc_min, args.inc_max, args.k)
    rng = np.random.default_rng(args.seed)
    for s in generate_batch(cfg, args.T, args.n, rng, args.source):
        print(format_sample(s))
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config, args.set)
    if args.dump_config:
        print(config_to_text(cfg), end="")
        return 0
    data = Dataset.from_manifest(args.manifest)
    result = pretrain(cfg, data)
    out = args.out or (Path(cfg.checkpoint_dir) / "final.vidc" if cfg.checkpoint_dir else None)
    if out:
        save_model(out, cfg, result.params, result.optimizer)
        print(f"saved {out}")
    last = result.metrics[-1] if result.metrics else None
    if last:
        print(
            f"steps {last['step'] + 1}  loss {last['loss_total']:.4f}  "
            f"lod {last['loss_lod']:.4f}  acc_lod {last['acc_lod']:.3f}"
        )
    return 0


def cmd_grad_check(args) -> int:
    errors = primitive_suite(np.random.default_rng(args.seed))
    width = max(len(k) for k in errors)
    ok = True
    for name, err in errors.items():
        passed = err <= GRAD_TOLERANCE
        ok &= passed
        print(f"{name:<{width}}  {err:.3e}  {'ok' if passed else 'FAIL'}")
    print(f"max relative error {max(errors.values()):.3e} (tolerance {GRAD_TOLERANCE:g})")
    return 0 if ok else 1


def cmd_probe(args) -> int:
    model = _model(args)
    train, test = Dataset.from_manifest(args.train), Dataset.from_manifest(args.test)
    ftr = video_features(model, train, args.clips_per_video)
    fte = video_features(model, test, args.clips_per_video)
    report = linear_probe(ftr, train.labels, fte, test.labels, epochs=args.epochs, lr=args.lr)
    print(report.table())
    return 0


def cmd_retrieve(args) -> int:
    model = _model(args)
    train, test = Dataset.from_manifest(args.train), Dataset.from_manifest(args.test)
    ftr = video_features(model, train, args.clips_per_video)
    fte = video_features(model, test, args.clips_per_video)
    report = knn_retrieval(fte, test.labels, ftr, train.labels, args.k)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.set)
    train, test = Dataset.from_manifest(args.train), Dataset.from_manifest(args.test)
    rows = [r for r in ABLATION_ROWS if not args.rows or r[0] in args.rows]
    results = []
    for name, weights, score in run_ablation(cfg, train, test, rows):
        results.append((name, weights, score))
        logging.getLogger(__name__).info("%s done: probe %.3f", name, score.probe.top1)
    print(format_ablation(results))
    return 0


# -- parser ------------------------------------------------------------------------


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="model file written by pretrain")
    p.add_argument("--train", required=True, help="manifest of the training / gallery videos")
    p.add_argument("--test", required=True, help="manifest of the test / query videos")
    p.add_argument("--clips-per-video", type=int, default=1, help="evenly spaced clips averaged per video")
    p.add_argument("--random-init", action="store_true", help="score a freshly initialized encoder instead")
    p.add_argument("--seed", type=int, default=0, help="init seed for --random-init")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vid", description="Video incoherence pretext learning toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic moving-shape dataset and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--videos-per-class", type=int, default=25)
    p.add_argument("--frames", type=int, default=48)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--random-shapes", action="store_true", help="draw the shape per video, not per class")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("sample", help="print incoherent-clip plans for one video")
    p.add_argument("--T", type=int, required=True, help="number of frames in the video")
    p.add_argument("--l0", type=int, default=16, help="frames per assembled clip")
    p.add_argument("--inc-min", type=int, default=3)
    p.add_argument("--inc-max", type=int, default=10)
    p.add_argument("--k", type=int, default=2, help="sub-clips per clip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1, help="number of plans")
    p.add_argument("--source", default="video", help="source id printed with each plan")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--manifest", help="training manifest")
    p.add_argument("--out", help="final model path (default: <checkpoint_dir>/final.vidc)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("grad-check", help="finite-difference check of every autodiff primitive")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    _eval_flags(p)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.1)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("retrieve", help="top-k nearest-neighbour retrieval")
    _eval_flags(p)
    p.add_argument("--k", type=_ks, default=DEFAULT_KS, help="comma-separated k values")
    p.add_argument("--csv", help="also write the report as CSV here")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("ablate", help="pretrain per loss-weight row and tabulate probe accuracy")
    p.add_argument("--config", help="key=value config file shared by all rows")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--rows", nargs="*", choices=[r[0] for r in ABLATION_ROWS], help="subset of rows")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "pretrain" and not args.dump_config and not args.manifest:
        parser.error("pretrain needs --manifest")
    try:
        return args.func(args)
    except (InfeasibleError, FormatError, ValueError, FileNotFoundError) as exc:
        print(f"vid {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
