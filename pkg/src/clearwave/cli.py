"""Command-line surface.

Subcommands: synth-rirs, make-corpus, make-dataset, filter, train, gradcheck,
enhance, stream, eval. Every run with a fixed --seed is reproducible
end-to-end. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from clearwave.audio import read_wav, write_wav
from clearwave.config import ExperimentConfig, TrainConfig, desk_train_config


def _load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig(train=desk_train_config())
    return ExperimentConfig.load(path)


def _cmd_synth_rirs(args) -> int:
    from clearwave.reverb import generate_rir_library

    records = generate_rir_library(
        args.out, count=args.count, seed=args.seed, length_s=args.length_s
    )
    print(f"wrote {len(records)} RIRs to {args.out}")
    return 0


def _cmd_make_corpus(args) -> int:
    from clearwave.corpus import generate_clip_corpus, generate_filter_test_corpus

    if args.kind == "filter-test":
        manifest, _ = generate_filter_test_corpus(args.out, count=args.count, seed=args.seed)
    else:
        manifest = generate_clip_corpus(
            args.out, args.kind, args.count, args.seed, duration_s=args.duration_s
        )
    print(f"wrote {len(manifest)} clips to {args.out}")
    return 0


def _cmd_make_dataset(args) -> int:
    from clearwave.augment import sample_recipe
    from clearwave.data import synthesize_example
    from clearwave.train import SynthesisSource
    from clearwave.reverb import load_rir_library
    from clearwave.data import Manifest

    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fg_dir, bg_dir = Path(cfg.data.speech_dir), Path(cfg.data.noise_dir)
    fg = [read_wav(fg_dir / r.path) for r in Manifest.load(fg_dir / "manifest.jsonl")]
    bg = [read_wav(bg_dir / r.path) for r in Manifest.load(bg_dir / "manifest.jsonl")]
    rirs = load_rir_library(cfg.data.rir_dir) if cfg.data.rir_dir else []
    source = SynthesisSource(fg, bg, rirs, cfg.augment, seed=args.seed,
                             chunk_s=cfg.train.chunk_s)
    for i in range(args.count):
        x, label_fg, label_bg = source.example(i)
        write_wav(out / f"ex_{i:05d}.x.wav", x)
        write_wav(out / f"ex_{i:05d}.fg.wav", label_fg)
        write_wav(out / f"ex_{i:05d}.bg.wav", label_bg)
    print(f"wrote {args.count} examples to {out}")
    return 0


def _cmd_filter(args) -> int:
    from clearwave.data import (
        Estimator,
        FilterThresholds,
        Manifest,
        filter_corpus,
        write_filter_report,
    )

    manifest = Manifest.load(args.manifest)
    if args.estimator == "oracle":
        est = Estimator(kind="oracle")
    else:
        est = Estimator(kind="model", checkpoint_path=args.ckpt, n_output_masks=3)
    th = FilterThresholds(drr_min_db=args.drr_min, snr_min_db=args.snr_min)
    accepted, rows = filter_corpus(
        manifest, est, th, Path(args.manifest).parent, args.out
    )
    accepted.save(Path(args.out) / "manifest.jsonl")
    write_filter_report(rows, args.report)
    n_ok = sum(1 for r in rows if r.accepted)
    print(f"accepted {n_ok}/{len(rows)} clips; report at {args.report}")
    return 0


def _cmd_train(args) -> int:
    from clearwave.data import Manifest
    from clearwave.reverb import load_rir_library
    from clearwave.train import MixtureSource, SynthesisSource, train

    cfg = _load_config(args.config)
    tcfg = cfg.train
    if args.steps is not None:
        tcfg = TrainConfig(**{**tcfg.to_dict(), "total_steps": args.steps})
    if args.seed is not None:
        tcfg = TrainConfig(**{**tcfg.to_dict(), "seed": args.seed})
    if cfg.data.speech_dir:
        fg_dir, bg_dir = Path(cfg.data.speech_dir), Path(cfg.data.noise_dir)
        fg = [read_wav(fg_dir / r.path) for r in Manifest.load(fg_dir / "manifest.jsonl")]
        bg = [read_wav(bg_dir / r.path) for r in Manifest.load(bg_dir / "manifest.jsonl")]
        rirs = load_rir_library(cfg.data.rir_dir) if cfg.data.rir_dir else []
        source = SynthesisSource(fg, bg, rirs, cfg.augment, seed=tcfg.seed,
                                 chunk_s=tcfg.chunk_s)
    else:
        source = MixtureSource(seed=tcfg.seed, chunk_s=tcfg.chunk_s)
    result = train(cfg.net, source, tcfg, args.out, cfg.loss)
    print(
        f"trained {result.steps} steps: loss {result.initial_loss:.4f} -> "
        f"{result.final_loss:.4f}; checkpoint {result.checkpoint_path}"
    )
    return 1 if result.aborted else 0


def _cmd_gradcheck(args) -> int:
    from clearwave.train import grad_check

    report = grad_check(seed=args.seed)
    for name in sorted(report["groups"]):
        print(f"{name}\t{report['groups'][name]:.3e}")
    print(f"input\t{report['input']:.3e}")
    print(f"max_rel_err\t{report['max_rel_err']:.3e}\tpassed={report['passed']}")
    return 0 if report["passed"] else 1


def _make_provider(args):
    from clearwave.enhance import IdentityMaskProvider, ModelMaskProvider

    if args.mask_provider == "identity":
        return IdentityMaskProvider()
    if args.mask_provider == "oracle":
        raise ValueError("oracle masks need ground-truth components; use the library API")
    if not args.ckpt:
        raise ValueError("--ckpt is required with the model mask provider")
    return ModelMaskProvider(args.ckpt)


def _cmd_enhance(args) -> int:
    from clearwave.enhance import enhance_buffer

    x = read_wav(args.input)
    provider = _make_provider(args)
    y = enhance_buffer(x, provider)
    write_wav(args.output, y)
    print(f"enhanced {args.input} -> {args.output} ({len(y)} samples)")
    return 0


def _cmd_stream(args) -> int:
    from clearwave.stream import run_stream

    x = read_wav(args.input)
    provider = _make_provider(args)
    chunk = int(round(args.chunk_ms * x.sample_rate_hz / 1000.0))
    y, stats = run_stream(x, provider, crossfade=not args.no_crossfade, chunk_size=chunk)
    write_wav(args.output, y)
    print(
        f"streamed {stats.chunks} chunks, {stats.emitted_samples} samples, "
        f"realtime factor {stats.realtime_factor:.3f}"
    )
    return 0


def _cmd_eval(args) -> int:
    from clearwave.metrics import EvalReport, evaluate_pair

    est_dir, ref_dir = Path(args.est_dir), Path(args.ref_dir)
    rows = []
    for est_path in sorted(est_dir.glob("*.wav")):
        ref_path = ref_dir / est_path.name
        if not ref_path.exists():
            print(f"skipping {est_path.name}: no reference", file=sys.stderr)
            continue
        rows.append(evaluate_pair(est_path.name, read_wav(est_path), read_wav(ref_path)))
    if not rows:
        print("no evaluable pairs", file=sys.stderr)
        return 1
    report = EvalReport(tuple(rows))
    report.write(args.report)
    agg = report.aggregate()
    print(json.dumps(agg, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clearwave",
        description="Complex-ratio-mask speech enhancement toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-rirs", help="generate a synthetic RIR library")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length-s", type=float, default=1.0)
    p.set_defaults(fn=_cmd_synth_rirs)

    p = sub.add_parser("make-corpus", help="generate synthetic desk corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["speech", "noise", "filter-test"], required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration-s", type=float, default=2.0)
    p.set_defaults(fn=_cmd_make_corpus)

    p = sub.add_parser("make-dataset", help="materialize (x, fg, bg) training triples")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_make_dataset)

    p = sub.add_parser("filter", help="semi-supervised DRR/SNR corpus filtering")
    p.add_argument("--manifest", required=True)
    p.add_argument("--estimator", choices=["oracle", "model"], default="oracle")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--drr-min", type=float, default=30.0)
    p.add_argument("--snr-min", type=float, default=10.0)
    p.set_defaults(fn=_cmd_filter)

    p = sub.add_parser("train", help="train the enhancement model")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("enhance", help="offline enhancement of a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mask-provider", choices=["model", "identity", "oracle"],
                   default="model")
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("stream", help="chunked low-latency enhancement")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--mask-provider", choices=["model", "identity", "oracle"],
                   default="model")
    p.add_argument("--chunk-ms", type=float, default=40.0)
    p.add_argument("--no-crossfade", action="store_true")
    p.set_defaults(fn=_cmd_stream)

    p = sub.add_parser("eval", help="objective metrics report over WAV pairs")
    p.add_argument("--est-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_eval)

    return parser


def cli_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
