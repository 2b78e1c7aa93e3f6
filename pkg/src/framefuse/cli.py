"""Command-line entry point: ``framefuse <subcommand>``.

Subcommands cover the full workflow: synthetic dataset generation, decoder
training, density inspection, compression, decoding, benchmarking, and the
randomized verification suites. Every subcommand is deterministic given its
flags and seeds. Exit codes: 0 success, 2 usage/validation, 3 I/O, 4 failed
numerical check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import fusion, oracles, pipeline
from .ctc import (
    TrainingConfig,
    content_density,
    decoder_forward,
    greedy_decode,
    load_decoder,
    save_decoder,
    train_ctc_decoder,
)
from .frameio import (
    FormatError,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    read_fseq,
    write_dataset,
)


class UsageError(ValueError):
    pass


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload) if args.json else text)


def _load_window_config(args) -> pipeline.WindowConfig:
    overrides = {}
    if getattr(args, "window", None) is not None:
        overrides["window_frames"] = args.window
    if getattr(args, "chunk", None) is not None:
        overrides["chunk_frames"] = args.chunk
    if getattr(args, "config", None):
        return pipeline.load_window_config(args.config, overrides)
    base = pipeline.WindowConfig()
    merged = {
        "window_frames": overrides.get("window_frames", base.window_frames),
        "chunk_frames": overrides.get("chunk_frames", base.chunk_frames),
        "target_lengths": base.target_lengths,
    }
    return pipeline.WindowConfig(**merged)


def cmd_gen(args) -> int:
    for flag, value in (("--vocab", args.vocab), ("--dim", args.dim), ("--n", args.n)):
        if value < 1:
            raise UsageError(f"{flag} must be >= 1")
    spec = SyntheticSpec(
        vocab_size=args.vocab,
        embed_dim=args.dim,
        frames_per_token=(args.k_min, args.k_max),
        noise_stddev=args.noise,
        silence_prob=args.silence_prob,
        num_sequences=args.n,
        tokens_per_sequence=(args.tokens_min, args.tokens_max),
        seed=args.seed,
    )
    samples = generate_synthetic(spec)
    manifest = write_dataset(samples, spec, args.out)
    total = sum(e.duration_frames for e in manifest.entries)
    _emit(
        args,
        {"sequences": len(manifest), "total_frames": total, "vocab_size": spec.vocab_size},
        f"wrote {len(manifest)} sequences ({total} frames, vocab {spec.vocab_size}) to {args.out}",
    )
    return 0


def cmd_train_ctc(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = TrainingConfig(
        steps=args.steps,
        batch_size=args.batch,
        learning_rate=args.lr,
        hidden_dim=args.hidden,
        seed=args.seed,
        lr_schedule=args.schedule,
    )
    decoder, history = train_ctc_decoder(manifest, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_decoder(decoder, out / "decoder.ctd")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
    final = history[-1]["loss"] if history else float("nan")
    _emit(
        args,
        {"steps": len(history), "final_loss": final, "checkpoint": str(out / "decoder.ctd")},
        f"trained {len(history)} steps, final loss {final:.4f}; checkpoint at {out / 'decoder.ctd'}",
    )
    return 0


def cmd_density(args) -> int:
    decoder = load_decoder(args.ckpt)
    seq = read_fseq(args.input)
    density = content_density(decoder_forward(decoder, seq))
    payload = {"id": seq.id, "density": [round(float(d), 9) for d in density]}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")
        _emit(args, {"id": seq.id, "frames": len(density), "out": str(args.out)},
              f"wrote {len(density)} densities for {seq.id} to {args.out}")
    else:
        _emit(
            args,
            payload,
            f"{seq.id}: mean density {float(np.mean(density)):.4f} over {len(density)} frames",
        )
    return 0


def cmd_compress(args) -> int:
    cfg = _load_window_config(args)
    seq = read_fseq(args.input)
    target = args.target if args.target is not None else cfg.window_frames
    if target < 1:
        raise UsageError("--L must be >= 1")
    if args.fuser not in bench_mod.FUSER_NAMES:
        raise UsageError(f"--fuser must be one of {', '.join(bench_mod.FUSER_NAMES)}")

    needs_density = args.fuser in ("density", "single-shot") and seq.num_frames > target
    density = np.zeros(seq.num_frames)
    density_fn = None
    if needs_density:
        if not args.ckpt:
            raise UsageError(f"--ckpt is required for --fuser {args.fuser}")
        decoder = load_decoder(args.ckpt)
        density = content_density(decoder_forward(decoder, seq))
        if args.recompute_density:
            density_fn = lambda frames: content_density(decoder_forward(decoder, frames))

    if args.fuser == "density":
        condensed = fusion.iterative_fusion(seq, density, target, density_fn=density_fn)
    elif args.fuser == "single-shot":
        condensed = fusion.single_shot_fusion(seq, density, target)
    elif args.fuser == "mostsim":
        condensed = fusion.baseline_mostsim(seq, target)
    elif args.fuser == "avgpool":
        condensed = fusion.baseline_avgpool(seq, target)
    else:
        condensed = fusion.baseline_random(seq, target, seed=args.seed)

    fusion.write_condensed(condensed, args.out)
    _emit(
        args,
        {"input_frames": seq.num_frames, "output_frames": condensed.num_frames, "out": str(args.out)},
        f"compressed {seq.num_frames} -> {condensed.num_frames} frames ({args.fuser}) into {args.out}",
    )
    return 0


def cmd_decode(args) -> int:
    decoder = load_decoder(args.ckpt)
    seq = read_fseq(args.input)
    tokens = greedy_decode(decoder_forward(decoder, seq))
    _emit(args, {"id": seq.id, "tokens": tokens}, f"{seq.id}: {' '.join(map(str, tokens))}")
    return 0


def cmd_bench(args) -> int:
    manifest = load_manifest(args.manifest)
    decoder = load_decoder(args.ckpt)
    fusers = [f.strip() for f in args.fusers.split(",") if f.strip()]
    for f in fusers:
        if f not in bench_mod.FUSER_NAMES:
            raise UsageError(f"unknown fuser {f!r} in --fusers")
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    if not targets:
        raise UsageError("--targets must name at least one target length")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = bench_mod.run_grid(
        manifest,
        decoder,
        fusers=fusers,
        targets=targets,
        seed=args.seed,
        threads=args.threads,
        flush_path=out / "partial.jsonl",
    )
    bench_mod.write_report(report, out, include_timings=args.timings)
    if args.json:
        print(json.dumps({"rows": [
            {k: r[k] for k in ("fuser", "target", "mean_cer", "mean_ratio", "mean_cost", "n")}
            for r in report.rows
        ], "reference": report.reference_note}))
    else:
        for r in report.rows:
            print(
                f"{r['fuser']:>12} @ {r['target']:>6}: mean CER {r['mean_cer']:.4f}, "
                f"ratio {r['mean_ratio']:.2f}x, cost {r['mean_cost']:.3f}"
            )
        ref = report.reference_note["reference_full_scale_tflops"]
        trend = ", ".join(f"L={k}: {v}" for k, v in ref.items())
        print(f"full-scale reference TFLOPs (not reproduced by this proxy): {trend}")
    return 0


def cmd_oracle(args) -> int:
    names = oracles.SUITE_NAMES if args.suite == "all" else (args.suite,)
    results = oracles.run_suites(
        names, seed=args.seed, trials=args.trials, max_frames=args.max_t
    )
    if args.json:
        print(json.dumps(results))
    else:
        for res in results:
            err = res.get("max_abs_err", res.get("max_rel_err", res.get("mismatches")))
            status = "pass" if res["passed"] else "FAIL"
            print(f"suite {res['suite']}: {status} (max error {err}, {res['trials']} trials, "
                  f"{res['elapsed_s']:.2f}s)")
    return 0 if all(r["passed"] for r in results) else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framefuse",
        description="Compress frame-embedding sequences by density-weighted iterative fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--vocab", type=int, required=True, help="number of non-blank token ids")
    p.add_argument("--dim", type=int, required=True, help="embedding dimension")
    p.add_argument("--n", type=int, required=True, help="number of sequences")
    p.add_argument("--tokens-min", type=int, default=4)
    p.add_argument("--tokens-max", type=int, default=8)
    p.add_argument("--k-min", type=int, default=1, help="min frames emitted per token")
    p.add_argument("--k-max", type=int, default=3, help="max frames emitted per token")
    p.add_argument("--noise", type=float, default=0.0, help="frame noise stddev")
    p.add_argument("--silence-prob", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train-ctc", help="train the decoder head on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--schedule", choices=("cosine", "constant"), default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_train_ctc)

    p = sub.add_parser("density", help="per-frame content density of a sequence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("-o", "--out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_density)

    p = sub.add_parser("compress", help="compress a sequence to a target length")
    p.add_argument("--input", required=True)
    p.add_argument("--fuser", default="density", help=f"one of {', '.join(bench_mod.FUSER_NAMES)}")
    p.add_argument("--L", dest="target", type=int, default=None,
                   help="target length (defaults to the configured window)")
    p.add_argument("--ckpt", default=None, help="decoder checkpoint for density-based fusers")
    p.add_argument("--recompute-density", action="store_true",
                   help="re-run the decoder on merged frames each round")
    p.add_argument("--config", default=None, help="JSON window-config file")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_compress)

    p = sub.add_parser("decode", help="greedy-decode a sequence with a trained decoder")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("bench", help="run the fuser/target retention grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fusers", default=",".join(bench_mod.FUSER_NAMES))
    p.add_argument("--targets", default="T,T/2,T/4,T/8",
                   help="comma list of absolute lengths or T/k fractions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock columns (breaks byte-level rerun identity)")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("oracle", help="run randomized verification suites")
    p.add_argument("--suite", choices=oracles.SUITE_NAMES + ("all",), default="all")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--max-T", dest="max_t", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
