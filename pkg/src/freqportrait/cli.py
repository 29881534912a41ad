"""Command-line entry point: ``freqportrait <command> ...``."""

import argparse
import logging
import sys
from pathlib import Path

from . import analysis, data, inference, training
from .network import load_checkpoint

log = logging.getLogger("freqportrait")


def cmd_synthgen(args):
    cfg = data.SynthConfig(frames=args.frames, size=args.size)
    video = data.generate_synthetic_dataset(cfg, args.seed)
    data.save_dataset(args.out, video.frames, video.features, video.head_boxes)
    print(f"wrote {len(video.frames)} frames to {args.out}")


def cmd_train(args):
    cfg = training.load_train_config(args.config)
    frames, features = data.load_dataset(args.data)

    def progress(row):
        if row["step"] % 100 == 0:
            log.info("step %d total %.4f rec %.4f percep %.4f freq %.4f",
                     row["step"], row["total"], row["rec"], row["percep"], row["freq"])

    result = training.train(frames, features, cfg, out_dir=args.out, progress=progress)
    from .plotting import plot_losses
    plot_losses(result.metrics, Path(args.out) / "loss.png")
    print(f"wrote {Path(args.out) / 'model.frk'}")


def cmd_infer(args):
    mode = inference.Mode(args.mode)
    if mode is inference.Mode.DUBBING and args.frames is None:
        raise inference.MissingInputError("--frames is required in dubbing mode")
    if mode is inference.Mode.ONESHOT and args.reference is None:
        raise inference.MissingInputError("--reference is required in oneshot mode")
    job = inference.InferenceJob(
        mode=mode,
        checkpoint=args.ckpt,
        features=args.features,
        source_frames=args.frames,
        head_boxes=args.boxes,
        reference=args.reference,
        reference_box=args.box,
        output_dir=args.out,
        comparison=args.compare,
    )
    frames = inference.synthesize(job)
    print(f"wrote {len(frames)} frames to {args.out}")


def cmd_analyze_spectrum(args):
    report = analysis.analyze_spectrum(args.frames)
    analysis.write_spectrum_report(report, args.out)
    lo, mid, hi = report.bands
    print(f"frames={report.frame_count} low={lo:.6g} mid={mid:.6g} high={hi:.6g}")


def cmd_gap(args):
    print(repr(analysis.spectral_gap(args.a, args.b)))


def cmd_psnr(args):
    print(repr(analysis.psnr(args.a, args.b)))


def cmd_benchmark(args):
    model = load_checkpoint(args.ckpt)
    print(analysis.format_benchmark(analysis.benchmark(model, n=args.n, warmup=args.warmup)))


def cmd_ablate(args):
    cfg = training.load_train_config(args.config)
    frames, features = data.load_dataset(args.data)
    rows = analysis.ablate(frames, features, cfg, time_budget=args.budget,
                           progress=lambda r: log.info("%s done: psnr %.2f", r["variant"], r["psnr"]))
    path = analysis.write_ablation(rows, args.out)
    print(f"wrote {path}")
    if any(r["status"] != "done" for r in rows):
        print("partial: time budget exhausted before all variants ran")


def build_parser():
    p = argparse.ArgumentParser(prog="freqportrait", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthgen", help="render a synthetic talking-portrait dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_synthgen)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="synthesize frames from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mode", choices=[m.value for m in inference.Mode], required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--frames")
    s.add_argument("--boxes")
    s.add_argument("--reference")
    s.add_argument("--box", help='head box as "top left bottom right"')
    s.add_argument("--out", required=True)
    s.add_argument("--compare", action="store_true", help="also write reference|masked|output strips")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("analyze-spectrum", help="averaged FFT spectrum of a frame directory")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze_spectrum)

    s = sub.add_parser("gap", help="spectral gap between two frame directories")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_gap)

    s = sub.add_parser("psnr", help="PSNR between two frame directories")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_psnr)

    s = sub.add_parser("benchmark", help="per-frame synthesis time")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--warmup", type=int, default=5)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("ablate", help="train the four ablation variants")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", type=float, default=None, help="wall-clock seconds for all variants")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one parseable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error\t{type(exc).__name__}\t{msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
