"""Command-line entry point: ``wtsr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="wtsr", description="Weak-texture-map guided super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one stage (or all) from a JSON config")
    t.add_argument("--stage", required=True, choices=["backbone", "tpm", "tfm", "all"])
    t.add_argument("--config", required=True)

    i = sub.add_parser("infer", help="super-resolve one image with a trained bundle")
    i.add_argument("--bundle", required=True, help="directory holding backbone/tpm/tfm checkpoints")
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)

    e = sub.add_parser("eval", help="benchmark a method on a dataset manifest")
    e.add_argument("--method", required=True, choices=["bicubic", "bundle", "identity"])
    e.add_argument("--bundle")
    e.add_argument("--manifest", required=True)
    e.add_argument("--scale", required=True, type=int)
    e.add_argument("--shave", type=int, help="border pixels ignored on each side (default: scale)")
    e.add_argument("--report", required=True, help="output JSON path; a .txt table is written alongside")

    m = sub.add_parser("texture-map", help="write the Sobel texture map of an image as grayscale")
    m.add_argument("--input", required=True)
    m.add_argument("--output", required=True)

    q = sub.add_parser("metric", help="PSNR or SSIM between two images (luminance)")
    q.add_argument("--kind", required=True, choices=["psnr", "ssim"])
    q.add_argument("a")
    q.add_argument("b")
    q.add_argument("--shave", type=int, default=0)

    d = sub.add_parser("degrade", help="bicubic-downscale an image by the given factor")
    d.add_argument("--input", required=True)
    d.add_argument("--scale", required=True, type=int)
    d.add_argument("--output", required=True)
    return p


def _threads():
    n = os.environ.get("WTSR_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _train(args):
    from .config import parse_config
    from .pipeline import (
        STAGE_FILES, build_tpm_dataset, load_checkpoint, load_training_pairs,
        train_all, train_backbone, train_tfm, train_tpm,
    )
    cfg = parse_config(args.config)
    if cfg.run_dir is None:
        raise UsageError("train needs output_dir in the config")
    pairs = load_training_pairs(cfg)
    if args.stage == "all":
        train_all(cfg, pairs)
    elif args.stage == "backbone":
        train_backbone(cfg, pairs)
    elif args.stage == "tpm":
        backbone = load_checkpoint(cfg.run_dir / STAGE_FILES["rcan"])
        train_tpm(build_tpm_dataset(backbone, pairs), cfg)
    else:
        backbone = load_checkpoint(cfg.run_dir / STAGE_FILES["rcan"])
        tpm = load_checkpoint(cfg.run_dir / STAGE_FILES["tpm"])
        train_tfm(cfg, backbone, tpm, pairs)
    print(f"checkpoints in {cfg.run_dir}")


def _infer(args):
    from .images import load_image, save_image, to_pixels, to_tensor
    from .pipeline import PipelineBundle, infer
    bundle = PipelineBundle.load(args.bundle)
    sr = infer(bundle, to_tensor(load_image(args.input)))
    save_image(to_pixels(sr), args.output)


def _eval(args):
    from .metrics import evaluate_benchmark
    from .pipeline import PipelineBundle
    bundle = None
    if args.method == "bundle":
        if not args.bundle:
            raise UsageError("--method bundle requires --bundle DIR")
        bundle = PipelineBundle.load(args.bundle)
    report = evaluate_benchmark(args.method, args.manifest, args.scale, args.shave, bundle)
    report.write(args.report)
    print(report.to_table())
    if report.skipped:
        print(f"skipped {len(report.skipped)} unreadable image(s)", file=sys.stderr)


def _texture_map(args):
    from .images import load_image, save_image, to_pixels, to_tensor
    from .texture import rgb_to_luma, sobel_magnitude
    edge = sobel_magnitude(rgb_to_luma(to_tensor(load_image(args.input)).astype(np.float64)))
    save_image(to_pixels(edge)[:, :, 0], args.output)


def _metric(args):
    from .images import load_image, to_tensor
    from .metrics import psnr, ssim
    a, b = to_tensor(load_image(args.a)), to_tensor(load_image(args.b))
    fn = psnr if args.kind == "psnr" else ssim
    print(f"{fn(a, b, args.shave):.4f}")


def _degrade(args):
    from .images import load_image, save_image, to_pixels, to_tensor
    from .texture import crop_to_multiple, degrade_bicubic
    hr = crop_to_multiple(to_tensor(load_image(args.input)), args.scale)
    save_image(to_pixels(degrade_bicubic(hr, args.scale)), args.output)


COMMANDS = {
    "train": _train,
    "infer": _infer,
    "eval": _eval,
    "texture-map": _texture_map,
    "metric": _metric,
    "degrade": _degrade,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads():
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wtsr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"wtsr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
