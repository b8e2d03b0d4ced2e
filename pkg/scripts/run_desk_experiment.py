"""Train all three stages on the desk corpus and compare bicubic, backbone and full-pipeline PSNR.

Run scripts/make_desk_corpus.py first.
"""
import argparse
import logging
import time

import numpy as np

from wtsr.config import parse_config
from wtsr.metrics import psnr, ssim
from wtsr.pipeline import (
    PipelineBundle,
    build_tpm_dataset,
    infer,
    load_training_pairs,
    train_backbone,
    train_tfm,
    train_tpm,
)
from wtsr.texture import upscale_bicubic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="desk/config.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    cfg = parse_config(args.config)
    pairs = load_training_pairs(cfg)
    t0 = time.perf_counter()
    backbone = train_backbone(cfg, pairs)
    tpm = train_tpm(build_tpm_dataset(backbone, pairs), cfg)
    tfm = train_tfm(cfg, backbone, tpm, pairs)
    elapsed = time.perf_counter() - t0
    for ckpt in (backbone, tpm, tfm):
        print(f"{ckpt.stage:5s} first/last epoch L1 {ckpt.history[0]:.4f} -> {ckpt.history[-1]:.4f} "
              f"(ratio {ckpt.history[-1] / ckpt.history[0]:.3f}, {ckpt.step_count} iterations)")
    bundle = PipelineBundle(backbone, tpm, tfm)
    net = backbone.to_network()
    s = cfg.scale
    print(f"{'image':10s} {'bicubic':>14s} {'backbone':>14s} {'pipeline':>14s}")
    for pr in pairs:
        cols = [np.clip(upscale_bicubic(pr.lr, s), 0, 1), np.clip(net.forward(pr.lr), 0, 1), infer(bundle, pr.lr)]
        print(f"{pr.id:10s} " + " ".join(f"{psnr(c, pr.hr, s):7.2f}/{ssim(c, pr.hr, s):.4f}" for c in cols))
    print(f"training time {elapsed:.0f} s")


if __name__ == "__main__":
    main()
