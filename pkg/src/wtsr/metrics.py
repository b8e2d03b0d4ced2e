"""PSNR / SSIM on the luminance channel and the benchmark runner."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .images import ImageFormatError, load_image, load_manifest, quantize, to_tensor
from .tensor import ShapeError
from .texture import crop_to_multiple, degrade_bicubic, upscale_bicubic

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
METHODS = ("bicubic", "bundle", "identity")


def luminance(img):
    """2-D float64 luminance plane of an image.

    RGB input is mapped to the studio-swing ITU-R BT.601 Y used by SR
    benchmarks (16..235 on the 8-bit scale, divided by 255); one-channel input
    is returned unchanged. Accepts (h, w), (c, h, w) or (1, c, h, w).
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch shape {a.shape}")
        a = a[0]
    if a.ndim == 2:
        return a
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ShapeError(f"cannot take luminance of shape {a.shape}")
    if a.shape[0] == 1:
        return a[0]
    return (16.0 + 65.481 * a[0] + 128.553 * a[1] + 24.966 * a[2]) / 255.0


def _prepare(a, b, shave):
    ya, yb = luminance(a), luminance(b)
    if ya.shape != yb.shape:
        raise ShapeError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")
    if shave < 0 or 2 * shave >= min(ya.shape):
        raise ShapeError(f"shave={shave} too large for image of size {ya.shape}")
    if shave:
        ya, yb = ya[shave:-shave, shave:-shave], yb[shave:-shave, shave:-shave]
    return ya, yb


def psnr(a, b, shave=0):
    """10*log10(1/MSE) in dB on [0, 1] data, capped at 99 dB."""
    ya, yb = _prepare(a, b, shave)
    mse = np.mean((ya - yb) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, shave=0, size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over all valid positions of a Gaussian window."""
    ya, yb = _prepare(a, b, shave)
    if min(ya.shape) < size:
        raise ShapeError(f"image {ya.shape} smaller than the {size}x{size} SSIM window after shaving")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    g = gaussian_window(size, sigma)
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a ** 2
    var_b = _filter_valid(yb * yb, g) - mu_b ** 2
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class ImageScore:
    id: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    dataset: str
    method: str
    scale: int
    shave: int
    images: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def mean_psnr_db(self):
        return float(np.mean([r.psnr_db for r in self.images])) if self.images else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.images])) if self.images else float("nan")

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "method": self.method,
            "scale": self.scale,
            "shave": self.shave,
            "images": [asdict(r) for r in self.images],
            "mean_psnr_db": self.mean_psnr_db,
            "mean_ssim": self.mean_ssim,
            "skipped": self.skipped,
        }

    def to_table(self):
        label = f"{self.method} x{self.scale}"
        w = max(len(label), 10)
        lines = [
            f"{'Dataset':<10} {'Index':<6} {label:>{w}}",
            f"{self.dataset:<10} {'PSNR':<6} {self.mean_psnr_db:>{w}.2f}",
            f"{'':<10} {'SSIM':<6} {self.mean_ssim:>{w}.4f}",
        ]
        return "\n".join(lines)

    def write(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        path.with_suffix(".txt").write_text(self.to_table() + "\n", encoding="utf-8")
        return path


def super_resolve(method, lr, scale, bundle=None, hr=None):
    if method == "bicubic":
        return np.clip(upscale_bicubic(lr, scale), 0.0, 1.0)
    if method == "bundle":
        from .pipeline import infer
        if bundle is None:
            raise ValueError("method 'bundle' needs a pipeline bundle")
        return infer(bundle, lr)
    if method == "identity":
        return hr
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def evaluate_benchmark(method, manifest, scale, shave=None, bundle=None, quantize_outputs=True):
    """Score every HR image of ``manifest`` after degrade -> super-resolve.

    LR inputs come from the manifest when listed, otherwise from
    ``degrade_bicubic``. With ``quantize_outputs`` the LR and SR images are
    snapped to 8 bits, as when benchmark images are stored on disk.
    """
    man = load_manifest(manifest, check_exists=False) if not hasattr(manifest, "hr") else manifest
    shave = scale if shave is None else shave
    if method == "bundle" and bundle is not None and bundle.scale != scale:
        raise ShapeError(f"bundle is x{bundle.scale} but evaluation asked for x{scale}")
    report = EvalReport(man.name, method, scale, shave)
    for i, hr_path in enumerate(man.hr):
        image_id = Path(hr_path).stem
        try:
            hr = crop_to_multiple(to_tensor(load_image(hr_path)), scale)
            if man.lr is not None:
                lr = to_tensor(load_image(man.lr[i]))
            else:
                lr = degrade_bicubic(hr, scale)
        except (OSError, ImageFormatError) as exc:
            log.warning("skipping %s: %s", hr_path, exc)
            report.skipped.append({"id": image_id, "reason": str(exc)})
            continue
        if quantize_outputs:
            lr = quantize(lr)
        sr = super_resolve(method, lr, scale, bundle, hr)
        if quantize_outputs:
            sr = quantize(sr)
        report.images.append(ImageScore(image_id, psnr(sr, hr, shave), ssim(sr, hr, shave)))
    return report
