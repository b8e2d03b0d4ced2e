"""Image-space derivations: luminance, Sobel texture maps, residual maps,
bicubic degradation and aligned patch sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, resize_bicubic

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SOBEL_NORM = 4.0 * np.sqrt(2.0)


def rgb_to_luma(img):
    """BT.601 luma of an (n, 3, h, w) tensor in [0, 1]."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"rgb_to_luma expects (n, 3, h, w), got {img.shape}")
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def sobel_magnitude(luma):
    """Sobel gradient magnitude scaled into [0, 1] by 4*sqrt(2).

    Borders use replicate padding so the map keeps the input size.
    """
    if luma.ndim != 4 or luma.shape[1] != 1:
        raise ShapeError(f"sobel_magnitude expects (n, 1, h, w), got {luma.shape}")
    if luma.shape[2] < 3 or luma.shape[3] < 3:
        raise ShapeError(f"sobel_magnitude needs h, w >= 3, got {luma.shape}")
    p = np.pad(luma, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = luma.shape[2], luma.shape[3]

    def at(dy, dx):
        return p[:, :, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    gx = (at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1))
    gy = (at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1))
    return (np.sqrt(gx * gx + gy * gy) / SOBEL_NORM).astype(luma.dtype)


def diff_map(hr, output):
    """Signed luma residual the backbone failed to reproduce: luma(hr) - luma(output)."""
    if hr.shape != output.shape:
        raise ShapeError(f"diff_map: hr shape {hr.shape} != output shape {output.shape}")
    return rgb_to_luma(hr) - rgb_to_luma(output)


def _downscale(x, s):
    if x.shape[2] % s or x.shape[3] % s:
        raise ShapeError(f"spatial dims {x.shape[2:]} not divisible by scale {s}")
    out = resize_bicubic(x, x.shape[2] // s, x.shape[3] // s, antialias=True)
    return np.clip(out, 0.0, 1.0)


def shrink_edge(edge, s):
    """Antialiased bicubic downscale of an edge map by 1/s, clamped to [0, 1]."""
    return _downscale(edge, s)


def crop_to_multiple(img, s):
    h, w = img.shape[2] - img.shape[2] % s, img.shape[3] - img.shape[3] % s
    return img[:, :, :h, :w]


def degrade_bicubic(hr, s):
    """LR image for ``hr``: antialiased bicubic downscale by 1/s, clamped to [0, 1]."""
    return _downscale(hr, s)


def upscale_bicubic(lr, s):
    return resize_bicubic(lr, lr.shape[2] * s, lr.shape[3] * s, antialias=True)


@dataclass
class PatchPair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    origin: tuple  # (image id, y, x) in LR pixels


def random_origins(h, w, p, k, rng):
    if h < p or w < p:
        raise ShapeError(f"image {(h, w)} smaller than patch size {p}")
    ys = rng.integers(0, h - p + 1, size=k)
    xs = rng.integers(0, w - p + 1, size=k)
    return list(zip(ys.tolist(), xs.tolist()))


def extract_patch_pairs(lr, hr, p, s, rng_seed, k, image_id=0):
    """``k`` uniformly random aligned crops: LR p x p, HR (s*p) x (s*p)."""
    if lr.shape[0] != 1 or hr.shape[0] != 1:
        raise ShapeError("extract_patch_pairs expects single images (batch of 1)")
    if hr.shape[2] != s * lr.shape[2] or hr.shape[3] != s * lr.shape[3]:
        raise ShapeError(f"hr shape {hr.shape} is not {s}x lr shape {lr.shape}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    pairs = []
    for y, x in random_origins(lr.shape[2], lr.shape[3], p, k, rng):
        pairs.append(PatchPair(
            lr[:, :, y:y + p, x:x + p].copy(),
            hr[:, :, s * y:s * (y + p), s * x:s * (x + p)].copy(),
            (image_id, y, x),
        ))
    return pairs
