"""8-bit image codecs (PNG through Pillow, binary PPM/PGM natively) and
dataset manifests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _read_netpbm(path):
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated PNM header")
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported PNM variant {magic.decode(errors='replace')} (binary P5/P6 only)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ImageFormatError(f"{path}: unsupported bit depth (maxval {maxval}); only 8-bit images are supported")
    ch = 3 if magic == b"P6" else 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * ch, offset=pos) if len(raw) - pos >= w * h * ch else None
    if data is None:
        raise ImageFormatError(f"{path}: truncated raster")
    img = data.reshape(h, w, ch)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * 255 / maxval).astype(np.uint8)
    return img


def _write_netpbm(pixels, path):
    magic = b"P6" if pixels.ndim == 3 else b"P5"
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def load_image(path):
    """Read an 8-bit image as an (h, w, 3) uint8 array.

    Alpha is dropped and grayscale is replicated to three channels.
    """
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        img = _read_netpbm(path)
    else:
        from PIL import Image
        try:
            im = Image.open(path)
            im.load()
        except (OSError, SyntaxError) as exc:
            raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
        if im.mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.info.get("bits", 8) > 8:
            raise ImageFormatError(f"{path}: unsupported bit depth (mode {im.mode}); only 8-bit images are supported")
        if im.mode in ("1", "L", "LA", "P", "PA", "RGBA", "RGB"):
            im = im.convert("RGB") if im.mode not in ("L", "LA") else im.convert("L")
        else:
            raise ImageFormatError(f"{path}: unsupported color mode {im.mode}")
        img = np.asarray(im, dtype=np.uint8)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def save_image(pixels, path):
    """Write an (h, w, 3) or (h, w) uint8 array as PNG or PPM/PGM by extension."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ImageFormatError(f"save_image expects uint8 samples, got {pixels.dtype}")
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        if path.suffix.lower() == ".pgm" and pixels.ndim == 3:
            raise ImageFormatError(f"{path}: PGM holds a single channel")
        _write_netpbm(pixels, path)
    else:
        from PIL import Image
        Image.fromarray(pixels).save(path)


def to_tensor(pixels):
    """(h, w, c) uint8 -> (1, c, h, w) float32 in [0, 1]."""
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)[None].astype(np.float32) / 255.0)


def to_pixels(t):
    """(1, c, h, w) tensor in [0, 1] -> (h, w, c) uint8 via round(v*255), clamped."""
    if t.ndim != 4 or t.shape[0] != 1:
        raise ValueError(f"to_pixels expects a single (1, c, h, w) image, got {t.shape}")
    q = np.clip(np.round(t[0].astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def quantize(t):
    """Snap a [0, 1] tensor onto the 8-bit grid, as an image write/read would."""
    return (np.clip(np.round(t.astype(np.float64) * 255.0), 0, 255) / 255.0).astype(t.dtype)


@dataclass
class DatasetManifest:
    name: str
    hr: list
    lr: list | None = None
    scale: int | None = None
    root: Path = field(default=Path("."), repr=False)


def load_manifest(path, check_exists=True):
    """Parse ``{name, scale, hr: [paths], lr: [paths]?}``; relative paths resolve against the manifest."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(doc) - {"name", "scale", "hr", "lr"}
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    if not isinstance(doc.get("hr"), list) or not doc["hr"]:
        raise ManifestError(f"{path}: 'hr' must be a non-empty list of paths")
    root = path.parent
    hr = [str(root / p) for p in doc["hr"]]
    lr = doc.get("lr")
    if lr is not None:
        if not isinstance(lr, list) or len(lr) != len(hr):
            raise ManifestError(f"{path}: 'lr' must list one path per HR image")
        lr = [str(root / p) for p in lr]
    if check_exists:
        missing = [p for p in hr + (lr or []) if not Path(p).exists()]
        if missing:
            raise ManifestError(f"{path}: missing files {missing[:5]}")
    return DatasetManifest(name=doc.get("name", path.stem), hr=hr, lr=lr, scale=doc.get("scale"), root=root)


def write_manifest(path, name, hr, lr=None, scale=None):
    path = Path(path)
    doc = {"name": name, "hr": [str(p) for p in hr]}
    if lr is not None:
        doc["lr"] = [str(p) for p in lr]
    if scale is not None:
        doc["scale"] = scale
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path
