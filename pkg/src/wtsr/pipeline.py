"""Three-stage training (backbone -> texture predictor -> texture fusion),
end-to-end inference and checkpoint persistence."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .blocks import NetworkSpec, adam_step, build_network, l1_loss
from .images import load_image, load_manifest, to_tensor
from .tensor import ShapeError, concat_channels
from .texture import (
    crop_to_multiple,
    degrade_bicubic,
    diff_map,
    random_origins,
    rgb_to_luma,
    shrink_edge,
    sobel_magnitude,
)

log = logging.getLogger(__name__)

MAGIC = b"WTSRCKPT"
FORMAT_VERSION = 1
STAGES = ("rcan", "tpm", "tfm")
STAGE_FILES = {"rcan": "backbone.ckpt", "tpm": "tpm.ckpt", "tfm": "tfm.ckpt"}


class CheckpointError(ValueError):
    """Malformed checkpoint file; ``field`` names the part that failed."""

    def __init__(self, field, message):
        super().__init__(f"checkpoint {field}: {message}")
        self.field = field


class TrainingError(RuntimeError):
    pass


@dataclass
class ImagePair:
    id: str
    lr: np.ndarray  # (1, 3, h, w)
    hr: np.ndarray  # (1, 3, s*h, s*w)


# ---------------------------------------------------------------- checkpoints

@dataclass(eq=False)
class StageCheckpoint:
    stage: str
    spec: NetworkSpec
    tensors: dict  # name -> float32 array, canonical parameter order
    step_count: int = 0
    config: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    history: list = field(default_factory=list, compare=False, repr=False)  # per-epoch mean loss, not persisted

    def __eq__(self, other):
        if not isinstance(other, StageCheckpoint):
            return NotImplemented
        same_meta = (self.stage, self.spec, self.step_count, self.config, self.format_version) == (
            other.stage, other.spec, other.step_count, other.config, other.format_version)
        return same_meta and list(self.tensors) == list(other.tensors) and all(
            self.tensors[k].dtype == other.tensors[k].dtype and self.tensors[k].shape == other.tensors[k].shape
            and self.tensors[k].tobytes() == other.tensors[k].tobytes() for k in self.tensors)

    @classmethod
    def from_network(cls, stage, net, config=None):
        tensors = {name: p.value.astype(np.float32).copy() for name, p in net.named_params()}
        return cls(stage, net.spec, tensors, net.step_count, dict(config or {}))

    def to_network(self):
        net = build_network(self.spec, seed=0)
        names = [name for name, _ in net.named_params()]
        if names != list(self.tensors):
            raise CheckpointError("manifest", "tensor names do not match the network's canonical order")
        for name, p in net.named_params():
            if p.value.shape != self.tensors[name].shape:
                raise CheckpointError("manifest", f"{name} has shape {self.tensors[name].shape}, expected {p.value.shape}")
            p.value[...] = self.tensors[name]
        net.step_count = self.step_count
        return net


def save_checkpoint(ckpt, path):
    """Write magic, u32 header length, JSON header, then packed little-endian float32 tensors."""
    manifest, offset, blobs = [], 0, []
    for name, arr in ckpt.tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({
        "format_version": ckpt.format_version,
        "stage": ckpt.stage,
        "spec": ckpt.spec.to_dict(),
        "tensors": manifest,
        "step_count": ckpt.step_count,
        "config": ckpt.config,
    }).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError("magic", f"expected {MAGIC!r}, found {raw[:8]!r}")
    if len(raw) < 12:
        raise CheckpointError("length", "file too short for header length")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CheckpointError("length", f"header needs {hlen} bytes, file has {len(raw) - 12}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("header", f"invalid JSON ({exc})") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError("format_version", f"unsupported version {version}")
    if header.get("stage") not in STAGES:
        raise CheckpointError("stage", f"unknown stage {header.get('stage')!r}")
    try:
        spec = NetworkSpec(**header["spec"])
    except (TypeError, ValueError, KeyError) as exc:
        raise CheckpointError("spec", str(exc)) from exc
    data = raw[12 + hlen:]
    expected = sum(4 * int(np.prod(t["shape"])) for t in header["tensors"])
    if len(data) != expected:
        raise CheckpointError("length", f"length mismatch: tensor data is {len(data)} bytes, manifest needs {expected}")
    tensors = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=t["offset"])
        tensors[t["name"]] = arr.astype(np.float32).reshape(t["shape"])
    return StageCheckpoint(header["stage"], spec, tensors, header.get("step_count", 0),
                           header.get("config", {}), version)


@dataclass
class PipelineBundle:
    backbone: StageCheckpoint
    tpm: StageCheckpoint
    tfm: StageCheckpoint

    def __post_init__(self):
        b, p, f = self.backbone.spec, self.tpm.spec, self.tfm.spec
        if (b.role, p.role, f.role) != ("backbone", "texture_predictor", "texture_fusion"):
            raise ShapeError("bundle stages have the wrong network roles")
        if b.scale != f.scale:
            raise ShapeError(f"scale mismatch between checkpoints: backbone x{b.scale}, fusion x{f.scale}")

    @property
    def scale(self):
        return self.backbone.spec.scale

    @cached_property
    def networks(self):
        return self.backbone.to_network(), self.tpm.to_network(), self.tfm.to_network()

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        return cls(*(load_checkpoint(d / STAGE_FILES[s]) for s in STAGES))


# ----------------------------------------------------------------- data flow

def texture_input(output):
    """Sobel map of the backbone output's luma."""
    return sobel_magnitude(rgb_to_luma(output))


def build_fused_input(lr, backbone, tpm, scale):
    """LR image plus the shrunk predicted texture map: (n, 4, h, w)."""
    output = backbone.forward(lr)
    edge = tpm.forward(texture_input(output))
    lr_edge = shrink_edge(np.clip(edge, 0.0, 1.0), scale)
    if lr_edge.shape[2:] != lr.shape[2:]:
        raise ShapeError(f"shrunk texture map {lr_edge.shape} does not match LR input {lr.shape}")
    return concat_channels(lr.astype(lr_edge.dtype, copy=False), lr_edge)


def infer(bundle, lr):
    backbone, tpm, tfm = bundle.networks
    sr = tfm.forward(build_fused_input(lr, backbone, tpm, bundle.scale))
    return np.clip(sr, 0.0, 1.0)


# ------------------------------------------------------------------ training

def load_training_pairs(cfg):
    if not cfg.manifest:
        raise TrainingError("no dataset manifest configured")
    man = load_manifest(cfg.manifest)
    pairs = []
    for i, hr_path in enumerate(man.hr):
        hr = crop_to_multiple(to_tensor(load_image(hr_path)), cfg.scale)
        if man.lr is not None:
            lr = to_tensor(load_image(man.lr[i]))
            if lr.shape[2] * cfg.scale != hr.shape[2] or lr.shape[3] * cfg.scale != hr.shape[3]:
                raise ShapeError(f"{man.lr[i]}: LR size {lr.shape[2:]} is not HR size {hr.shape[2:]} / {cfg.scale}")
        else:
            lr = degrade_bicubic(hr, cfg.scale)
        pairs.append(ImagePair(Path(hr_path).stem, lr, hr))
    return pairs


def make_spec(cfg, stage):
    if stage == "rcan":
        return NetworkSpec.backbone(scale=cfg.scale, **cfg.backbone)
    if stage == "tpm":
        return NetworkSpec.texture_predictor(**cfg.tpm)
    return NetworkSpec.texture_fusion(scale=cfg.scale, **cfg.tfm)


def _epoch_batches(sizes, patch, cfg, rng):
    """Draw this epoch's crops and group them into batches.

    ``sizes`` are the sampling-grid (LR) sizes per image. Returns a list of
    batches, each a list of (image index, y, x).
    """
    crops = []
    for i, (h, w) in enumerate(sizes):
        crops += [(i, y, x) for y, x in random_origins(h, w, patch, cfg.patches_per_image_per_epoch, rng)]
    order = rng.permutation(len(crops))
    crops = [crops[j] for j in order]
    return [crops[k:k + cfg.batch] for k in range(0, len(crops), cfg.batch)]


def _run_stage(stage, cfg, net, sizes, make_batch, epochs):
    """Generic loop: L1 loss, Adam, per-epoch mean loss logged to log.jsonl."""
    rng = np.random.default_rng([cfg.seed, STAGES.index(stage)])
    log_path = None
    if cfg.run_dir is not None:
        cfg.run_dir.mkdir(parents=True, exist_ok=True)
        log_path = cfg.run_dir / "log.jsonl"
    history = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        losses = []
        for b, crops in enumerate(_epoch_batches(sizes, cfg.patch, cfg, rng)):
            x, y = make_batch(crops)
            pred = net.forward(x, record=True)
            loss = l1_loss(pred, y)
            if not np.isfinite(loss.value):
                raise TrainingError(f"{stage}: non-finite loss {loss.value} at epoch {epoch}, batch {b}")
            net.backward(loss.grad_wrt_prediction)
            adam_step(net, cfg.lr)
            losses.append(loss.value)
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        record = {"stage": stage, "epoch": epoch, "mean_loss": mean_loss,
                  "wall_seconds": round(time.perf_counter() - t0, 4)}
        log.info("%s epoch %d mean L1 %.6f", stage, epoch, mean_loss)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
    return history


def _finish(stage, net, cfg, history):
    ckpt = StageCheckpoint.from_network(stage, net, cfg.to_dict())
    ckpt.history = list(history)
    if cfg.run_dir is not None:
        save_checkpoint(ckpt, cfg.run_dir / STAGE_FILES[stage])
    return ckpt


def _check_nonempty(pairs):
    if not pairs:
        raise TrainingError("empty dataset")


def train_backbone(cfg, pairs=None):
    """Stage 1: fit the backbone on (LR patch -> HR patch) with L1."""
    pairs = load_training_pairs(cfg) if pairs is None else pairs
    _check_nonempty(pairs)
    s, p = cfg.scale, cfg.patch
    net = build_network(make_spec(cfg, "rcan"), seed=cfg.seed)

    def make_batch(crops):
        x = np.concatenate([pairs[i].lr[:, :, y:y + p, xx:xx + p] for i, y, xx in crops])
        t = np.concatenate([pairs[i].hr[:, :, s * y:s * (y + p), s * xx:s * (xx + p)] for i, y, xx in crops])
        return x, t

    sizes = [pr.lr.shape[2:] for pr in pairs]
    history = _run_stage("rcan", cfg, net, sizes, make_batch, cfg.epochs_backbone)
    return _finish("rcan", net, cfg, history)


@dataclass
class TextureSample:
    id: str
    edge: np.ndarray  # (1, 1, H, W) Sobel map of the backbone output
    diff: np.ndarray  # (1, 1, H, W) luma(HR) - luma(backbone output)


def build_tpm_dataset(backbone, pairs):
    """Run the frozen backbone over each pair and derive (edge map, residual map) at HR size."""
    net = backbone.to_network() if isinstance(backbone, StageCheckpoint) else backbone
    samples = []
    for pr in pairs:
        output = net.forward(pr.lr)
        samples.append(TextureSample(pr.id, texture_input(output), diff_map(pr.hr, output)))
    return samples


def train_tpm(samples, cfg):
    """Stage 2: fit the texture predictor on HR-size crops of (edge -> residual)."""
    _check_nonempty(samples)
    s, p = cfg.scale, cfg.patch
    net = build_network(make_spec(cfg, "tpm"), seed=cfg.seed)

    def make_batch(crops):
        x = np.concatenate([samples[i].edge[:, :, s * y:s * (y + p), s * xx:s * (xx + p)] for i, y, xx in crops])
        t = np.concatenate([samples[i].diff[:, :, s * y:s * (y + p), s * xx:s * (xx + p)] for i, y, xx in crops])
        return x, t

    sizes = [(sm.edge.shape[2] // s, sm.edge.shape[3] // s) for sm in samples]
    history = _run_stage("tpm", cfg, net, sizes, make_batch, cfg.epochs_tpm)
    return _finish("tpm", net, cfg, history)


def train_tfm(cfg, backbone, tpm, pairs=None):
    """Stage 3: fit the fusion network on (fused 4-channel LR patch -> HR patch).

    The backbone and texture predictor stay frozen.
    """
    pairs = load_training_pairs(cfg) if pairs is None else pairs
    _check_nonempty(pairs)
    s, p = cfg.scale, cfg.patch
    bnet = backbone.to_network() if isinstance(backbone, StageCheckpoint) else backbone
    pnet = tpm.to_network() if isinstance(tpm, StageCheckpoint) else tpm
    net = build_network(make_spec(cfg, "tfm"), seed=cfg.seed)

    def make_batch(crops):
        lr = np.concatenate([pairs[i].lr[:, :, y:y + p, xx:xx + p] for i, y, xx in crops])
        t = np.concatenate([pairs[i].hr[:, :, s * y:s * (y + p), s * xx:s * (xx + p)] for i, y, xx in crops])
        return build_fused_input(lr, bnet, pnet, s), t

    sizes = [pr.lr.shape[2:] for pr in pairs]
    history = _run_stage("tfm", cfg, net, sizes, make_batch, cfg.epochs_tfm)
    return _finish("tfm", net, cfg, history)


def train_all(cfg, pairs=None):
    pairs = load_training_pairs(cfg) if pairs is None else pairs
    backbone = train_backbone(cfg, pairs)
    tpm = train_tpm(build_tpm_dataset(backbone, pairs), cfg)
    tfm = train_tfm(cfg, backbone, tpm, pairs)
    return PipelineBundle(backbone, tpm, tfm)
