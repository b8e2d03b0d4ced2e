import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from wtsr.cli import main
from wtsr.config import ConfigError, TrainConfig, config_from_dict, parse_config, serialize_config
from wtsr.images import (
    ImageFormatError,
    ManifestError,
    load_image,
    load_manifest,
    save_image,
    to_pixels,
    to_tensor,
    write_manifest,
)

# ---- codecs


@pytest.mark.parametrize("ext", [".png", ".ppm"])
def test_rgb_roundtrip_lossless(tmp_path, rng, ext):
    px = rng.integers(0, 256, size=(7, 9, 3), dtype=np.uint8)
    save_image(px, tmp_path / f"a{ext}")
    np.testing.assert_array_equal(load_image(tmp_path / f"a{ext}"), px)


def test_pgm_replicated(tmp_path, rng):
    g = rng.integers(0, 256, size=(5, 4), dtype=np.uint8)
    save_image(g, tmp_path / "g.pgm")
    img = load_image(tmp_path / "g.pgm")
    assert img.shape == (5, 4, 3)
    for c in range(3):
        np.testing.assert_array_equal(img[:, :, c], g)


def test_pnm_header_comments_and_maxval(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n# another\n15\n" + bytes([0, 15]))
    np.testing.assert_array_equal(load_image(tmp_path / "c.pgm")[0, :, 0], [0, 255])


def test_png_modes(tmp_path, rng):
    rgba = rng.integers(0, 256, size=(4, 5, 4), dtype=np.uint8)
    Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), rgba[:, :, :3])
    gray = rng.integers(0, 256, size=(4, 5), dtype=np.uint8)
    Image.fromarray(gray, "L").save(tmp_path / "g.png")
    assert (load_image(tmp_path / "g.png") == gray[:, :, None]).all()


def test_16bit_rejected(tmp_path):
    Image.fromarray(np.full((3, 3), 40000, dtype=np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(ImageFormatError, match="unsupported bit depth"):
        load_image(tmp_path / "d.png")
    (tmp_path / "d.pgm").write_bytes(b"P5 1 1 65535\n" + b"\x00\x01")
    with pytest.raises(ImageFormatError, match="unsupported bit depth"):
        load_image(tmp_path / "d.pgm")


def test_ascii_pnm_rejected(tmp_path):
    (tmp_path / "a.ppm").write_bytes(b"P3 1 1 255\n1 2 3\n")
    with pytest.raises(ImageFormatError, match="P3"):
        load_image(tmp_path / "a.ppm")


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float32, (1, 3, 3, 2), elements=st.floats(0, 1, width=32)))
def test_tensor_image_roundtrip_error(t):
    assert np.abs(to_tensor(to_pixels(t)) - t).max() <= 1 / 510 + 1e-7


def test_to_pixels_clamps():
    t = np.array([-0.3, 0.5, 1.7], dtype=np.float32).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(to_pixels(t)[0, :, 0], [0, 128, 255])


# ---- manifests


def test_manifest_relative_paths(tmp_path, rng):
    save_image(rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8), tmp_path / "x.png")
    (tmp_path / "m.json").write_text(json.dumps({"name": "toy", "scale": 3, "hr": ["x.png"]}))
    man = load_manifest(tmp_path / "m.json")
    assert man.name == "toy" and man.scale == 3 and man.hr == [str(tmp_path / "x.png")]


def test_manifest_errors(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"name": "t", "hr": ["missing.png"]}))
    with pytest.raises(ManifestError, match="missing"):
        load_manifest(tmp_path / "m.json")
    (tmp_path / "k.json").write_text(json.dumps({"hr": ["a"], "extra": 1}))
    with pytest.raises(ManifestError, match="unknown"):
        load_manifest(tmp_path / "k.json")


# ---- config


def test_config_defaults(tmp_path):
    (tmp_path / "c.json").write_text("{}")
    cfg = parse_config(tmp_path / "c.json")
    assert (cfg.scale, cfg.patch, cfg.batch, cfg.lr) == (3, 48, 16, 1e-4)
    assert (cfg.epochs_backbone, cfg.epochs_tpm, cfg.epochs_tfm) == (200, 50, 200)


@pytest.mark.parametrize("doc,path", [
    ({"batch": 0}, "$.batch"),
    ({"learning_rte": 0.1}, "$.learning_rte"),
    ({"scale": 5}, "$.scale"),
    ({"batch": "16"}, "$.batch"),
    ({"lr": -1}, "$.lr"),
    ({"seed": True}, "$.seed"),
    ({"tpm": {"n_grups": 2}}, "$.tpm.n_grups"),
    ({"backbone": {"feature_channels": 0}}, "$.backbone.feature_channels"),
])
def test_config_rejects(doc, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert str(exc.value).startswith(path)


@given(st.builds(
    TrainConfig,
    scale=st.sampled_from([2, 3, 4]),
    patch=st.integers(1, 96),
    batch=st.integers(1, 64),
    lr=st.floats(1e-6, 1.0),
    epochs_backbone=st.integers(0, 500),
    seed=st.integers(0, 2**31),
    tpm=st.fixed_dictionaries({}, optional={"n_groups": st.integers(1, 4), "mean_shift": st.just(False)}),
    name=st.text(st.characters(codec="ascii", categories=["L", "N"]), min_size=1, max_size=8),
))
def test_config_roundtrip(cfg):
    assert config_from_dict(json.loads(serialize_config(cfg))) == cfg


# ---- CLI


def write_rgb(path, px):
    save_image(px, path)
    return str(path)


def test_cli_metric_identity(tmp_path, rng, capsys):
    p = write_rgb(tmp_path / "img.png", rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8))
    assert main(["metric", "--kind", "psnr", p, p]) == 0
    assert capsys.readouterr().out.strip() == "99.0000"
    assert main(["metric", "--kind", "ssim", p, p, "--shave", "0"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0)


def test_cli_texture_map_flat_is_black(tmp_path):
    src = write_rgb(tmp_path / "flat.png", np.full((10, 10, 3), 90, np.uint8))
    assert main(["texture-map", "--input", src, "--output", str(tmp_path / "edge.pgm")]) == 0
    out = load_image(tmp_path / "edge.pgm")
    assert out.shape == (10, 10, 3) and not out.any()


def test_cli_degrade(tmp_path, rng):
    src = write_rgb(tmp_path / "hr.png", rng.integers(0, 256, size=(20, 31, 3), dtype=np.uint8))
    assert main(["degrade", "--input", src, "--scale", "3", "--output", str(tmp_path / "lr.png")]) == 0
    assert load_image(tmp_path / "lr.png").shape == (6, 10, 3)


def test_cli_eval_identity(tmp_path, rng):
    p = write_rgb(tmp_path / "hr.png", rng.integers(0, 256, size=(30, 30, 3), dtype=np.uint8))
    man = write_manifest(tmp_path / "m.json", "toy", [p])
    rc = main(["eval", "--method", "identity", "--manifest", str(man), "--scale", "3",
               "--report", str(tmp_path / "r.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["mean_psnr_db"] == 99.0 and rep["scale"] == 3 and rep["shave"] == 3
    assert (tmp_path / "r.txt").exists()


def test_cli_usage_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["metric", "--kind", "psnr", "a.png"]) == 1
    assert main(["metric", "--kind", "psnr", "a.png", "b.png", "--bogus"]) == 1
    assert main(["eval", "--method", "bundle", "--manifest", "m.json", "--scale", "3", "--report", "r.json"]) == 1


def test_cli_runtime_failure(tmp_path, capsys):
    assert main(["metric", "--kind", "psnr", str(tmp_path / "nope.png"), str(tmp_path / "nope.png")]) == 2
    assert "nope.png" in capsys.readouterr().err
