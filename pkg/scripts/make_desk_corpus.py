"""Write the two-image desk corpus (96x96 HR crops from scikit-image samples) plus manifest and config."""
import argparse
import json
from pathlib import Path

from skimage import data

from wtsr.config import TrainConfig, serialize_config
from wtsr.images import save_image, write_manifest

CROPS = {
    "astronaut": (data.astronaut, (slice(100, 196), slice(180, 276))),
    "coffee": (data.coffee, (slice(150, 246), slice(200, 296))),
}
DESK_NET = dict(feature_channels=8, n_groups=1, n_blocks_per_group=2, ca_reduction=4)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="desk", help="output directory")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (loader, (ys, xs)) in CROPS.items():
        path = out / f"{name}.png"
        save_image(loader()[ys, xs], path)
        paths.append(path)
    manifest = write_manifest(out / "manifest.json", "desk", [p.name for p in paths])
    # 2 images x 32 crops / batch 16 = 4 iterations per epoch, 125 epochs = 500 iterations per stage
    cfg = TrainConfig(scale=3, patch=16, batch=16, lr=3e-3, epochs_backbone=125, epochs_tpm=125, epochs_tfm=125,
                      patches_per_image_per_epoch=32, seed=0, backbone=DESK_NET, tpm=DESK_NET, tfm=DESK_NET,
                      manifest=str(manifest.resolve()), output_dir=str((out / "runs").resolve()), name="desk")
    (out / "config.json").write_text(serialize_config(cfg))
    print(json.dumps({"manifest": str(manifest), "config": str(out / "config.json")}))


if __name__ == "__main__":
    main()
