"""Bicubic x3 baseline over a folder of HR images (Set5 layout), printed as a table."""
import argparse
from pathlib import Path

from wtsr.images import write_manifest
from wtsr.metrics import evaluate_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("hr_dir", type=Path)
    ap.add_argument("--scale", type=int, default=3)
    ap.add_argument("--report", type=Path, default=Path("bicubic_report.json"))
    args = ap.parse_args()
    files = sorted(p.resolve() for p in args.hr_dir.iterdir() if p.suffix.lower() in {".png", ".bmp", ".ppm", ".pgm"})
    if not files:
        raise SystemExit(f"no images in {args.hr_dir}")
    man = write_manifest(args.report.with_suffix(".manifest.json"), args.hr_dir.name, files)
    report = evaluate_benchmark("bicubic", man, args.scale)
    report.write(args.report)
    print(report.to_table())


if __name__ == "__main__":
    main()
