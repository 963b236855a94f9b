#!/usr/bin/env python3
"""Generate a synthetic manifest + images for desk-scale experiments.

Ground-truth masks are L-shaped (non-convex) so box-clipped oracle
segmentations are nontrivial. Output layout:

    <out>/images/im*.png
    <out>/manifest.jsonl
"""

import argparse
from pathlib import Path

import numpy as np

from ocsod.core import (
    BinaryMask,
    Instruction,
    ObservationMode,
    Sample,
    save_manifest,
)
from ocsod.maskops import RenderedImage

SUBJECTS = {
    ObservationMode.PREFERENCE: [
        "A foodie who loves freshly baked goods",
        "A technology enthusiast drawn to gadgets",
        "An avid reader who collects paperbacks",
        "A gardener fond of leafy plants",
    ],
    ObservationMode.INTENT: [
        "I want to check and reply to my email",
        "I want to prepare breakfast",
        "I want to water the plants",
        "I want to take some notes",
    ],
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("synthetic"))
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--size", type=int, default=24)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "images").mkdir(exist_ok=True)
    modes = list(ObservationMode)
    samples = []
    for i in range(args.n):
        size = args.size
        rgb = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        image_name = f"images/im{i}.png"
        RenderedImage(rgb).to_png(args.out / image_name)
        x0 = int(rng.integers(0, size // 2))
        y0 = int(rng.integers(0, size // 2))
        w = int(rng.integers(4, size - size // 2))
        h = int(rng.integers(4, size - size // 2))
        bits = np.zeros((size, size), dtype=bool)
        bits[y0 : y0 + h, x0 : x0 + w] = True
        bits[y0 + h // 2 : y0 + h, x0 + w // 2 : x0 + w] = False
        mode = modes[i % 3]
        subject = None
        if mode is not ObservationMode.FREE_VIEWING:
            pool = SUBJECTS[mode]
            subject = pool[int(rng.integers(0, len(pool)))]
        samples.append(
            Sample(
                sample_id=f"syn{i}",
                image_ref=image_name,
                mode=mode,
                instruction=Instruction.build(mode, subject),
                gt_mask=BinaryMask(bits),
                source_dataset="synthetic",
                object_name=f"object{i}",
            )
        )
    manifest = args.out / "manifest.jsonl"
    n = save_manifest(samples, manifest)
    print(f"wrote {n} samples to {manifest}")


if __name__ == "__main__":
    main()
