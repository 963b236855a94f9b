from __future__ import annotations

import numpy as np
import pytest

from ocsod.core import (
    BinaryMask,
    Instruction,
    ObservationMode,
    Sample,
    SaliencyMap,
)
from ocsod.maskops import RenderedImage


def checker_image(width: int = 16, height: int = 16, seed: int = 3) -> RenderedImage:
    rng = np.random.default_rng(seed)
    return RenderedImage(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


def block_mask(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def random_mask(rng: np.random.Generator, width: int, height: int, density: float = 0.4) -> BinaryMask:
    bits = rng.random((height, width)) < density
    if not bits.any():
        bits[rng.integers(0, height), rng.integers(0, width)] = True
    return BinaryMask(bits)


def make_sample(
    sample_id: str = "s0",
    mode: ObservationMode = ObservationMode.INTENT,
    subject: str | None = "I want to check and reply to my email",
    mask: BinaryMask | None = None,
    image_ref: str = "img.png",
) -> Sample:
    if mode is ObservationMode.FREE_VIEWING:
        subject = None
    if mask is None:
        mask = block_mask(16, 16, 4, 4, 12, 12)
    return Sample(
        sample_id=sample_id,
        image_ref=image_ref,
        mode=mode,
        instruction=Instruction.build(mode, subject),
        gt_mask=mask,
        source_dataset="synthetic",
        object_name="target",
    )


def build_synthetic_dataset(root, n: int = 10, size: int = 16, seed: int = 5):
    """Write a manifest plus PNG images under ``root``; returns manifest path.

    Ground-truth masks are non-convex (an L-shape) so bbox(GT) != GT.
    """
    from ocsod.core import save_manifest

    rng_local = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    modes = list(ObservationMode)
    samples = []
    for i in range(n):
        image = checker_image(size, size, seed=seed + i)
        image_name = f"images/im{i}.png"
        image.to_png(root / image_name)
        x0 = int(rng_local.integers(0, size // 2))
        y0 = int(rng_local.integers(0, size // 2))
        w = int(rng_local.integers(4, size - size // 2))
        h = int(rng_local.integers(4, size - size // 2))
        bits = np.zeros((size, size), dtype=bool)
        bits[y0 : y0 + h, x0 : x0 + w] = True
        bits[y0 + h // 2 : y0 + h, x0 + w // 2 : x0 + w] = False  # L-shape notch
        mode = modes[i % 3]
        samples.append(
            make_sample(
                f"syn{i}",
                mode=mode,
                subject=None if mode is ObservationMode.FREE_VIEWING else f"subject {i}",
                mask=BinaryMask(bits),
                image_ref=image_name,
            )
        )
    manifest = root / "manifest.jsonl"
    save_manifest(samples, manifest)
    return manifest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240801)


@pytest.fixture
def half_plane_gt() -> BinaryMask:
    return block_mask(8, 8, 0, 0, 8, 4)


@pytest.fixture
def image16() -> RenderedImage:
    return checker_image(16, 16)
