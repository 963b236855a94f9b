"""Pixel-level geometry: IoU, box/mask conversion, contour extraction, and
the deterministic visual-prompt renderer.

Conventions pinned here so golden tests are stable:

* contours are the 4-connectivity inner boundary of a mask;
* boxes are drawn as a 2 px frame just inside the box, in pure green;
* contours are drawn as 2x2 pixel stamps anchored at each boundary pixel
  (stroke width 2), in pure red, clamped to the image;
* draw order is boxes first, contour second, so red wins on collision.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from PIL import Image

from .core import BinaryMask, BoundingBox
from .errors import DimensionMismatch, EmptyMask, OutOfBounds

BOX_COLOR = (0, 255, 0)
CONTOUR_COLOR = (255, 0, 0)
STROKE_WIDTH = 2


class ContourSet:
    """Boundary pixels of a source mask; a subset of the mask's foreground."""

    __slots__ = ("boundary_bits",)

    def __init__(self, boundary_bits: np.ndarray):
        arr = np.ascontiguousarray(boundary_bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("contour raster must be 2-D")
        if arr is boundary_bits or not arr.flags.owndata:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "boundary_bits", arr)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("ContourSet is immutable")

    @property
    def height(self) -> int:
        return self.boundary_bits.shape[0]

    @property
    def width(self) -> int:
        return self.boundary_bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.boundary_bits.sum())

    @classmethod
    def empty(cls, width: int, height: int) -> "ContourSet":
        return cls(np.zeros((height, width), dtype=bool))

    def union(self, other: "ContourSet") -> "ContourSet":
        return ContourSet(self.boundary_bits | other.boundary_bits)


class RenderedImage:
    """Immutable 8-bit RGB raster, shape (height, width, 3)."""

    __slots__ = ("rgb",)

    def __init__(self, rgb: np.ndarray):
        arr = np.ascontiguousarray(rgb, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) uint8, got shape {arr.shape}")
        if arr is rgb or not arr.flags.owndata:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "rgb", arr)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("RenderedImage is immutable")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, RenderedImage) and np.array_equal(self.rgb, other.rgb)

    def __hash__(self):
        return hash(self.rgb.tobytes())

    @classmethod
    def from_file(cls, path) -> "RenderedImage":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB")))

    def to_png(self, path) -> None:
        Image.fromarray(np.asarray(self.rgb)).save(path, format="PNG")

    def to_png_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        Image.fromarray(np.asarray(self.rgb)).save(buf, format="PNG")
        return buf.getvalue()

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}:".encode())
        h.update(self.rgb.tobytes())
        return h.hexdigest()


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 0.0 when both masks are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"{a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return inter / union


def intersection_union(a: BinaryMask, b: BinaryMask) -> tuple[int, int]:
    """Raw |a∩b| and |a∪b| pixel counts (for cumulative-IoU pooling)."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"{a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    return inter, union


def mask_to_bbox(mask: BinaryMask) -> BoundingBox:
    """Smallest half-open box containing all foreground pixels."""
    ys, xs = np.nonzero(mask.bits)
    if ys.size == 0:
        raise EmptyMask("cannot bound an empty mask")
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def area_ratio(mask: BinaryMask) -> float:
    return mask.area / (mask.width * mask.height)


def extract_contour(mask: BinaryMask) -> ContourSet:
    """4-connectivity inner boundary: foreground pixels with at least one
    4-neighbor outside the mask, or lying on the image border."""
    bits = mask.bits
    h, w = bits.shape
    interior = np.ones_like(bits)
    # a pixel is interior only if all four neighbors are foreground
    interior[1:, :] &= bits[:-1, :]
    interior[:-1, :] &= bits[1:, :]
    interior[:, 1:] &= bits[:, :-1]
    interior[:, :-1] &= bits[:, 1:]
    # border pixels are never interior
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    return ContourSet(bits & ~interior)


def _stamp(canvas: np.ndarray, ys: np.ndarray, xs: np.ndarray, color) -> None:
    """Draw 2x2 stamps anchored at (y, x), clamped to the canvas."""
    h, w = canvas.shape[:2]
    for dy in range(STROKE_WIDTH):
        for dx in range(STROKE_WIDTH):
            yy = ys + dy
            xx = xs + dx
            keep = (yy < h) & (xx < w)
            canvas[yy[keep], xx[keep]] = color


def render_overlay(
    image: RenderedImage,
    boxes: Sequence[BoundingBox] = (),
    contour: ContourSet | None = None,
    mask: BinaryMask | None = None,
) -> RenderedImage:
    """Overlay green box frames and a red contour onto a copy of the image.

    All geometry must already lie within the image bounds; pixels outside
    the drawn geometry are byte-identical to the source. The ``mask``
    argument is accepted for callers that carry the source mask alongside
    its contour; only the contour is drawn.
    """
    h, w = image.height, image.width
    for box in boxes:
        if not box.within(w, h):
            raise OutOfBounds(f"box {box.as_tuple()} exceeds image {w}x{h}")
    if contour is not None and (contour.width != w or contour.height != h):
        raise OutOfBounds(
            f"contour raster {contour.width}x{contour.height} does not match image {w}x{h}"
        )
    if mask is not None and (mask.width != w or mask.height != h):
        raise OutOfBounds(
            f"mask {mask.width}x{mask.height} does not match image {w}x{h}"
        )
    canvas = np.array(image.rgb, dtype=np.uint8)
    for box in boxes:
        s = STROKE_WIDTH
        frame = np.zeros((h, w), dtype=bool)
        frame[box.y0 : box.y1, box.x0 : box.x1] = True
        inner_y0, inner_y1 = box.y0 + s, box.y1 - s
        inner_x0, inner_x1 = box.x0 + s, box.x1 - s
        if inner_y0 < inner_y1 and inner_x0 < inner_x1:
            frame[inner_y0:inner_y1, inner_x0:inner_x1] = False
        canvas[frame] = BOX_COLOR
    if contour is not None and contour.count:
        ys, xs = np.nonzero(contour.boundary_bits)
        _stamp(canvas, ys, xs, CONTOUR_COLOR)
    return RenderedImage(canvas)
