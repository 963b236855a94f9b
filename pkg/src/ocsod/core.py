"""Canonical data types, the JSONL manifest format, and bit-exact mask RLE.

Every other module consumes these types. Masks are row-major boolean
rasters; saliency maps are row-major float rasters in [0, 1]; boxes are
integer pixel coordinates, origin top-left, half-open on (x1, y1).
All types are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    EmptyMask,
    MaskInvalid,
    NegativeCount,
    ParseError,
    RleError,
    SumMismatch,
)


class ObservationMode(str, Enum):
    """The three observation modes; the wire names match the manifest."""

    FREE_VIEWING = "free_viewing"
    PREFERENCE = "preference"
    INTENT = "intent"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


# Instruction templates. The subject slot is wrapped in literal braces;
# prefix/suffix anchoring makes subject extraction exact.
FREE_VIEWING_INSTRUCTION = (
    "Identify and segment the most salient regions according to visual "
    "context, color contrast, and semantic meaning."
)
PREFERENCE_PREFIX = "Here is the observer's portrait: {"
PREFERENCE_SUFFIX = (
    "}. Identify and segment the most salient regions according to the "
    "observer's interest and preference."
)
INTENT_PREFIX = "Here is the observer's intent: {"
INTENT_SUFFIX = (
    "}. Identify and segment the most salient regions according to this intent."
)


def render_instruction(mode: ObservationMode, subject_text: str | None = None) -> str:
    """Render the full instruction string for a mode.

    Free-viewing takes no subject; preference/intent require a nonempty one.
    """
    if mode is ObservationMode.FREE_VIEWING:
        if subject_text:
            raise ValueError("free-viewing instructions carry no subject text")
        return FREE_VIEWING_INSTRUCTION
    if not subject_text:
        raise ValueError(f"{mode.value} instructions require subject text")
    if mode is ObservationMode.PREFERENCE:
        return PREFERENCE_PREFIX + subject_text + PREFERENCE_SUFFIX
    return INTENT_PREFIX + subject_text + INTENT_SUFFIX


def extract_subject(mode: ObservationMode, rendered_text: str) -> str | None:
    """Recover the subject slot from a rendered instruction; None if the
    text does not match the mode's template."""
    if mode is ObservationMode.FREE_VIEWING:
        return None
    prefix, suffix = (
        (PREFERENCE_PREFIX, PREFERENCE_SUFFIX)
        if mode is ObservationMode.PREFERENCE
        else (INTENT_PREFIX, INTENT_SUFFIX)
    )
    if (
        rendered_text.startswith(prefix)
        and rendered_text.endswith(suffix)
        and len(rendered_text) > len(prefix) + len(suffix)
    ):
        return rendered_text[len(prefix) : -len(suffix)]
    return None


@dataclass(frozen=True)
class Instruction:
    mode: ObservationMode
    subject_text: str | None
    rendered_text: str

    @classmethod
    def build(cls, mode: ObservationMode, subject_text: str | None = None) -> "Instruction":
        return cls(mode, subject_text or None, render_instruction(mode, subject_text))

    def violations(self) -> list[str]:
        """Template-consistency problems; empty list means valid."""
        out: list[str] = []
        if self.mode is ObservationMode.FREE_VIEWING:
            if self.subject_text:
                out.append("mode/template mismatch: free-viewing carries subject text")
            if self.rendered_text != FREE_VIEWING_INSTRUCTION:
                out.append("mode/template mismatch: free-viewing text not the fixed template")
            return out
        if not self.subject_text:
            out.append(f"mode/template mismatch: {self.mode.value} missing subject text")
            return out
        if extract_subject(self.mode, self.rendered_text) != self.subject_text:
            out.append("mode/template mismatch: subject not embedded at the template slot")
        return out


class BinaryMask:
    """Immutable row-major boolean raster of shape (height, width)."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        arr = np.ascontiguousarray(bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and nonempty, got shape {arr.shape}")
        if arr is bits or not arr.flags.owndata:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("BinaryMask is immutable")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.width, self.height, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "BinaryMask":
        return cls(np.asarray(rows, dtype=bool))

    def union(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits | other.bits)

    def intersection(self, other: "BinaryMask") -> "BinaryMask":
        return BinaryMask(self.bits & other.bits)


class SaliencyMap:
    """Immutable row-major float raster with values in [0, 1]."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"map must be 2-D and nonempty, got shape {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("saliency values must lie in [0, 1]")
        if arr is values or not arr.flags.owndata:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("SaliencyMap is immutable")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, SaliencyMap) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.width, self.height, self.values.tobytes()))

    def __repr__(self) -> str:
        return f"SaliencyMap({self.width}x{self.height})"

    @classmethod
    def from_mask(cls, mask: BinaryMask) -> "SaliencyMap":
        return cls(mask.bits.astype(np.float64))

    def binarize(self, threshold: float = 0.5) -> BinaryMask:
        """Foreground = values strictly above the threshold."""
        return BinaryMask(self.values > threshold)


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open integer pixel box: x0 <= x < x1, y0 <= y < y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self.as_tuple()}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative box origin {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def within(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def to_mask(self, width: int, height: int) -> BinaryMask:
        if not self.within(width, height):
            raise ValueError(f"box {self.as_tuple()} exceeds {width}x{height}")
        bits = np.zeros((height, width), dtype=bool)
        bits[self.y0 : self.y1, self.x0 : self.x1] = True
        return BinaryMask(bits)


def clamp_box(
    x0: float, y0: float, x1: float, y1: float, width: int, height: int
) -> BoundingBox | None:
    """Clamp raw box coordinates to image bounds.

    Returns None when the box is degenerate after clamping (zero width or
    height); callers decide whether that is an error.
    """
    cx0 = max(0, min(int(round(x0)), width))
    cy0 = max(0, min(int(round(y0)), height))
    cx1 = max(0, min(int(round(x1)), width))
    cy1 = max(0, min(int(round(y1)), height))
    if cx0 >= cx1 or cy0 >= cy1:
        return None
    return BoundingBox(cx0, cy0, cx1, cy1)


@dataclass(frozen=True)
class Sample:
    """One instruction-mask pair."""

    sample_id: str
    image_ref: str
    mode: ObservationMode
    instruction: Instruction
    gt_mask: BinaryMask
    source_dataset: str = ""
    object_name: str = ""


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[Sample, ...]
    split: Split = Split.TEST

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DuplicateId(s.sample_id)
            seen.add(s.sample_id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def by_mode(self) -> dict[ObservationMode, list[Sample]]:
        out: dict[ObservationMode, list[Sample]] = {m: [] for m in ObservationMode}
        for s in self.samples:
            out[s.mode].append(s)
        return out


# --- run-length encoding --------------------------------------------------


def rle_encode(mask: BinaryMask) -> list[int]:
    """Uncompressed RLE over the row-major bit stream, zero-run first.

    The first count is the length of the leading zero-run (0 when the
    stream starts with a set bit); counts alternate 0-runs and 1-runs and
    always sum to width*height.
    """
    flat = mask.bits.ravel()
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(counts: Sequence[int], width: int, height: int) -> BinaryMask:
    """Exact inverse of :func:`rle_encode`."""
    total = 0
    for c in counts:
        if c < 0:
            raise NegativeCount(int(c))
        total += int(c)
    if total != width * height:
        raise SumMismatch(total, width * height)
    flat = np.empty(total, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        flat[pos : pos + c] = value
        pos += c
        value = not value
    return BinaryMask(flat.reshape(height, width))


# --- validation -----------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Report-style validation outcome; empty violations means valid."""

    sample_id: str
    violations: tuple[str, ...]
    area_ratio: float

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_sample(sample: Sample, image_dims: tuple[int, int] | None = None) -> ValidationReport:
    """Check every Sample invariant; also emits area_ratio.

    image_dims is (width, height) of the referenced image when known.
    """
    violations: list[str] = []
    mask = sample.gt_mask
    if mask.area < 1:
        violations.append("empty ground truth")
    if sample.mode is not sample.instruction.mode:
        violations.append("mode/template mismatch: sample mode differs from instruction mode")
    violations.extend(sample.instruction.violations())
    if image_dims is not None and (mask.width, mask.height) != tuple(image_dims):
        violations.append(
            f"mask {mask.width}x{mask.height} does not match image "
            f"{image_dims[0]}x{image_dims[1]}"
        )
    if not sample.sample_id:
        violations.append("empty sample_id")
    ratio = mask.area / (mask.width * mask.height)
    return ValidationReport(sample.sample_id, tuple(violations), ratio)


AREA_RATIO_BUCKETS = (0.001, 0.01, 0.05, 0.2, 1.0)


def dataset_stats(samples: Iterable[Sample]) -> dict:
    """Per-image pair counts and mask area-ratio distribution."""
    per_image: dict[str, int] = {}
    bucket_counts = [0] * len(AREA_RATIO_BUCKETS)
    mode_counts = {m.value: 0 for m in ObservationMode}
    n = 0
    for s in samples:
        n += 1
        per_image[s.image_ref] = per_image.get(s.image_ref, 0) + 1
        mode_counts[s.mode.value] += 1
        ratio = s.gt_mask.area / (s.gt_mask.width * s.gt_mask.height)
        for i, top in enumerate(AREA_RATIO_BUCKETS):
            if ratio <= top:
                bucket_counts[i] += 1
                break
    counts = list(per_image.values())
    return {
        "pairs": n,
        "images": len(per_image),
        "pairs_per_image_mean": (n / len(per_image)) if per_image else 0.0,
        "pairs_per_image_max": max(counts) if counts else 0,
        "mode_counts": mode_counts,
        "area_ratio_buckets": {
            f"<= {top}": c for top, c in zip(AREA_RATIO_BUCKETS, bucket_counts)
        },
    }


# --- manifest I/O -----------------------------------------------------------

_MODE_NAMES = {m.value for m in ObservationMode}


def sample_to_obj(sample: Sample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "image": sample.image_ref,
        "mode": sample.mode.value,
        "subject_text": sample.instruction.subject_text,
        "instruction": sample.instruction.rendered_text,
        "mask": {
            "w": sample.gt_mask.width,
            "h": sample.gt_mask.height,
            "counts": rle_encode(sample.gt_mask),
        },
        "source": sample.source_dataset,
        "object": sample.object_name,
    }


def sample_to_json_line(sample: Sample) -> str:
    return json.dumps(sample_to_obj(sample), sort_keys=True, ensure_ascii=False)


def sample_from_obj(obj: dict, line: int = 0) -> Sample:
    for key in ("sample_id", "image", "mode", "instruction", "mask"):
        if key not in obj:
            raise ParseError(line, f"missing field {key!r}")
    mode_name = obj["mode"]
    if mode_name not in _MODE_NAMES:
        raise ParseError(line, f"unknown mode {mode_name!r}")
    mode = ObservationMode(mode_name)
    mask_obj = obj["mask"]
    try:
        w, h = int(mask_obj["w"]), int(mask_obj["h"])
        counts = [int(c) for c in mask_obj["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise MaskInvalid(line, f"malformed mask object: {exc}") from exc
    try:
        mask = rle_decode(counts, w, h)
    except RleError as exc:
        raise MaskInvalid(line, str(exc)) from exc
    if mask.area < 1:
        raise MaskInvalid(line, "empty ground truth")
    subject = obj.get("subject_text") or None
    instruction = Instruction(mode, subject, obj["instruction"])
    bad = instruction.violations()
    if bad:
        raise ParseError(line, bad[0])
    return Sample(
        sample_id=str(obj["sample_id"]),
        image_ref=str(obj["image"]),
        mode=mode,
        instruction=instruction,
        gt_mask=mask,
        source_dataset=str(obj.get("source", "")),
        object_name=str(obj.get("object", "")),
    )


def load_manifest(path: str | Path, split: Split = Split.TEST) -> SampleSet:
    """Load a JSONL manifest; every failure carries its 1-based line number."""
    samples: list[Sample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            sample = sample_from_obj(obj, line_no)
            if sample.sample_id in seen:
                raise DuplicateId(sample.sample_id, line_no)
            seen.add(sample.sample_id)
            samples.append(sample)
    return SampleSet(tuple(samples), split)


def save_manifest(samples: Iterable[Sample], path: str | Path) -> int:
    """Write samples as JSONL; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(sample_to_json_line(sample) + "\n")
            n += 1
    return n
