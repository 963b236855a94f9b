"""The agentic prediction engine: initial box prediction, segmentation,
and the iterative perceive-reflect-adjust refinement cycle.

One refinement round renders the previous boxes and mask contour onto the
image, asks the MLLM to critique the result, and re-segments with the
corrected boxes. ``k_max`` counts prediction versions, so a run performs
at most ``k_max - 1`` reflections and ``k_max = 1`` disables reflection
entirely. A finish signal keeps the masks that existed before that
reflection; running out of budget keeps the last computed masks.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .clients import (
    STAGE1_SCHEMA,
    STAGE2_SCHEMA,
    AgentMessage,
    MllmClient,
    MllmRequest,
    SegmentorClient,
    parse_agent_message,
)
from .core import (
    BinaryMask,
    BoundingBox,
    Instruction,
    ObservationMode,
    Sample,
    clamp_box,
    rle_encode,
)
from .errors import (
    ClientError,
    CountMismatch,
    DecodeError,
    MalformedReply,
    NoJsonFound,
    NoTargetFound,
    SchemaViolation,
)
from .maskops import ContourSet, RenderedImage, extract_contour, render_overlay

PROMPT_DIR = Path(__file__).parent / "prompts"


def load_prompt(name: str) -> string.Template:
    return string.Template((PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8"))


def prompt_versions() -> dict[str, str]:
    """Asset name -> version suffix, for embedding in the CLI version string."""
    out = {}
    for path in sorted(PROMPT_DIR.glob("*.txt")):
        stem = path.stem
        base, _, version = stem.rpartition("_v")
        if base and version.isdigit():
            out[base] = f"v{version}"
        else:
            out[stem] = "v?"
    return out


@dataclass(frozen=True)
class AgentConfig:
    """Knobs for one agent run; the default k_max = 3 is the accuracy/cost
    sweet spot of the refinement ablation."""

    k_max: int = 3
    reflection_prompt_id: str = "reflection_v1"
    temperature: float = 0.0
    top_p: float = 0.95
    repair_budget: int = 2
    timeout_s: float = 60.0
    include_instruction_in_reflection: bool = False

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.repair_budget < 0:
            raise ValueError("repair_budget must be >= 0")


@dataclass(frozen=True)
class ReflectionOutcome:
    """Finish, or adjust with a corrected nonempty box set."""

    finish: bool
    boxes: tuple[BoundingBox, ...] = ()
    reflection_text: str = ""

    def __post_init__(self):
        if not self.finish and not self.boxes:
            raise ValueError("adjust outcome requires at least one box")


class StopReason(str, Enum):
    FINISH_SIGNAL = "finish_signal"
    BUDGET_EXHAUSTED = "budget_exhausted"
    MODEL_ERROR = "model_error"


@dataclass(frozen=True)
class IterationRecord:
    """One row of the trace; k = 0 is the initial prediction."""

    k: int
    boxes: tuple[BoundingBox, ...]
    masks: tuple[BinaryMask, ...] | None
    rendered: RenderedImage | None
    outcome: ReflectionOutcome | None
    raw_text: str


@dataclass(frozen=True)
class AgentTrace:
    sample_id: str
    iterations: tuple[IterationRecord, ...]
    descriptions: tuple[str, ...]
    final_mask: BinaryMask
    stop_reason: StopReason
    error: str = ""
    warnings: tuple[str, ...] = ()


def union_masks(masks, width: int, height: int) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    for m in masks:
        bits |= m.bits
    return BinaryMask(bits)


# --- structured calls with bounded repair -------------------------------------


def _structured_call(
    mllm: MllmClient,
    base_prompt: str,
    image_png: bytes,
    schema_id: str,
    config: AgentConfig,
) -> tuple[AgentMessage, str]:
    """Call the model, retrying with the parse error appended on failure.

    Transport errors propagate; only parse/schema failures are repaired,
    at most ``repair_budget`` times.
    """
    prompt = base_prompt
    last_error: Exception | None = None
    for _ in range(config.repair_budget + 1):
        request = MllmRequest(
            prompt_text=prompt,
            image_png=image_png,
            schema_id=schema_id,
            temperature=config.temperature,
            top_p=config.top_p,
        )
        reply = mllm.complete(request)
        try:
            return parse_agent_message(reply.text, schema_id), reply.text
        except (NoJsonFound, SchemaViolation) as exc:
            last_error = exc
            prompt = (
                base_prompt
                + f"\n\nYour previous reply could not be parsed ({exc}). "
                "Reply again with exactly one valid JSON object and nothing else."
            )
    raise MalformedReply(
        f"unparseable reply after {config.repair_budget + 1} attempts: {last_error}"
    )


def _clamp_boxes(
    raw_boxes, width: int, height: int
) -> tuple[tuple[BoundingBox, ...], tuple[str, ...]]:
    boxes: list[BoundingBox] = []
    warnings: list[str] = []
    for i, (x0, y0, x1, y1) in enumerate(raw_boxes):
        clamped = clamp_box(x0, y0, x1, y1, width, height)
        if clamped is None:
            warnings.append(f"box {i} {(x0, y0, x1, y1)} degenerate after clamping; dropped")
            continue
        if clamped.as_tuple() != (int(x0), int(y0), int(x1), int(y1)):
            warnings.append(f"box {i} {(x0, y0, x1, y1)} clamped to {clamped.as_tuple()}")
        boxes.append(clamped)
    return tuple(boxes), tuple(warnings)


@dataclass(frozen=True)
class InitialPrediction:
    boxes: tuple[BoundingBox, ...]
    descriptions: tuple[str, ...]
    raw_text: str
    warnings: tuple[str, ...]


def initial_predict(
    image: RenderedImage,
    instruction: Instruction,
    mllm: MllmClient,
    config: AgentConfig = AgentConfig(),
) -> InitialPrediction:
    """Stage 1: boxes plus referring descriptions from the instruction."""
    asset = (
        "stage1_free_viewing_v1"
        if instruction.mode is ObservationMode.FREE_VIEWING
        else "stage1_observer_v1"
    )
    prompt = load_prompt(asset).substitute(
        instruction=instruction.rendered_text,
        width=image.width,
        height=image.height,
    )
    message, raw = _structured_call(mllm, prompt, image.to_png_bytes(), STAGE1_SCHEMA, config)
    if message.no_target:
        raise NoTargetFound("model reported that no object matches the instruction")
    boxes: list[BoundingBox] = []
    descriptions: list[str] = []
    warnings: list[str] = []
    for i, (raw_box, desc) in enumerate(zip(message.boxes, message.descriptions)):
        clamped = clamp_box(*raw_box, image.width, image.height)
        if clamped is None:
            warnings.append(f"box {i} {raw_box} degenerate after clamping; dropped")
            continue
        if clamped.as_tuple() != tuple(int(v) for v in raw_box):
            warnings.append(f"box {i} {raw_box} clamped to {clamped.as_tuple()}")
        boxes.append(clamped)
        descriptions.append(desc)
    if not boxes:
        raise MalformedReply("every predicted box was degenerate after clamping")
    return InitialPrediction(tuple(boxes), tuple(descriptions), raw, tuple(warnings))


def segment(
    image: RenderedImage,
    boxes: tuple[BoundingBox, ...],
    segmentor: SegmentorClient,
    sample_id: str | None = None,
) -> list[BinaryMask]:
    """One image-sized mask per box, order-aligned with the boxes."""
    if not boxes:
        raise ValueError("segment requires at least one box")
    for box in boxes:
        if not box.within(image.width, image.height):
            raise ValueError(f"box {box.as_tuple()} exceeds image bounds")
    masks = segmentor.segment(image, boxes, sample_id)
    if len(masks) != len(boxes):
        raise CountMismatch(len(masks), len(boxes))
    for m in masks:
        if (m.width, m.height) != (image.width, image.height):
            raise DecodeError(
                f"segmentor mask {m.width}x{m.height} does not match image "
                f"{image.width}x{image.height}"
            )
    return masks


def reflect(
    rendered: RenderedImage,
    descriptions: tuple[str, ...],
    config: AgentConfig,
    mllm: MllmClient,
    instruction: Instruction | None = None,
) -> tuple[ReflectionOutcome, str]:
    """Stage 2: critique the rendered prediction; finish or adjust."""
    clause = ""
    if config.include_instruction_in_reflection and instruction is not None:
        clause = f' and the task instruction: "{instruction.rendered_text}"'
    prompt = load_prompt(f"stage2_{config.reflection_prompt_id}").substitute(
        descriptions="\n".join(f"- {d}" for d in descriptions) or "- (none provided)",
        instruction_clause=clause,
    )
    message, raw = _structured_call(mllm, prompt, rendered.to_png_bytes(), STAGE2_SCHEMA, config)
    if message.finish:
        return ReflectionOutcome(True, reflection_text=message.reflection_text), raw
    boxes, _ = _clamp_boxes(message.boxes, rendered.width, rendered.height)
    if not boxes:
        raise MalformedReply("adjust reply had no usable box after clamping")
    return ReflectionOutcome(False, boxes, message.reflection_text), raw


def load_image(sample: Sample, root: Path | None = None) -> RenderedImage:
    path = Path(sample.image_ref)
    if root is not None and not path.is_absolute():
        path = root / path
    return RenderedImage.from_file(path)


def run_agent(
    sample: Sample,
    config: AgentConfig,
    mllm: MllmClient,
    segmentor: SegmentorClient,
    image: RenderedImage | None = None,
    image_root: Path | None = None,
) -> AgentTrace:
    """Full run: initial prediction, then up to k_max - 1 refinement rounds.

    Failures before the first masks exist propagate; a model or segmentor
    error mid-loop closes the trace with ``stop_reason = MODEL_ERROR`` and
    the last successfully computed masks.
    """
    if image is None:
        image = load_image(sample, image_root)
    init = initial_predict(image, sample.instruction, mllm, config)
    boxes = init.boxes
    descriptions = init.descriptions
    masks = tuple(segment(image, boxes, segmentor, sample.sample_id))
    iterations: list[IterationRecord] = [
        IterationRecord(0, boxes, masks, None, None, init.raw_text)
    ]
    final = union_masks(masks, image.width, image.height)
    stop = StopReason.BUDGET_EXHAUSTED
    error = ""
    for k in range(1, config.k_max):
        contour = ContourSet.empty(image.width, image.height)
        for m in masks:
            contour = contour.union(extract_contour(m))
        rendered = render_overlay(image, boxes, contour)
        try:
            outcome, raw = reflect(
                rendered,
                descriptions,
                config,
                mllm,
                instruction=sample.instruction,
            )
        except (ClientError, MalformedReply) as exc:
            stop = StopReason.MODEL_ERROR
            error = str(exc)
            iterations.append(IterationRecord(k, (), None, rendered, None, ""))
            break
        if outcome.finish:
            # keep the masks that existed before this reflection
            stop = StopReason.FINISH_SIGNAL
            iterations.append(IterationRecord(k, (), None, rendered, outcome, raw))
            break
        boxes = outcome.boxes
        try:
            masks = tuple(segment(image, boxes, segmentor, sample.sample_id))
        except ClientError as exc:
            stop = StopReason.MODEL_ERROR
            error = str(exc)
            iterations.append(IterationRecord(k, boxes, None, rendered, outcome, raw))
            break
        iterations.append(IterationRecord(k, boxes, masks, rendered, outcome, raw))
        final = union_masks(masks, image.width, image.height)
    return AgentTrace(
        sample_id=sample.sample_id,
        iterations=tuple(iterations),
        descriptions=descriptions,
        final_mask=final,
        stop_reason=stop,
        error=error,
        warnings=init.warnings,
    )


# --- trace persistence ----------------------------------------------------------


def trace_to_obj(trace: AgentTrace, rendered_refs: dict[int, str] | None = None) -> dict:
    rendered_refs = rendered_refs or {}
    return {
        "sample_id": trace.sample_id,
        "stop_reason": trace.stop_reason.value,
        "error": trace.error,
        "warnings": list(trace.warnings),
        "descriptions": list(trace.descriptions),
        "final_mask": {
            "w": trace.final_mask.width,
            "h": trace.final_mask.height,
            "counts": rle_encode(trace.final_mask),
        },
        "iterations": [
            {
                "k": it.k,
                "boxes": [list(b.as_tuple()) for b in it.boxes],
                "masks": (
                    None
                    if it.masks is None
                    else [
                        {"w": m.width, "h": m.height, "counts": rle_encode(m)}
                        for m in it.masks
                    ]
                ),
                "rendered_image": rendered_refs.get(it.k),
                "outcome": (
                    None
                    if it.outcome is None
                    else {
                        "finish": it.outcome.finish,
                        "boxes": [list(b.as_tuple()) for b in it.outcome.boxes],
                        "reflection_text": it.outcome.reflection_text,
                    }
                ),
                "raw_text": it.raw_text,
            }
            for it in trace.iterations
        ],
    }


def save_trace(trace: AgentTrace, out_dir: str | Path) -> Path:
    """One JSON file per sample; rendered inputs saved as PNGs beside it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs: dict[int, str] = {}
    for it in trace.iterations:
        if it.rendered is not None:
            name = f"{trace.sample_id}_k{it.k}.png"
            it.rendered.to_png(out_dir / name)
            refs[it.k] = name
    path = out_dir / f"{trace.sample_id}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace_to_obj(trace, refs), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
