"""The five-step data construction pipeline: rule-based filtering, scene
categorization, instruction generation, automated verification, and
handoff to the curation queue; plus deterministic dataset splitting.

Each stage reads and writes a JSONL checkpoint keyed by record id, so a
crashed run re-processes only the missing ids. Checkpoint lines carry no
wall-clock state; a seeded rerun from scratch is byte-identical.
"""

from __future__ import annotations

import fnmatch
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .clients import MllmClient, MllmRequest, extract_first_json
from .core import (
    BinaryMask,
    Instruction,
    ObservationMode,
    Sample,
    SampleSet,
    Split,
    render_instruction,
    rle_decode,
    rle_encode,
    sample_from_obj,
    sample_to_obj,
)
from .errors import (
    BorderLeak,
    MalformedReply,
    MaskInvalid,
    NoJsonFound,
    ParseError,
    RleError,
    SchemaViolation,
)
from .maskops import RenderedImage, area_ratio, extract_contour, render_overlay
from .agent import load_prompt

# Generation-time decoding (diversity); verification runs with the
# backend's own defaults.
GEN_TEMPERATURE = 0.8
GEN_TOP_P = 0.95

DEFAULT_MIN_AREA_RATIO = 0.001
DEFAULT_CLUSTER_THRESHOLD = 6

BLOCKLIST_ASSET = Path(__file__).parent / "assets" / "blocklist_v1.txt"

BORDER_LEAK_MARKERS = ("red border", "red-border", "red outline")


@dataclass(frozen=True)
class CandidateRecord:
    """One pre-annotated object mask awaiting pipeline processing."""

    record_id: str
    image_ref: str
    mask: BinaryMask
    category: str
    part_level: bool = False
    source_dataset: str = ""


def load_blocklist(path: str | Path | None = None) -> tuple[str, ...]:
    path = Path(path) if path else BLOCKLIST_ASSET
    patterns = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            patterns.append(line.lower())
    return tuple(patterns)


@dataclass(frozen=True)
class FilterRules:
    min_area_ratio: float = DEFAULT_MIN_AREA_RATIO
    blocklist: tuple[str, ...] = ()
    cluster_threshold: int = DEFAULT_CLUSTER_THRESHOLD

    def __post_init__(self):
        if not (0 < self.min_area_ratio < 1):
            raise ValueError("min_area_ratio must lie in (0, 1)")

    @classmethod
    def default(cls) -> "FilterRules":
        return cls(blocklist=load_blocklist())

    def category_blocked(self, category: str) -> bool:
        name = category.lower()
        return any(fnmatch.fnmatch(name, pat) for pat in self.blocklist)


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str  # names the triggered rule; "kept" when keep is True


def filter_candidate(
    record: CandidateRecord,
    rules: FilterRules,
    same_category_count: int = 1,
) -> FilterDecision:
    """Keep/Drop with a machine-readable reason.

    ``same_category_count`` is the number of instances of this record's
    category in its image (including itself); the stream helper below
    computes it.
    """
    if area_ratio(record.mask) < rules.min_area_ratio:
        return FilterDecision(False, "too small")
    if rules.category_blocked(record.category):
        return FilterDecision(False, "semantically uninformative")
    if same_category_count >= rules.cluster_threshold:
        return FilterDecision(False, "dense similar-instance cluster")
    return FilterDecision(True, "kept")


def filter_candidates(
    records: Sequence[CandidateRecord], rules: FilterRules
) -> list[tuple[CandidateRecord, FilterDecision]]:
    """Apply the filter to a stream, counting same-category instances
    per image."""
    counts: dict[tuple[str, str], int] = {}
    for rec in records:
        key = (rec.image_ref, rec.category.lower())
        counts[key] = counts.get(key, 0) + 1
    return [
        (rec, filter_candidate(rec, rules, counts[(rec.image_ref, rec.category.lower())]))
        for rec in records
    ]


# --- MLLM call plumbing -------------------------------------------------------


def _json_call(
    mllm: MllmClient,
    prompt: str,
    image_png: bytes,
    validate: Callable[[dict], str | None],
    temperature: float | None,
    top_p: float | None,
    repair_budget: int = 2,
) -> dict:
    """Completion + first-JSON extraction with bounded repair re-prompts.

    ``validate`` returns an error string (triggers a repair) or None.
    """
    attempt_prompt = prompt
    last_error = ""
    for _ in range(repair_budget + 1):
        reply = mllm.complete(
            MllmRequest(attempt_prompt, image_png, temperature=temperature, top_p=top_p)
        )
        try:
            obj = extract_first_json(reply.text)
        except NoJsonFound as exc:
            last_error = str(exc)
        else:
            problem = validate(obj)
            if problem is None:
                return obj
            last_error = problem
        attempt_prompt = (
            prompt
            + f"\n\nYour previous reply was invalid ({last_error}). "
            "Reply again with exactly one valid JSON object."
        )
    raise MalformedReply(f"invalid reply after {repair_budget + 1} attempts: {last_error}")


# --- step 2: categorization --------------------------------------------------


COMPLEXITY_LEVELS = ("low", "medium", "high")


def _validate_categorize(obj: dict) -> str | None:
    if not isinstance(obj.get("saliency_objects"), list):
        return "missing 'saliency_objects' list"
    if not isinstance(obj.get("not_saliency_objects"), list):
        return "missing 'not_saliency_objects' list"
    if obj.get("scene_complexity_level") not in COMPLEXITY_LEVELS:
        return "scene_complexity_level must be low/medium/high"
    for item in obj["saliency_objects"]:
        if not isinstance(item, dict) or "object" not in item:
            return "saliency_objects entries need an 'object' field"
    return None


def _mode_draw(seed: int, record_id: str) -> ObservationMode:
    # per-record stream so assignment is stable under reordering/resume
    rng = random.Random(f"{seed}:{record_id}")
    return ObservationMode.PREFERENCE if rng.random() < 0.5 else ObservationMode.INTENT


def categorize_image(
    image: RenderedImage,
    kept_objects: Sequence[CandidateRecord],
    mllm: MllmClient,
    seed: int = 0,
) -> dict[str, ObservationMode]:
    """Assign an observation mode to every kept object of one image.

    A low-complexity scene with a single unambiguous salient object sends
    that object to free-viewing; part-level objects always go to
    intent-driven; everything else splits 50/50 (seeded) between
    preference and intent.
    """
    if not kept_objects:
        raise ValueError("categorize_image requires at least one kept object")
    prompt = load_prompt("annot_categorize_v1").substitute(
        candidates=", ".join(sorted({r.category for r in kept_objects}))
    )
    obj = _json_call(
        mllm,
        prompt,
        image.to_png_bytes(),
        _validate_categorize,
        GEN_TEMPERATURE,
        GEN_TOP_P,
    )
    salient_names = [str(item["object"]).lower() for item in obj["saliency_objects"]]
    complexity = obj["scene_complexity_level"]
    free_viewing_target: str | None = None
    if complexity == "low" and len(salient_names) == 1:
        for rec in kept_objects:
            if rec.category.lower() == salient_names[0] and not rec.part_level:
                free_viewing_target = rec.record_id
                break
    assignment: dict[str, ObservationMode] = {}
    for rec in kept_objects:
        if rec.record_id == free_viewing_target:
            assignment[rec.record_id] = ObservationMode.FREE_VIEWING
        elif rec.part_level:
            assignment[rec.record_id] = ObservationMode.INTENT
        else:
            assignment[rec.record_id] = _mode_draw(seed, rec.record_id)
    return assignment


# --- step 3: instruction generation -------------------------------------------


def _red_border_png(image: RenderedImage, mask: BinaryMask) -> bytes:
    return render_overlay(image, (), extract_contour(mask)).to_png_bytes()


def _check_border_leak(text: str) -> None:
    lowered = text.lower()
    for marker in BORDER_LEAK_MARKERS:
        if marker in lowered:
            raise BorderLeak(f"generated text mentions the annotation border: {text!r}")


def _validate_preference(obj: dict) -> str | None:
    prefs = obj.get("preferences")
    if not isinstance(prefs, list) or not prefs or not all(isinstance(p, str) and p.strip() for p in prefs):
        return "'preferences' must be a nonempty list of strings"
    return None


def _validate_intent(obj: dict) -> str | None:
    intents = obj.get("intents")
    if not isinstance(intents, list) or not intents or not all(isinstance(i, str) and i.strip() for i in intents):
        return "'intents' must be a nonempty list of strings"
    return None


def generate_instruction(
    image: RenderedImage,
    mask: BinaryMask,
    mode: ObservationMode,
    mllm: MllmClient,
) -> Instruction:
    """Produce the instruction for one object in its assigned mode.

    Free-viewing needs no model call. Preference/intent send the image
    with the object outlined in red and slot the generated text into the
    mode's template; the text must never mention the border.
    """
    if mode is ObservationMode.FREE_VIEWING:
        return Instruction.build(mode)
    if mode is ObservationMode.PREFERENCE:
        obj = _json_call(
            mllm,
            load_prompt("annot_preference_v1").template,
            _red_border_png(image, mask),
            _validate_preference,
            GEN_TEMPERATURE,
            GEN_TOP_P,
        )
        subject = str(obj["preferences"][0]).strip()
    else:
        obj = _json_call(
            mllm,
            load_prompt("annot_intent_v1").template,
            _red_border_png(image, mask),
            _validate_intent,
            GEN_TEMPERATURE,
            GEN_TOP_P,
        )
        subject = str(obj["intents"][0]).strip()
    _check_border_leak(subject)
    return Instruction.build(mode, subject)


# --- step 4: verification ------------------------------------------------------


VERDICTS = ("Yes", "No", "Uncertain")


@dataclass(frozen=True)
class VerificationResult:
    verdict: str  # one of VERDICTS
    reasoning: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")
        if not self.reasoning:
            raise ValueError("reasoning must be nonempty")


def _validate_verify(obj: dict) -> str | None:
    verdict = obj.get("verdict")
    if not isinstance(verdict, str) or verdict.capitalize() not in VERDICTS:
        return "verdict must be Yes/No/Uncertain"
    if not str(obj.get("reasoning", "")).strip():
        return "reasoning must be nonempty"
    return None


def verify_annotation(
    sample: Sample,
    image: RenderedImage,
    mllm: MllmClient,
) -> VerificationResult:
    """Automated check against the predefined error conditions.

    Runs with the backend's default decoding parameters.
    """
    prompt = load_prompt("annot_verify_v1").substitute(
        mode=sample.mode.value,
        instruction=sample.instruction.rendered_text,
        object=sample.object_name or "(unnamed)",
    )
    obj = _json_call(
        mllm,
        prompt,
        _red_border_png(image, sample.gt_mask),
        _validate_verify,
        temperature=None,
        top_p=None,
    )
    return VerificationResult(str(obj["verdict"]).capitalize(), str(obj["reasoning"]).strip())


def route_verdict(result: VerificationResult, auto_accept_no: bool = False) -> str:
    """'discard' | 'curation' | 'accept'.

    The literal protocol sends both "No" (valid) and "Uncertain" to manual
    curation; ``auto_accept_no`` short-circuits valid samples instead.
    """
    if result.verdict == "Yes":
        return "discard"
    if result.verdict == "No" and auto_accept_no:
        return "accept"
    return "curation"


# --- step 5 handoff + splitting --------------------------------------------------


@dataclass(frozen=True)
class SplitResult:
    train: SampleSet
    val: SampleSet
    test: SampleSet

    def test_by_mode(self) -> dict[ObservationMode, list[Sample]]:
        return self.test.by_mode()


def split_dataset(
    samples: Sequence[Sample],
    ratios: tuple[float, float, float],
    seed: int = 0,
) -> SplitResult:
    """Seeded image-grouped split: all pairs of one image land in one split.

    Groups are shuffled with the seed and assigned greedily to the split
    with the largest remaining deficit, so byte-identical outputs follow
    from identical inputs and seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.image_ref, []).append(s)
    keys = sorted(groups)
    random.Random(seed).shuffle(keys)
    total = len(samples)
    quotas = [r * total for r in ratios]
    counts = [0, 0, 0]
    buckets: tuple[list[Sample], list[Sample], list[Sample]] = ([], [], [])
    for key in keys:
        deficits = [quotas[i] - counts[i] for i in range(3)]
        target = max(range(3), key=lambda i: (deficits[i], -i))
        buckets[target].extend(groups[key])
        counts[target] += len(groups[key])
    return SplitResult(
        train=SampleSet(tuple(buckets[0]), Split.TRAIN),
        val=SampleSet(tuple(buckets[1]), Split.VAL),
        test=SampleSet(tuple(buckets[2]), Split.TEST),
    )


# --- candidate I/O and resumable stage runners -----------------------------------


def candidate_from_obj(obj: dict, line: int = 0) -> CandidateRecord:
    for key in ("record_id", "image", "mask", "category"):
        if key not in obj:
            raise ParseError(line, f"missing field {key!r}")
    m = obj["mask"]
    try:
        mask = rle_decode([int(c) for c in m["counts"]], int(m["w"]), int(m["h"]))
    except (KeyError, TypeError, ValueError, RleError) as exc:
        raise MaskInvalid(line, f"bad candidate mask: {exc}") from exc
    return CandidateRecord(
        record_id=str(obj["record_id"]),
        image_ref=str(obj["image"]),
        mask=mask,
        category=str(obj["category"]),
        part_level=bool(obj.get("part_level", False)),
        source_dataset=str(obj.get("source", "")),
    )


def candidate_to_obj(rec: CandidateRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "image": rec.image_ref,
        "mask": {"w": rec.mask.width, "h": rec.mask.height, "counts": rle_encode(rec.mask)},
        "category": rec.category,
        "part_level": rec.part_level,
        "source": rec.source_dataset,
    }


def load_candidates(path: str | Path) -> list[CandidateRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            records.append(candidate_from_obj(obj, line_no))
    return records


class Checkpoint:
    """Append-only JSONL checkpoint keyed by record_id."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.rows: dict[str, dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for raw in fh:
                    raw = raw.strip()
                    if raw:
                        obj = json.loads(raw)
                        self.rows[obj["record_id"]] = obj

    def __contains__(self, record_id: str) -> bool:
        return record_id in self.rows

    def append(self, obj: dict) -> None:
        self.rows[obj["record_id"]] = obj
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


def run_filter_stage(
    records: Sequence[CandidateRecord],
    rules: FilterRules,
    out_path: str | Path,
) -> list[CandidateRecord]:
    """Writes filtered.jsonl; returns the kept records."""
    checkpoint = Checkpoint(out_path)
    decisions = filter_candidates(records, rules)
    kept = []
    for rec, decision in decisions:
        if rec.record_id not in checkpoint:
            checkpoint.append(
                {"record_id": rec.record_id, "keep": decision.keep, "reason": decision.reason}
            )
        if checkpoint.rows[rec.record_id]["keep"]:
            kept.append(rec)
    return kept


def run_categorize_stage(
    records: Sequence[CandidateRecord],
    images: dict[str, RenderedImage],
    mllm: MllmClient,
    seed: int,
    out_path: str | Path,
) -> dict[str, ObservationMode]:
    """Writes categorized.jsonl; returns record_id -> mode."""
    checkpoint = Checkpoint(out_path)
    by_image: dict[str, list[CandidateRecord]] = {}
    for rec in records:
        by_image.setdefault(rec.image_ref, []).append(rec)
    out: dict[str, ObservationMode] = {}
    for image_ref in sorted(by_image):
        group = by_image[image_ref]
        pending = [r for r in group if r.record_id not in checkpoint]
        if pending:
            assignment = categorize_image(images[image_ref], group, mllm, seed)
            for rec in group:
                if rec.record_id not in checkpoint:
                    checkpoint.append(
                        {"record_id": rec.record_id, "mode": assignment[rec.record_id].value}
                    )
        for rec in group:
            out[rec.record_id] = ObservationMode(checkpoint.rows[rec.record_id]["mode"])
    return out


def run_generate_stage(
    records: Sequence[CandidateRecord],
    modes: dict[str, ObservationMode],
    images: dict[str, RenderedImage],
    mllm: MllmClient,
    out_path: str | Path,
) -> list[Sample]:
    """Writes generated.jsonl; returns fully formed samples."""
    checkpoint = Checkpoint(out_path)
    samples = []
    for rec in records:
        mode = modes[rec.record_id]
        if rec.record_id not in checkpoint:
            instruction = generate_instruction(images[rec.image_ref], rec.mask, mode, mllm)
            checkpoint.append(
                {
                    "record_id": rec.record_id,
                    "mode": mode.value,
                    "subject_text": instruction.subject_text,
                    "instruction": instruction.rendered_text,
                }
            )
        row = checkpoint.rows[rec.record_id]
        samples.append(
            Sample(
                sample_id=rec.record_id,
                image_ref=rec.image_ref,
                mode=ObservationMode(row["mode"]),
                instruction=Instruction(
                    ObservationMode(row["mode"]), row["subject_text"], row["instruction"]
                ),
                gt_mask=rec.mask,
                source_dataset=rec.source_dataset,
                object_name=rec.category,
            )
        )
    return samples


def run_verify_stage(
    samples: Sequence[Sample],
    images: dict[str, RenderedImage],
    mllm: MllmClient,
    out_path: str | Path,
    auto_accept_no: bool = False,
) -> list[dict]:
    """Writes verified.jsonl rows carrying the sample, verdict, and routing."""
    checkpoint = Checkpoint(out_path)
    rows = []
    for sample in samples:
        if sample.sample_id not in checkpoint:
            result = verify_annotation(sample, images[sample.image_ref], mllm)
            checkpoint.append(
                {
                    "record_id": sample.sample_id,
                    "sample": sample_to_obj(sample),
                    "verdict": result.verdict,
                    "reasoning": result.reasoning,
                    "routed": route_verdict(result, auto_accept_no),
                }
            )
        rows.append(checkpoint.rows[sample.sample_id])
    return rows


def load_verified_rows(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                rows.append(json.loads(raw))
    return rows
