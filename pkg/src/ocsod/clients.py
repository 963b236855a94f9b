"""Pluggable model backends behind two small interfaces.

``MllmClient.complete`` turns a prompt+image request into raw text;
``SegmentorClient.segment`` turns box prompts into one mask per box.
Production implementations speak HTTP (an OpenAI-compatible
chat-completions API for the MLLM, a minimal JSON wire format for the
segmentor); the deterministic doubles below make every agent and bench
test reproducible without a network.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import BinaryMask, BoundingBox, rle_decode
from .errors import (
    AuthError,
    CountMismatch,
    DecodeError,
    HttpError,
    NoJsonFound,
    SchemaViolation,
    ScriptExhausted,
    SegmentorUnreachable,
    Timeout,
)
from .maskops import RenderedImage, mask_to_bbox

STAGE1_SCHEMA = "stage1"
STAGE2_SCHEMA = "stage2"
FREEFORM_SCHEMA = "freeform"


@dataclass(frozen=True)
class MllmRequest:
    """One prompt+image completion request.

    ``temperature``/``top_p`` of None mean "use the backend's own
    defaults" and are omitted from the HTTP payload.
    """

    prompt_text: str
    image_png: bytes
    schema_id: str = FREEFORM_SCHEMA
    temperature: float | None = 0.0
    top_p: float | None = 0.95

    def __post_init__(self):
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_p is not None and not (0 < self.top_p <= 1):
            raise ValueError("top_p must lie in (0, 1]")

    def payload_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.prompt_text.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.image_png)
        h.update(b"\x00")
        h.update(self.schema_id.encode("utf-8"))
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class MllmReply:
    text: str
    latency_s: float = 0.0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class MllmClient(Protocol):
    def complete(self, request: MllmRequest) -> MllmReply: ...


class SegmentorClient(Protocol):
    def segment(
        self,
        image: RenderedImage,
        boxes: Sequence[BoundingBox],
        sample_id: str | None = None,
    ) -> list[BinaryMask]: ...


# --- structured-reply parsing ----------------------------------------------


def extract_first_json(text: str) -> dict:
    """Pull the first JSON object out of possibly prose-wrapped text."""
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text[idx:])
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    raise NoJsonFound("no JSON object found in model reply")


@dataclass(frozen=True)
class AgentMessage:
    """Parsed structured reply from one of the two agent prompts."""

    schema_id: str
    boxes: tuple[tuple[float, float, float, float], ...] = ()
    descriptions: tuple[str, ...] = ()
    finish: bool = False
    reflection_text: str = ""
    no_target: bool = False


def _coerce_box(raw, index: int) -> tuple[float, float, float, float]:
    if isinstance(raw, dict):
        try:
            vals = (raw["x0"], raw["y0"], raw["x1"], raw["y1"])
        except KeyError as exc:
            raise SchemaViolation(f"box {index} missing key {exc}") from exc
    elif isinstance(raw, (list, tuple)) and len(raw) == 4:
        vals = tuple(raw)
    else:
        raise SchemaViolation(f"box {index} is not a 4-tuple or x0/y0/x1/y1 object")
    try:
        return tuple(float(v) for v in vals)  # type: ignore[return-value]
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"box {index} has non-numeric coordinates") from exc


def parse_agent_message(text: str, schema_id: str) -> AgentMessage:
    """Extract and validate the agent's structured reply.

    Stage 1 expects ``{"boxes": [...], "descriptions": [...]}`` with equal
    nonempty lengths (or ``{"no_target": true}``); stage 2 expects
    ``{"finish": bool, "boxes": [...]?, "reflection_text": str?}`` where
    ``finish = false`` requires at least one box.
    """
    obj = extract_first_json(text)
    if schema_id == STAGE1_SCHEMA:
        if obj.get("no_target") is True:
            return AgentMessage(schema_id, no_target=True)
        raw_boxes = obj.get("boxes")
        raw_descs = obj.get("descriptions")
        if not isinstance(raw_boxes, list) or not raw_boxes:
            raise SchemaViolation("stage-1 reply requires a nonempty 'boxes' list")
        if not isinstance(raw_descs, list) or len(raw_descs) != len(raw_boxes):
            raise SchemaViolation("'descriptions' must match 'boxes' in length")
        boxes = tuple(_coerce_box(b, i) for i, b in enumerate(raw_boxes))
        descs = tuple(str(d) for d in raw_descs)
        return AgentMessage(schema_id, boxes=boxes, descriptions=descs)
    if schema_id == STAGE2_SCHEMA:
        finish = obj.get("finish")
        if not isinstance(finish, bool):
            raise SchemaViolation("stage-2 reply requires a boolean 'finish'")
        reflection = str(obj.get("reflection_text", ""))
        if finish:
            return AgentMessage(schema_id, finish=True, reflection_text=reflection)
        raw_boxes = obj.get("boxes")
        if not isinstance(raw_boxes, list) or not raw_boxes:
            raise SchemaViolation("stage-2 'finish: false' requires a nonempty 'boxes' list")
        boxes = tuple(_coerce_box(b, i) for i, b in enumerate(raw_boxes))
        return AgentMessage(schema_id, boxes=boxes, finish=False, reflection_text=reflection)
    raise SchemaViolation(f"unknown schema id {schema_id!r}")


# --- deterministic test doubles ---------------------------------------------


class ScriptedMllm:
    """Replays canned replies in call order; never consults the image."""

    def __init__(self, replies: Sequence[str], strict: bool = True):
        self.replies = list(replies)
        self.strict = strict
        self.calls: list[MllmRequest] = []

    def complete(self, request: MllmRequest) -> MllmReply:
        idx = len(self.calls)
        self.calls.append(request)
        if idx >= len(self.replies):
            if self.strict:
                raise ScriptExhausted(
                    f"scripted MLLM exhausted after {len(self.replies)} replies"
                )
            idx = len(self.replies) - 1
        return MllmReply(self.replies[idx])


def stage1_reply(boxes: Sequence[Sequence[float]], descriptions: Sequence[str]) -> str:
    return json.dumps({"boxes": [list(b) for b in boxes], "descriptions": list(descriptions)})


def stage2_reply(finish: bool, boxes: Sequence[Sequence[float]] = (), reflection_text: str = "") -> str:
    obj: dict = {"finish": finish}
    if boxes:
        obj["boxes"] = [list(b) for b in boxes]
    if reflection_text:
        obj["reflection_text"] = reflection_text
    return json.dumps(obj)


class OracleSegmentor:
    """Desk-scale stand-in for a real segmentation backend.

    Modes: ``box_fill`` returns the box interior; ``gt_clip`` returns
    box ∩ GT for the registered sample; ``noisy`` applies seeded pixel
    flips on top of gt_clip (same seed, same mask).
    """

    MODES = ("box_fill", "gt_clip", "noisy")

    def __init__(
        self,
        mode: str = "box_fill",
        gt_registry: dict[str, BinaryMask] | None = None,
        flip_rate: float = 0.02,
        seed: int = 0,
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown oracle mode {mode!r}")
        if mode != "box_fill" and gt_registry is None:
            raise ValueError(f"mode {mode!r} requires a gt_registry")
        self.mode = mode
        self.gt_registry = gt_registry or {}
        self.flip_rate = flip_rate
        self.seed = seed
        self.calls: list[tuple[str | None, tuple[tuple[int, int, int, int], ...]]] = []

    def register(self, sample_id: str, gt: BinaryMask) -> None:
        self.gt_registry[sample_id] = gt

    def segment(
        self,
        image: RenderedImage,
        boxes: Sequence[BoundingBox],
        sample_id: str | None = None,
    ) -> list[BinaryMask]:
        self.calls.append((sample_id, tuple(b.as_tuple() for b in boxes)))
        w, h = image.width, image.height
        out: list[BinaryMask] = []
        for i, box in enumerate(boxes):
            base = box.to_mask(w, h)
            if self.mode == "box_fill":
                out.append(base)
                continue
            if sample_id is None or sample_id not in self.gt_registry:
                raise KeyError(f"no ground truth registered for sample {sample_id!r}")
            gt = self.gt_registry[sample_id]
            clipped = base.bits & gt.bits
            if self.mode == "gt_clip":
                out.append(BinaryMask(clipped))
                continue
            digest = hashlib.sha256(f"{self.seed}:{sample_id}:{i}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            flips = rng.random(clipped.shape) < self.flip_rate
            out.append(BinaryMask(clipped ^ flips))
        return out


class OracleMllm:
    """MLLM double driven by a ground-truth registry.

    ``perfect`` answers stage 1 with the tight GT box and finishes on the
    first reflection. ``improving`` starts from a shrunken off-center box
    and expands it toward the GT box on every reflection, never finishing;
    with a gt_clip segmentor this makes per-iteration IoU non-decreasing.
    """

    def __init__(
        self,
        gt_registry: dict[str, BinaryMask],
        behavior: str = "perfect",
        start_shrink: float = 0.6,
        step: float = 0.5,
    ):
        if behavior not in ("perfect", "improving"):
            raise ValueError(f"unknown behavior {behavior!r}")
        self.gt_registry = gt_registry
        self.behavior = behavior
        self.start_shrink = start_shrink
        self.step = step
        self.calls: list[MllmRequest] = []
        self._state: dict[str, tuple[float, float, float, float]] = {}
        self._current: str | None = None

    def bind(self, sample_id: str) -> "OracleMllm":
        """Point subsequent calls at one sample (requests carry no id)."""
        self._current = sample_id
        return self

    def _gt_box(self) -> BoundingBox:
        if self._current is None:
            raise KeyError("OracleMllm.bind(sample_id) must be called first")
        return mask_to_bbox(self.gt_registry[self._current])

    def complete(self, request: MllmRequest) -> MllmReply:
        self.calls.append(request)
        target = self._gt_box()
        if request.schema_id == STAGE1_SCHEMA:
            if self.behavior == "perfect":
                box = [target.x0, target.y0, target.x1, target.y1]
            else:
                bw, bh = target.width, target.height
                x0 = target.x0 + bw * self.start_shrink * 0.5
                y0 = target.y0 + bh * self.start_shrink * 0.5
                x1 = max(x0 + 1, target.x1 - bw * self.start_shrink * 0.5)
                y1 = max(y0 + 1, target.y1 - bh * self.start_shrink * 0.5)
                box = [x0, y0, x1, y1]
                self._state[self._current] = tuple(box)  # type: ignore[arg-type]
            return MllmReply(stage1_reply([box], ["the target object"]))
        if request.schema_id == STAGE2_SCHEMA:
            if self.behavior == "perfect":
                return MllmReply(stage2_reply(True, reflection_text="prediction matches"))
            cur = self._state.get(self._current, (target.x0, target.y0, target.x1, target.y1))
            nxt = (
                cur[0] + (target.x0 - cur[0]) * self.step,
                cur[1] + (target.y0 - cur[1]) * self.step,
                cur[2] + (target.x1 - cur[2]) * self.step,
                cur[3] + (target.y1 - cur[3]) * self.step,
            )
            self._state[self._current] = nxt
            return MllmReply(stage2_reply(False, [list(nxt)], "expanding toward the target"))
        raise SchemaViolation(f"unknown schema id {request.schema_id!r}")


# --- HTTP backends ------------------------------------------------------------


ENV_MLLM_URL = "OCSOD_MLLM_URL"
ENV_MLLM_KEY = "OCSOD_MLLM_KEY"
ENV_MLLM_MODEL = "OCSOD_MLLM_MODEL"
ENV_SEG_URL = "OCSOD_SEG_URL"


@dataclass
class ClientSettings:
    """Endpoint/timeout configuration; env first, TOML file overrides."""

    mllm_url: str = ""
    mllm_key: str = ""
    mllm_model: str = ""
    seg_url: str = ""
    timeout_s: float = 60.0
    retries: int = 2

    @classmethod
    def from_sources(cls, toml_path: str | Path | None = None, env=os.environ) -> "ClientSettings":
        settings = cls(
            mllm_url=env.get(ENV_MLLM_URL, ""),
            mllm_key=env.get(ENV_MLLM_KEY, ""),
            mllm_model=env.get(ENV_MLLM_MODEL, ""),
            seg_url=env.get(ENV_SEG_URL, ""),
        )
        if toml_path:
            try:
                import tomllib  # type: ignore[import-not-found]
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib  # type: ignore[no-redef]
            with open(toml_path, "rb") as fh:
                data = tomllib.load(fh)
            section = data.get("clients", data)
            for key in ("mllm_url", "mllm_key", "mllm_model", "seg_url", "timeout_s", "retries"):
                if key in section:
                    setattr(settings, key, section[key])
        return settings


class HttpMllmClient:
    """OpenAI-compatible chat-completions transport with one inline image."""

    def __init__(self, settings: ClientSettings):
        if not settings.mllm_url:
            raise ValueError("mllm_url is not configured")
        self.settings = settings

    def complete(self, request: MllmRequest) -> MllmReply:
        import requests

        payload: dict = {
            "model": self.settings.mllm_model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": request.prompt_text},
                        {
                            "type": "image_url",
                            "image_url": {
                                "url": "data:image/png;base64,"
                                + base64.b64encode(request.image_png).decode("ascii")
                            },
                        },
                    ],
                }
            ],
        }
        if request.temperature is not None:
            payload["temperature"] = request.temperature
        if request.top_p is not None:
            payload["top_p"] = request.top_p
        headers = {"Content-Type": "application/json"}
        if self.settings.mllm_key:
            headers["Authorization"] = f"Bearer {self.settings.mllm_key}"
        url = self.settings.mllm_url.rstrip("/") + "/chat/completions"
        last_exc: Exception | None = None
        for _ in range(self.settings.retries + 1):
            start = time.monotonic()
            try:
                resp = requests.post(
                    url, json=payload, headers=headers, timeout=self.settings.timeout_s
                )
            except requests.exceptions.RequestException as exc:
                last_exc = exc
                continue
            latency = time.monotonic() - start
            if resp.status_code in (401, 403):
                raise AuthError(f"authentication failed (HTTP {resp.status_code})")
            if resp.status_code >= 400:
                raise HttpError(resp.status_code, resp.text[:200])
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise HttpError(resp.status_code, f"malformed completion payload: {exc}")
            usage = data.get("usage", {})
            return MllmReply(
                text=text,
                latency_s=latency,
                prompt_tokens=usage.get("prompt_tokens"),
                completion_tokens=usage.get("completion_tokens"),
            )
        raise Timeout(f"MLLM endpoint unreachable after {self.settings.retries + 1} attempts: {last_exc}")


class HttpSegmentorClient:
    """POSTs a PNG plus box prompts; expects one RLE mask per box back."""

    def __init__(self, settings: ClientSettings):
        if not settings.seg_url:
            raise ValueError("seg_url is not configured")
        self.settings = settings

    def segment(
        self,
        image: RenderedImage,
        boxes: Sequence[BoundingBox],
        sample_id: str | None = None,
    ) -> list[BinaryMask]:
        import requests

        payload = {
            "image": base64.b64encode(image.to_png_bytes()).decode("ascii"),
            "boxes": [list(b.as_tuple()) for b in boxes],
        }
        url = self.settings.seg_url.rstrip("/") + "/segment"
        last_exc: Exception | None = None
        for _ in range(self.settings.retries + 1):
            try:
                resp = requests.post(url, json=payload, timeout=self.settings.timeout_s)
            except requests.exceptions.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 400:
                raise SegmentorUnreachable(f"segmentor returned HTTP {resp.status_code}")
            try:
                raw_masks = resp.json()["masks"]
            except (ValueError, KeyError) as exc:
                raise DecodeError(f"malformed segmentor payload: {exc}") from exc
            if len(raw_masks) != len(boxes):
                raise CountMismatch(len(raw_masks), len(boxes))
            out = []
            for m in raw_masks:
                try:
                    out.append(rle_decode([int(c) for c in m["counts"]], int(m["w"]), int(m["h"])))
                except Exception as exc:
                    raise DecodeError(f"bad RLE mask in segmentor reply: {exc}") from exc
            return out
        raise SegmentorUnreachable(
            f"segmentor unreachable after {self.settings.retries + 1} attempts: {last_exc}"
        )
