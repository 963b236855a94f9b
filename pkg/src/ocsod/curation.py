"""Manual-curation backend: a persistent review queue of verifier-flagged
samples and the small HTTP API the companion UI drives.

Persistence is a single append-only JSONL event log replayed on startup;
all mutations are serialized through one lock, so concurrent duplicate
decisions resolve to exactly one winner. Leases are in-memory only and
therefore expire naturally on restart.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from pydantic import BaseModel

from .core import (
    FREE_VIEWING_INSTRUCTION,
    Instruction,
    ObservationMode,
    Sample,
    extract_subject,
    sample_from_obj,
    sample_to_obj,
    save_manifest,
)
from .maskops import RenderedImage, extract_contour, mask_to_bbox, render_overlay

CHECKLIST_KEYS = (
    "safety",
    "focus_relevance",
    "unique_object_correspondence",
    "contextual_consistency",
)

STATUS_PENDING = "pending"
STATUS_ACCEPTED = "accepted"
STATUS_REJECTED = "rejected"
STATUS_EDITED = "edited"
DECIDED_STATUSES = (STATUS_ACCEPTED, STATUS_REJECTED, STATUS_EDITED)

DEFAULT_LEASE_TTL_S = 600.0


class DecisionConflict(Exception):
    """Item already decided, or the caller does not hold a live lease."""


class DecisionInvalid(Exception):
    """Checklist incomplete for accept, or edited instruction malformed."""


@dataclass
class CurationItem:
    item_id: str
    sample: Sample
    verdict: str
    reasoning: str
    overlay_ref: str
    status: str = STATUS_PENDING
    checklist: dict | None = None
    reject_reason: str = ""
    edited_instruction: str | None = None
    reviewer_id: str = ""
    decided_at: float | None = None

    def payload(self) -> dict:
        return {
            "item_id": self.item_id,
            "sample_id": self.sample.sample_id,
            "image": self.sample.image_ref,
            "mode": self.sample.mode.value,
            "instruction": self.sample.instruction.rendered_text,
            "subject_text": self.sample.instruction.subject_text,
            "object": self.sample.object_name,
            "verdict": self.verdict,
            "reasoning": self.reasoning,
            "overlay_url": "/" + self.overlay_ref if self.overlay_ref else None,
            "status": self.status,
        }


def validate_edited_instruction(mode: ObservationMode, text: str) -> Instruction:
    """An edited instruction must still match its mode's template."""
    if not text.strip():
        raise DecisionInvalid("edited instruction is empty")
    if mode is ObservationMode.FREE_VIEWING:
        if text != FREE_VIEWING_INSTRUCTION:
            raise DecisionInvalid("free-viewing instruction must equal the fixed template")
        return Instruction.build(mode)
    subject = extract_subject(mode, text)
    if not subject:
        raise DecisionInvalid(f"edited instruction does not match the {mode.value} template")
    return Instruction(mode, subject, text)


class CurationStore:
    """Review queue with an append-only decision log under ``store_dir``."""

    def __init__(
        self,
        store_dir: str | Path,
        lease_ttl_s: float = DEFAULT_LEASE_TTL_S,
        clock: Callable[[], float] = time.time,
    ):
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.media_dir = self.store_dir / "media"
        self.media_dir.mkdir(exist_ok=True)
        self.log_path = self.store_dir / "log.jsonl"
        self.lease_ttl_s = lease_ttl_s
        self.clock = clock
        self._lock = threading.Lock()
        self.items: dict[str, CurationItem] = {}
        self.order: list[str] = []
        self._leases: dict[str, tuple[str, float]] = {}
        self._replay()

    # -- persistence --------------------------------------------------------

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                event = json.loads(raw)
                if event["event"] == "ingest":
                    item = CurationItem(
                        item_id=event["item_id"],
                        sample=sample_from_obj(event["sample"]),
                        verdict=event["verdict"],
                        reasoning=event["reasoning"],
                        overlay_ref=event.get("overlay_ref", ""),
                    )
                    if item.item_id not in self.items:
                        self.items[item.item_id] = item
                        self.order.append(item.item_id)
                elif event["event"] == "decision":
                    item = self.items.get(event["item_id"])
                    if item is not None and item.status == STATUS_PENDING:
                        item.status = event["status"]
                        item.checklist = event.get("checklist")
                        item.reject_reason = event.get("reject_reason", "")
                        item.edited_instruction = event.get("edited_instruction")
                        item.reviewer_id = event.get("reviewer", "")
                        item.decided_at = event.get("decided_at")

    def _append_log(self, event: dict) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")
            fh.flush()

    # -- queue ingestion ------------------------------------------------------

    def ingest(
        self,
        verified_rows: list[dict],
        images: dict[str, RenderedImage] | None = None,
        image_root: str | Path | None = None,
    ) -> int:
        """Add curation-routed rows to the queue; renders overlay PNGs.

        Rows routed to "discard" or "accept" are skipped. Returns the
        number of newly ingested items.
        """
        added = 0
        with self._lock:
            for row in verified_rows:
                if row.get("routed", "curation") != "curation":
                    continue
                item_id = str(row["record_id"])
                if item_id in self.items:
                    continue
                sample = sample_from_obj(row["sample"])
                overlay_ref = ""
                image = self._resolve_image(sample, images, image_root)
                if image is not None:
                    overlay = render_overlay(
                        image,
                        (mask_to_bbox(sample.gt_mask),),
                        extract_contour(sample.gt_mask),
                    )
                    overlay_name = f"{item_id}.png"
                    overlay.to_png(self.media_dir / overlay_name)
                    overlay_ref = f"media/{overlay_name}"
                item = CurationItem(
                    item_id=item_id,
                    sample=sample,
                    verdict=str(row.get("verdict", "Uncertain")),
                    reasoning=str(row.get("reasoning", "")),
                    overlay_ref=overlay_ref,
                )
                self.items[item_id] = item
                self.order.append(item_id)
                self._append_log(
                    {
                        "event": "ingest",
                        "item_id": item_id,
                        "sample": sample_to_obj(sample),
                        "verdict": item.verdict,
                        "reasoning": item.reasoning,
                        "overlay_ref": overlay_ref,
                    }
                )
                added += 1
        return added

    @staticmethod
    def _resolve_image(
        sample: Sample,
        images: dict[str, RenderedImage] | None,
        image_root: str | Path | None,
    ) -> RenderedImage | None:
        if images is not None and sample.image_ref in images:
            return images[sample.image_ref]
        path = Path(sample.image_ref)
        if image_root is not None and not path.is_absolute():
            path = Path(image_root) / path
        if path.exists():
            return RenderedImage.from_file(path)
        return None

    # -- review operations ---------------------------------------------------------

    def next_for(self, reviewer: str) -> CurationItem | None:
        """Oldest pending item not leased to another reviewer; leases it."""
        now = self.clock()
        with self._lock:
            for item_id in self.order:
                item = self.items[item_id]
                if item.status != STATUS_PENDING:
                    continue
                lease = self._leases.get(item_id)
                if lease is not None and lease[0] != reviewer and lease[1] > now:
                    continue
                self._leases[item_id] = (reviewer, now + self.lease_ttl_s)
                return item
        return None

    def decide(
        self,
        item_id: str,
        reviewer: str,
        status: str,
        checklist: dict | None = None,
        edited_instruction: str | None = None,
        reject_reason: str = "",
    ) -> CurationItem:
        """Persist one decision atomically; decided items are immutable."""
        if status not in DECIDED_STATUSES:
            raise DecisionInvalid(f"unknown decision status {status!r}")
        with self._lock:
            item = self.items.get(item_id)
            if item is None:
                raise KeyError(item_id)
            if item.status != STATUS_PENDING:
                raise DecisionConflict(f"item {item_id} already decided ({item.status})")
            lease = self._leases.get(item_id)
            now = self.clock()
            if lease is None or lease[0] != reviewer or lease[1] <= now:
                raise DecisionConflict(f"item {item_id} is not leased by {reviewer!r}")
            checklist = dict(checklist or {})
            if status == STATUS_ACCEPTED:
                missing = [k for k in CHECKLIST_KEYS if checklist.get(k) is not True]
                if missing:
                    raise DecisionInvalid(
                        f"accept requires every checklist item true; failing: {missing}"
                    )
            if status == STATUS_EDITED:
                if not edited_instruction:
                    raise DecisionInvalid("edited decision requires edited_instruction")
                validate_edited_instruction(item.sample.mode, edited_instruction)
            item.status = status
            item.checklist = checklist
            item.reject_reason = reject_reason
            item.edited_instruction = edited_instruction if status == STATUS_EDITED else None
            item.reviewer_id = reviewer
            item.decided_at = now
            self._leases.pop(item_id, None)
            self._append_log(
                {
                    "event": "decision",
                    "item_id": item_id,
                    "status": status,
                    "checklist": checklist,
                    "reject_reason": reject_reason,
                    "edited_instruction": item.edited_instruction,
                    "reviewer": reviewer,
                    "decided_at": now,
                }
            )
            return item

    def stats(self) -> dict:
        with self._lock:
            counts = {
                STATUS_PENDING: 0,
                STATUS_ACCEPTED: 0,
                STATUS_REJECTED: 0,
                STATUS_EDITED: 0,
            }
            per_mode: dict[str, int] = {m.value: 0 for m in ObservationMode}
            for item in self.items.values():
                counts[item.status] += 1
                per_mode[item.sample.mode.value] += 1
            return {
                "pending": counts[STATUS_PENDING],
                "accepted": counts[STATUS_ACCEPTED],
                "rejected": counts[STATUS_REJECTED],
                "edited": counts[STATUS_EDITED],
                "total": len(self.items),
                "per_mode": per_mode,
            }

    def export_accepted(self) -> list[Sample]:
        """Accepted + edited items as samples; edits carry the new text."""
        out = []
        with self._lock:
            for item_id in self.order:
                item = self.items[item_id]
                if item.status == STATUS_ACCEPTED:
                    out.append(item.sample)
                elif item.status == STATUS_EDITED and item.edited_instruction:
                    instruction = validate_edited_instruction(
                        item.sample.mode, item.edited_instruction
                    )
                    out.append(
                        Sample(
                            sample_id=item.sample.sample_id,
                            image_ref=item.sample.image_ref,
                            mode=item.sample.mode,
                            instruction=instruction,
                            gt_mask=item.sample.gt_mask,
                            source_dataset=item.sample.source_dataset,
                            object_name=item.sample.object_name,
                        )
                    )
        return out


def export_accepted_manifest(store: CurationStore, path: str | Path) -> int:
    return save_manifest(store.export_accepted(), path)


# --- HTTP API -------------------------------------------------------------------


class DecisionBody(BaseModel):
    item_id: str
    reviewer: str
    status: str
    checklist: dict = {}
    edited_instruction: str | None = None
    reject_reason: str = ""


def create_app(store: CurationStore, ui_dir: str | Path | None = None):
    """FastAPI app exposing the review API, overlay media, and the UI bundle."""
    from fastapi import FastAPI, HTTPException
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="ocsod curation", docs_url=None, redoc_url=None)

    @app.get("/api/queue/next")
    def queue_next(reviewer: str):
        try:
            item = store.next_for(reviewer)
        except OSError as exc:  # store unavailable
            raise HTTPException(status_code=503, detail=str(exc))
        if item is None:
            return {"empty": True, "item": None}
        return {"empty": False, "item": item.payload()}

    @app.post("/api/decision")
    def decision(body: DecisionBody):
        try:
            item = store.decide(
                item_id=body.item_id,
                reviewer=body.reviewer,
                status=body.status,
                checklist=body.checklist,
                edited_instruction=body.edited_instruction,
                reject_reason=body.reject_reason,
            )
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {body.item_id!r}")
        except DecisionConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except DecisionInvalid as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except OSError as exc:
            raise HTTPException(status_code=503, detail=str(exc))
        return item.payload()

    @app.get("/api/stats")
    def stats():
        return store.stats()

    app.mount("/media", StaticFiles(directory=store.media_dir), name="media")
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:

        @app.get("/")
        def index_placeholder():
            return {
                "service": "ocsod curation",
                "note": "UI bundle not built; see frontend/README for build steps",
            }

    return app
