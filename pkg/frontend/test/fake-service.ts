// In-memory stand-in implementing the curation service's HTTP contract:
// FIFO queue with per-reviewer leases, exactly-once decisions (409 after),
// 422 on an incomplete accept checklist, and /api/stats conservation.

import type { CurationItem, DecisionBody, Stats } from "../src/types.js";
import { CHECKLIST_KEYS } from "../src/types.js";
import type { FetchLike } from "../src/api.js";

interface StoredItem {
  payload: CurationItem;
  status: "pending" | "accepted" | "rejected" | "edited";
  leasedBy: string | null;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function makeItem(index: number, mode = "intent"): CurationItem {
  return {
    item_id: `item${index}`,
    sample_id: `item${index}`,
    image: `img${index}.png`,
    mode,
    instruction: `Here is the observer's intent: {I want to inspect object ${index}}. Identify and segment the most salient regions according to this intent.`,
    subject_text: `I want to inspect object ${index}`,
    object: `object${index}`,
    verdict: "Uncertain",
    reasoning: `verifier note ${index}`,
    overlay_url: `/media/item${index}.png`,
    status: "pending",
  };
}

export class FakeService {
  items: StoredItem[] = [];
  unavailable = false;
  requestLog: string[] = [];

  constructor(count = 5) {
    for (let i = 0; i < count; i += 1) {
      this.items.push({ payload: makeItem(i), status: "pending", leasedBy: null });
    }
  }

  stats(): Stats {
    const stats: Stats = {
      pending: 0,
      accepted: 0,
      rejected: 0,
      edited: 0,
      total: this.items.length,
      per_mode: {},
    };
    for (const item of this.items) {
      stats[item.status] += 1;
      stats.per_mode[item.payload.mode] = (stats.per_mode[item.payload.mode] ?? 0) + 1;
    }
    return stats;
  }

  decide(body: DecisionBody): Response {
    const item = this.items.find((candidate) => candidate.payload.item_id === body.item_id);
    if (!item) {
      return jsonResponse(404, { detail: `unknown item ${body.item_id}` });
    }
    if (item.status !== "pending") {
      return jsonResponse(409, { detail: `item ${body.item_id} already decided` });
    }
    if (item.leasedBy !== body.reviewer) {
      return jsonResponse(409, { detail: `item ${body.item_id} is not leased by ${body.reviewer}` });
    }
    if (body.status === "accepted") {
      const incomplete = CHECKLIST_KEYS.some((key) => body.checklist[key] !== true);
      if (incomplete) {
        return jsonResponse(422, { detail: "accept requires every checklist item true" });
      }
    }
    if (body.status === "edited" && !body.edited_instruction) {
      return jsonResponse(422, { detail: "edited decision requires edited_instruction" });
    }
    item.status = body.status;
    item.leasedBy = null;
    return jsonResponse(200, { ...item.payload, status: item.status });
  }

  next(reviewer: string): Response {
    for (const item of this.items) {
      if (item.status !== "pending") {
        continue;
      }
      if (item.leasedBy !== null && item.leasedBy !== reviewer) {
        continue;
      }
      item.leasedBy = reviewer;
      return jsonResponse(200, { empty: false, item: item.payload });
    }
    return jsonResponse(200, { empty: true, item: null });
  }

  fetch: FetchLike = async (input, init) => {
    this.requestLog.push(input);
    if (this.unavailable) {
      return jsonResponse(503, { detail: "store unavailable" });
    }
    const url = new URL(input, "http://fake");
    if (url.pathname === "/api/queue/next") {
      return this.next(url.searchParams.get("reviewer") ?? "");
    }
    if (url.pathname === "/api/stats") {
      return jsonResponse(200, this.stats());
    }
    if (url.pathname === "/api/decision" && init?.method === "POST") {
      return this.decide(JSON.parse(String(init.body)) as DecisionBody);
    }
    return jsonResponse(404, { detail: `no route ${url.pathname}` });
  };
}
