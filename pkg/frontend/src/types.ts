// Wire types mirroring the curation service's JSON API.

export const CHECKLIST_KEYS = [
  "safety",
  "focus_relevance",
  "unique_object_correspondence",
  "contextual_consistency",
] as const;

export type ChecklistKey = (typeof CHECKLIST_KEYS)[number];

export const CHECKLIST_LABELS: Record<ChecklistKey, string> = {
  safety: "Safety",
  focus_relevance: "Focus relevance",
  unique_object_correspondence: "Unique object correspondence",
  contextual_consistency: "Contextual consistency",
};

export interface CurationItem {
  item_id: string;
  sample_id: string;
  image: string;
  mode: string;
  instruction: string;
  subject_text: string | null;
  object: string;
  verdict: string;
  reasoning: string;
  overlay_url: string | null;
  status: string;
}

export interface QueueNextResponse {
  empty: boolean;
  item: CurationItem | null;
}

export interface Stats {
  pending: number;
  accepted: number;
  rejected: number;
  edited: number;
  total: number;
  per_mode: Record<string, number>;
}

export type DecisionStatus = "accepted" | "rejected" | "edited";

export interface DecisionBody {
  item_id: string;
  reviewer: string;
  status: DecisionStatus;
  checklist: Record<string, boolean>;
  edited_instruction?: string;
  reject_reason?: string;
}
