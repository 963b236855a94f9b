// Review-screen state machine. All queue counts come from /api/stats and
// every screen transition follows a 2xx response; the view layer renders
// whatever state this emits and never invents its own.

import {
  ApiClient,
  DecisionConflict,
  DecisionRejected,
  ServiceUnavailable,
} from "./api.js";
import {
  CHECKLIST_KEYS,
  type ChecklistKey,
  type CurationItem,
  type DecisionStatus,
  type Stats,
} from "./types.js";

export type Phase = "loading" | "review" | "empty" | "error";

export type ChecklistState = Record<ChecklistKey, boolean | null>;

export interface ViewState {
  phase: Phase;
  item: CurationItem | null;
  checklist: ChecklistState;
  editing: boolean;
  editBuffer: string;
  rejectReason: string;
  stats: Stats | null;
  banner: string | null;
  submitting: boolean;
}

function freshChecklist(): ChecklistState {
  const state = {} as ChecklistState;
  for (const key of CHECKLIST_KEYS) {
    state[key] = null;
  }
  return state;
}

export class ReviewViewModel {
  private state: ViewState = {
    phase: "loading",
    item: null,
    checklist: freshChecklist(),
    editing: false,
    editBuffer: "",
    rejectReason: "",
    stats: null,
    banner: null,
    submitting: false,
  };

  private listeners: Array<(state: ViewState) => void> = [];

  constructor(
    private readonly api: ApiClient,
    private readonly reviewer: string,
  ) {}

  subscribe(listener: (state: ViewState) => void): void {
    this.listeners.push(listener);
    listener(this.snapshot());
  }

  snapshot(): ViewState {
    return {
      ...this.state,
      checklist: { ...this.state.checklist },
      stats: this.state.stats ? { ...this.state.stats, per_mode: { ...this.state.stats.per_mode } } : null,
    };
  }

  private emit(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    const snapshot = this.snapshot();
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }

  async start(): Promise<void> {
    await this.refreshStats();
    await this.fetchNext();
  }

  async refreshStats(): Promise<void> {
    try {
      const stats = await this.api.stats();
      this.emit({ stats });
    } catch (err) {
      if (err instanceof ServiceUnavailable) {
        this.emit({ banner: err.message });
        return;
      }
      throw err;
    }
  }

  async fetchNext(): Promise<void> {
    this.emit({ phase: "loading", banner: null });
    let response;
    try {
      response = await this.api.queueNext(this.reviewer);
    } catch (err) {
      if (err instanceof ServiceUnavailable) {
        this.emit({ phase: "error", banner: err.message });
        return;
      }
      throw err;
    }
    if (response.empty || response.item === null) {
      this.emit({ phase: "empty", item: null, checklist: freshChecklist() });
      return;
    }
    this.emit({
      phase: "review",
      item: response.item,
      checklist: freshChecklist(),
      editing: false,
      editBuffer: response.item.instruction,
      rejectReason: "",
    });
  }

  setChecklist(key: ChecklistKey, value: boolean): void {
    this.emit({ checklist: { ...this.state.checklist, [key]: value } });
  }

  toggleEditing(): void {
    const editing = !this.state.editing;
    this.emit({
      editing,
      editBuffer: this.state.item ? this.state.item.instruction : "",
    });
  }

  setEditBuffer(text: string): void {
    this.emit({ editBuffer: text });
  }

  setRejectReason(text: string): void {
    this.emit({ rejectReason: text });
  }

  checklistComplete(): boolean {
    return CHECKLIST_KEYS.every((key) => this.state.checklist[key] !== null);
  }

  checklistAllTrue(): boolean {
    return CHECKLIST_KEYS.every((key) => this.state.checklist[key] === true);
  }

  canSubmit(status: DecisionStatus): boolean {
    if (this.state.phase !== "review" || this.state.item === null || this.state.submitting) {
      return false;
    }
    if (!this.checklistComplete()) {
      return false;
    }
    if (status === "accepted" && !this.checklistAllTrue()) {
      return false;
    }
    if (status === "edited" && !this.state.editBuffer.trim()) {
      return false;
    }
    return true;
  }

  async submit(status: DecisionStatus): Promise<void> {
    const item = this.state.item;
    if (item === null || !this.canSubmit(status)) {
      return;
    }
    const checklist: Record<string, boolean> = {};
    for (const key of CHECKLIST_KEYS) {
      checklist[key] = this.state.checklist[key] === true;
    }
    this.emit({ submitting: true, banner: null });
    try {
      await this.api.decide({
        item_id: item.item_id,
        reviewer: this.reviewer,
        status,
        checklist,
        edited_instruction: status === "edited" ? this.state.editBuffer : undefined,
        reject_reason: status === "rejected" ? this.state.rejectReason : undefined,
      });
    } catch (err) {
      if (err instanceof DecisionConflict) {
        // someone else (or an earlier duplicate) decided it: refetch
        this.emit({ submitting: false, banner: "item was already decided; fetching the next one" });
        await this.refreshStats();
        await this.fetchNext();
        return;
      }
      if (err instanceof DecisionRejected) {
        this.emit({ submitting: false, banner: `decision rejected: ${err.message}` });
        return;
      }
      if (err instanceof ServiceUnavailable) {
        this.emit({ submitting: false, phase: "error", banner: err.message });
        return;
      }
      throw err;
    }
    this.emit({ submitting: false });
    await this.refreshStats();
    await this.fetchNext();
  }
}
