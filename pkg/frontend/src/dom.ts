// DOM rendering and keyboard wiring around the view model.

import type { ReviewViewModel, ViewState } from "./viewmodel.js";
import { CHECKLIST_KEYS, CHECKLIST_LABELS, type ChecklistKey } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

export function bind(vm: ReviewViewModel): void {
  const banner = el<HTMLDivElement>("banner");
  const statsBar = el<HTMLDivElement>("stats");
  const screen = el<HTMLDivElement>("screen");
  const overlay = el<HTMLImageElement>("overlay");
  const noOverlay = el<HTMLDivElement>("no-overlay");
  const mode = el<HTMLSpanElement>("mode");
  const sampleId = el<HTMLSpanElement>("sample-id");
  const objectName = el<HTMLSpanElement>("object-name");
  const instruction = el<HTMLDivElement>("instruction");
  const verdict = el<HTMLSpanElement>("verdict");
  const reasoning = el<HTMLDivElement>("reasoning");
  const checklistBox = el<HTMLDivElement>("checklist");
  const editWrap = el<HTMLDivElement>("edit-wrap");
  const editBuffer = el<HTMLTextAreaElement>("edit-buffer");
  const rejectReason = el<HTMLInputElement>("reject-reason");
  const acceptBtn = el<HTMLButtonElement>("accept");
  const rejectBtn = el<HTMLButtonElement>("reject");
  const editBtn = el<HTMLButtonElement>("edit-toggle");
  const submitEditBtn = el<HTMLButtonElement>("submit-edit");
  const retryBtn = el<HTMLButtonElement>("retry");

  // checklist rows: label + explicit yes/no pair per criterion
  const rowInputs = new Map<ChecklistKey, [HTMLInputElement, HTMLInputElement]>();
  for (const key of CHECKLIST_KEYS) {
    const row = document.createElement("div");
    row.className = "check-row";
    const label = document.createElement("span");
    label.textContent = CHECKLIST_LABELS[key];
    row.appendChild(label);
    const pair = document.createElement("span");
    const yes = document.createElement("input");
    yes.type = "radio";
    yes.name = `check-${key}`;
    yes.id = `check-${key}-yes`;
    const yesLabel = document.createElement("label");
    yesLabel.htmlFor = yes.id;
    yesLabel.textContent = "yes";
    const no = document.createElement("input");
    no.type = "radio";
    no.name = `check-${key}`;
    no.id = `check-${key}-no`;
    const noLabel = document.createElement("label");
    noLabel.htmlFor = no.id;
    noLabel.textContent = "no";
    yes.addEventListener("change", () => vm.setChecklist(key, true));
    no.addEventListener("change", () => vm.setChecklist(key, false));
    pair.append(yes, yesLabel, no, noLabel);
    row.appendChild(pair);
    checklistBox.appendChild(row);
    rowInputs.set(key, [yes, no]);
  }

  acceptBtn.addEventListener("click", () => void vm.submit("accepted"));
  rejectBtn.addEventListener("click", () => void vm.submit("rejected"));
  editBtn.addEventListener("click", () => vm.toggleEditing());
  submitEditBtn.addEventListener("click", () => void vm.submit("edited"));
  retryBtn.addEventListener("click", () => void vm.fetchNext());
  editBuffer.addEventListener("input", () => vm.setEditBuffer(editBuffer.value));
  rejectReason.addEventListener("input", () => vm.setRejectReason(rejectReason.value));

  // keyboard-only operation: a/r accept/reject, e edit, n refetch, 1-4 toggle
  document.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement | null;
    if (target && (target.tagName === "TEXTAREA" || target.tagName === "INPUT")) {
      return;
    }
    if (event.key === "a") void vm.submit("accepted");
    else if (event.key === "r") void vm.submit("rejected");
    else if (event.key === "e") vm.toggleEditing();
    else if (event.key === "n") void vm.fetchNext();
    else {
      const index = Number.parseInt(event.key, 10) - 1;
      const key = CHECKLIST_KEYS[index];
      if (key !== undefined) {
        const snapshot = vm.snapshot();
        vm.setChecklist(key, snapshot.checklist[key] !== true);
      }
    }
  });

  vm.subscribe((state) => vmRender(state));

  function vmRender(state: ViewState): void {
    banner.textContent = state.banner ?? "";
    banner.hidden = state.banner === null;
    if (state.stats) {
      statsBar.textContent =
        `pending ${state.stats.pending} · accepted ${state.stats.accepted} · ` +
        `rejected ${state.stats.rejected} · edited ${state.stats.edited} · ` +
        `total ${state.stats.total}`;
    }
    screen.dataset.phase = state.phase;
    retryBtn.hidden = state.phase !== "error";
    if (state.phase === "review" && state.item) {
      mode.textContent = state.item.mode;
      sampleId.textContent = state.item.sample_id;
      objectName.textContent = state.item.object;
      instruction.textContent = state.item.instruction;
      verdict.textContent = state.item.verdict;
      reasoning.textContent = state.item.reasoning;
      if (state.item.overlay_url) {
        overlay.src = state.item.overlay_url;
        overlay.hidden = false;
        noOverlay.hidden = true;
      } else {
        overlay.hidden = true;
        noOverlay.hidden = false;
      }
      for (const key of CHECKLIST_KEYS) {
        const [yes, no] = rowInputs.get(key)!;
        yes.checked = state.checklist[key] === true;
        no.checked = state.checklist[key] === false;
      }
      editWrap.hidden = !state.editing;
      if (editBuffer.value !== state.editBuffer) {
        editBuffer.value = state.editBuffer;
      }
      acceptBtn.disabled = !vm.canSubmit("accepted");
      rejectBtn.disabled = !vm.canSubmit("rejected");
      submitEditBtn.disabled = !vm.canSubmit("edited");
    }
  }
}
