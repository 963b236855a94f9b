import { ApiClient } from "./api.js";
import { bind } from "./dom.js";
import { ReviewViewModel } from "./viewmodel.js";

function reviewerId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("reviewer");
  if (fromUrl) {
    window.localStorage.setItem("ocsod-reviewer", fromUrl);
    return fromUrl;
  }
  const stored = window.localStorage.getItem("ocsod-reviewer");
  if (stored) {
    return stored;
  }
  const generated = `reviewer-${Math.random().toString(36).slice(2, 8)}`;
  window.localStorage.setItem("ocsod-reviewer", generated);
  return generated;
}

const reviewer = reviewerId();
document.getElementById("reviewer-id")!.textContent = reviewer;
const vm = new ReviewViewModel(new ApiClient(""), reviewer);
bind(vm);
void vm.start();
