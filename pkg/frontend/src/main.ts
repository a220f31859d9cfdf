/** DOM wiring: binds the query/add-premise forms to the service client.
 * All decisions live in state.ts/render.ts; this file only reads inputs
 * and writes innerHTML. */

import { ApiError, SearchClient } from "./api.js";
import { renderError, renderResults } from "./render.js";
import {
  applyError,
  applyResults,
  beginQuery,
  initialState,
  QueryForm,
  recallHistory,
  UiState,
  validateForm,
  validatePremiseForm,
} from "./state.js";

const baseUrl =
  new URLSearchParams(window.location.search).get("service") ??
  (window as { LEANPREMISE_SERVICE_URL?: string }).LEANPREMISE_SERVICE_URL ??
  "";

const client = new SearchClient(baseUrl);
let ui: UiState = initialState;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function readForm(): QueryForm {
  return {
    state: $<HTMLTextAreaElement>("state").value,
    k: Number($<HTMLInputElement>("k").value),
    rerank: $<HTMLInputElement>("rerank").checked,
    k1: Number($<HTMLInputElement>("k1").value),
  };
}

function redraw() {
  const results = $<HTMLDivElement>("results");
  if (ui.error) {
    results.innerHTML = renderError(ui.error);
  } else if (ui.lastResults) {
    results.innerHTML = renderResults(ui.lastResults);
  } else {
    results.innerHTML = '<p class="empty">submit a proof state to search</p>';
  }
  const history = $<HTMLUListElement>("history");
  history.innerHTML = ui.history
    .map(
      (h, i) =>
        `<li><a href="#" data-index="${i}">${h.form.state.slice(0, 60)}</a></li>`,
    )
    .join("");
  const validation = validateForm(readForm());
  $<HTMLButtonElement>("submit").disabled = validation !== null;
  $<HTMLSpanElement>("form-hint").textContent = validation ?? "";
}

async function submitQuery() {
  const form = readForm();
  if (validateForm(form) !== null) return;
  const { state, seq } = beginQuery(ui);
  ui = state;
  redraw();
  try {
    const results = await client.search(form);
    ui = applyResults(ui, seq, form, results);
  } catch (err) {
    const message =
      err instanceof ApiError ? err.message : `service unreachable: ${String(err)}`;
    ui = applyError(ui, seq, message);
  }
  redraw();
}

async function addPremise() {
  const fields = {
    name: $<HTMLInputElement>("p-name").value,
    module: $<HTMLInputElement>("p-module").value,
    args: $<HTMLTextAreaElement>("p-args")
      .value.split("\n")
      .map((s) => s.trim())
      .filter(Boolean),
    goal: $<HTMLTextAreaElement>("p-goal").value,
  };
  const hint = $<HTMLSpanElement>("premise-hint");
  const invalid = validatePremiseForm(fields);
  if (invalid) {
    hint.textContent = invalid;
    return;
  }
  try {
    const id = await client.addPremise(fields);
    hint.textContent = `created premise #${id}`;
  } catch (err) {
    hint.textContent =
      err instanceof ApiError && err.status === 409
        ? `duplicate name: ${fields.name}`
        : String(err);
  }
}

document.addEventListener("DOMContentLoaded", () => {
  $<HTMLFormElement>("query-form").addEventListener("submit", (e) => {
    e.preventDefault();
    void submitQuery();
  });
  for (const id of ["state", "k", "k1", "rerank"]) {
    $(id).addEventListener("input", redraw);
  }
  $<HTMLButtonElement>("add-premise").addEventListener("click", (e) => {
    e.preventDefault();
    void addPremise();
  });
  $<HTMLDivElement>("results").addEventListener("click", (e) => {
    const target = e.target as HTMLElement;
    if (target.classList.contains("copy")) {
      void navigator.clipboard.writeText(target.dataset.name ?? "");
    }
  });
  $<HTMLUListElement>("history").addEventListener("click", (e) => {
    const target = e.target as HTMLElement;
    if (target.dataset.index !== undefined) {
      e.preventDefault();
      ui = recallHistory(ui, Number(target.dataset.index));
      redraw();
    }
  });
  redraw();
});
