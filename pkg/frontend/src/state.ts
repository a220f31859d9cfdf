/** Pure UI state logic: form validation, stale-response sequencing, and
 * in-session query history. No DOM access here. */

import type { SearchResult } from "./api.js";

export interface QueryForm {
  state: string;
  k: number;
  rerank: boolean;
  k1: number;
}

export interface HistoryEntry {
  form: QueryForm;
  results: SearchResult[];
}

export interface UiState {
  history: HistoryEntry[];
  lastResults: SearchResult[] | null;
  error: string | null;
  inFlight: number | null; // sequence number of the outstanding request
  nextSeq: number;
}

export const initialState: UiState = {
  history: [],
  lastResults: null,
  error: null,
  inFlight: null,
  nextSeq: 0,
};

export function validateForm(form: QueryForm): string | null {
  if (!form.state.trim()) return "enter a proof state";
  if (form.k < 1 || form.k > 50) return "k must be between 1 and 50";
  if (form.rerank && form.k > form.k1) return "k must not exceed k1 when re-ranking";
  return null;
}

export function canSubmit(form: QueryForm): boolean {
  return validateForm(form) === null;
}

export function beginQuery(state: UiState): { state: UiState; seq: number } {
  const seq = state.nextSeq;
  return {
    state: { ...state, inFlight: seq, nextSeq: seq + 1, error: null },
    seq,
  };
}

/** Apply a response; stale responses (superseded by a newer submit) are
 * dropped so the view always reflects the latest query. */
export function applyResults(
  state: UiState,
  seq: number,
  form: QueryForm,
  results: SearchResult[],
): UiState {
  if (state.inFlight !== seq) return state;
  return {
    ...state,
    inFlight: null,
    error: null,
    lastResults: results,
    history: [...state.history, { form, results }],
  };
}

export function applyError(state: UiState, seq: number, message: string): UiState {
  if (state.inFlight !== seq) return state;
  return { ...state, inFlight: null, error: message };
}

export function recallHistory(state: UiState, index: number): UiState {
  const entry = state.history[index];
  if (!entry) return state;
  return { ...state, lastResults: entry.results, error: null };
}

export function validatePremiseForm(fields: {
  name: string;
  goal: string;
}): string | null {
  if (!fields.name.trim()) return "premise name is required";
  if (!fields.goal.trim()) return "premise goal is required";
  return null;
}
