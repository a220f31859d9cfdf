/** HTML builders for the results list. Pure string functions so ordering
 * and score formatting are unit-testable without a DOM. */

import type { SearchResult } from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Highlight the <VAR>/<GOAL> markers so hypotheses and goals read apart. */
export function renderStatement(statement: string): string {
  const parts = statement.split(/(<VAR>|<GOAL>)/);
  return parts
    .map((p) => {
      if (p === "<VAR>") return '<span class="tok tok-var">VAR</span>';
      if (p === "<GOAL>") return '<span class="tok tok-goal">GOAL</span>';
      return escapeHtml(p);
    })
    .join("");
}

export function moduleBreadcrumb(module: string): string {
  if (!module) return "";
  return module
    .split(".")
    .map((seg) => `<span class="crumb">${escapeHtml(seg)}</span>`)
    .join('<span class="crumb-sep">.</span>');
}

export function renderResult(r: SearchResult): string {
  const rerank =
    r.rerank_probability === undefined
      ? ""
      : `<span class="score rerank" title="re-rank probability">${r.rerank_probability.toFixed(4)}</span>`;
  return `<li class="result" data-rank="${r.final_rank}">
  <div class="result-head">
    <span class="rank">#${r.final_rank}</span>
    <span class="name">${escapeHtml(r.name)}</span>
    <button class="copy" data-name="${escapeHtml(r.name)}" title="copy name">copy</button>
    <span class="score cfr" title="retrieval score">${r.cfr_score.toFixed(4)}</span>
    ${rerank}
  </div>
  <div class="module">${moduleBreadcrumb(r.module)}</div>
  <code class="statement">${renderStatement(r.statement)}</code>
</li>`;
}

export function renderResults(results: SearchResult[]): string {
  if (results.length === 0) return '<p class="empty">no results</p>';
  return `<ol class="results">${results.map(renderResult).join("\n")}</ol>`;
}

export function renderError(message: string): string {
  return `<p class="error">${escapeHtml(message)}</p>`;
}
