// Pure HTML renderers for each screen; app.ts mounts them into the page.
// Item views carry only item ids and crop URLs, never method identities.

import type { ItemView, Progress } from "./api.js";
import type { ResultRow } from "./results.js";
import type { SessionState } from "./session.js";

export const INSTRUCTIONS =
  "Two crops of the same photo are shown side by side. " +
  "Select the more visually appealing crop (click it, or use the left/right arrow keys). " +
  "There is no time limit.";

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

export function renderProgress(progress: Progress): string {
  return `<div class="progress">${progress.done} / ${progress.total}</div>`;
}

export function renderItem(item: ItemView, submitting: boolean): string {
  const disabled = submitting ? " disabled" : "";
  return `
  <section class="trial" data-item="${esc(item.itemId)}">
    ${renderProgress(item.progress)}
    <div class="pair">
      <button class="crop-choice" data-choice="left"${disabled}>
        <img src="${esc(item.leftUrl)}" alt="left crop">
      </button>
      <button class="crop-choice" data-choice="right"${disabled}>
        <img src="${esc(item.rightUrl)}" alt="right crop">
      </button>
    </div>
    <p class="hint">&#8592; left &nbsp;&#183;&nbsp; right &#8594;</p>
  </section>`;
}

export function renderDone(progress: Progress): string {
  return `
  <section class="complete">
    <h2>All done</h2>
    <p>You rated ${progress.done} of ${progress.total} pairs. Thank you!</p>
  </section>`;
}

export function renderError(message: string): string {
  return `
  <section class="error">
    <p>Could not reach the study server.</p>
    <pre>${esc(message)}</pre>
    <button id="retry">Retry</button>
  </section>`;
}

export function renderInstructions(): string {
  return `
  <section class="briefing">
    <h1>Crop preference study</h1>
    <p>${INSTRUCTIONS}</p>
    <button id="begin">Begin</button>
  </section>`;
}

export function renderState(state: SessionState): string {
  switch (state.kind) {
    case "idle":
      return renderInstructions();
    case "item":
      return renderItem(state.item, state.submitting);
    case "done":
      return renderDone(state.progress);
    case "error":
      return renderError(state.message);
  }
}

export function renderResultsTable(rows: ResultRow[], totalVotes: number): string {
  if (rows.length === 0) {
    return `<table class="results"><thead><tr><th>Choice</th><th>Baseline (%)</th><th>Ours (%)</th></tr></thead><tbody></tbody></table><p>0 votes collected.</p>`;
  }
  const body = rows
    .map(
      (r) =>
        `<tr><td>${esc(r.label)}</td><td>${r.baselinePercent}</td><td><strong>${r.oursPercent}</strong></td></tr>`,
    )
    .join("");
  return `
  <table class="results">
    <thead><tr><th>Choice</th><th>Baseline (%)</th><th>Ours (%)</th></tr></thead>
    <tbody>${body}</tbody>
  </table>
  <p>${totalVotes} votes collected.</p>`;
}
