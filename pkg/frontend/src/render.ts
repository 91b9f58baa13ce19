/** Pure HTML rendering of a session state.
 *
 * Everything interpolated into markup is escaped. The only study data
 * that ever reaches this layer is what the service sends a rater:
 * findings, candidate text, and an opaque item id kept in a data
 * attribute for submission.
 */

import type { SessionState } from "./session.js";
import { canSubmit } from "./session.js";
import type { Metric, Score } from "./types.js";
import { METRICS, METRIC_HELP } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function metricRow(
  metric: Metric,
  selected: Score | undefined,
  disabled: boolean,
): string {
  const label = metric.replace("_", " ");
  const buttons = [1, 2, 3, 4, 5]
    .map((value) => {
      const pressed = selected === value ? ' aria-pressed="true" class="picked"' : "";
      const off = disabled ? " disabled" : "";
      return `<button type="button" data-metric="${metric}" data-value="${value}"${pressed}${off}>${value}</button>`;
    })
    .join("");
  return `<div class="metric" title="${escapeHtml(METRIC_HELP[metric])}">
    <span class="metric-name">${escapeHtml(label)}</span>
    <span class="metric-scale">${buttons}</span>
  </div>`;
}

export function render(state: SessionState): string {
  switch (state.kind) {
    case "login":
      return `<form id="login">
        <h1>Rating session</h1>
        ${state.error ? `<p class="error">${escapeHtml(state.error)}</p>` : ""}
        <label>Service URL <input name="baseUrl" placeholder="http://host:port"></label>
        <label>Study id <input name="studyId"></label>
        <label>Rater token <input name="token" type="password"></label>
        <button type="submit">Start</button>
      </form>`;
    case "loading":
      return `<p class="loading">Loading the next item&hellip;</p>`;
    case "rating": {
      const progress = `Item ${state.scored + 1} of ${state.total}`;
      const submitDisabled =
        state.submitting || !canSubmit(state.scores) ? " disabled" : "";
      return `<main data-item="${escapeHtml(state.item.item_id)}">
        <p class="progress">${escapeHtml(progress)}</p>
        <section class="findings"><h2>Findings</h2><pre>${escapeHtml(state.item.findings)}</pre></section>
        <section class="candidate"><h2>Impression to rate</h2><pre>${escapeHtml(state.item.candidate_impression)}</pre></section>
        ${state.item.reference_impression ? `<section class="reference"><h2>Reference impression</h2><pre>${escapeHtml(state.item.reference_impression)}</pre></section>` : ""}
        <section class="scores">
          ${METRICS.map((metric) => metricRow(metric, state.scores[metric], state.submitting)).join("\n")}
        </section>
        ${state.error ? `<p class="error">${escapeHtml(state.error)}</p>` : ""}
        <button id="submit" type="button"${submitDisabled}>Submit rating</button>
      </main>`;
    }
    case "done":
      return `<main class="done">
        <h1>Done</h1>
        <p>You submitted ${state.submitted} rating${state.submitted === 1 ? "" : "s"}. Thank you.</p>
      </main>`;
    case "fatal":
      return `<main class="fatal"><p class="error">${escapeHtml(state.message)}</p></main>`;
  }
}
