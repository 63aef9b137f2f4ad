/** HTML builders for the three screens.
 *
 * Pure string functions: given the state they return markup, so tests
 * can assert on exact output without a DOM. Event wiring happens in
 * main.ts through data-action attributes.
 */

import type { ResultItem, SessionView } from "./api.js";
import {
  UiState,
  canRefineAgain,
  canRetrieve,
  canSendFeedback,
  icsText,
  progressPercent,
  thresholdText,
} from "./state.js";

export function escapeHtml(value: string): string {
  return value
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

function errorBanner(state: UiState): string {
  if (!state.error) {
    return "";
  }
  return `<div class="error" role="alert">${escapeHtml(state.error)}</div>`;
}

function requestScreen(state: UiState): string {
  return `
    <section class="screen screen-request">
      <h1>What are you looking for?</h1>
      ${errorBanner(state)}
      <form data-action="submit-request">
        <textarea name="text" rows="3" required
          placeholder="Describe the whole request in one go"></textarea>
        <input name="location" type="text" placeholder="Location (optional)">
        <button type="submit" ${state.busy ? "disabled" : ""}>Start</button>
      </form>
    </section>`;
}

function frameSummary(view: SessionView): string {
  const chips = view.frame.slots
    .map((slot) => {
      const aspect = slot.aspect ? `: ${escapeHtml(slot.aspect)}` : "";
      return `<span class="chip chip-known">${escapeHtml(slot.label)}${aspect}</span>`;
    })
    .join("");
  const location = view.frame.location
    ? `<span class="chip chip-location">${escapeHtml(view.frame.location)}</span>`
    : "";
  return `
    <div class="frame">
      <span class="frame-intent">${escapeHtml(view.frame.topic_id)} / ${escapeHtml(view.frame.intent_id)}</span>
      ${chips}${location}
    </div>`;
}

function icsBlock(view: SessionView): string {
  const pct = progressPercent(view);
  return `
    <div class="ics-block">
      <div class="bar"><div class="bar-fill" style="width:${pct}%"></div></div>
      <p class="ics-line">
        completion <span class="ics-value">${escapeHtml(icsText(view))}</span>
        of threshold <span class="ics-threshold">${escapeHtml(thresholdText(view))}</span>
        &middot; step ${view.step} of ${view.max_steps}
        &middot; <span class="state state-${escapeHtml(view.state)}">${escapeHtml(view.state)}</span>
      </p>
    </div>`;
}

function refinementScreen(state: UiState): string {
  const view = state.session;
  if (view === null) {
    return requestScreen(state);
  }
  const chips = view.suggestions
    .map((s) => {
      const picked = state.picked.has(s.slot_id) ? " picked" : "";
      return `<button type="button" class="chip chip-suggestion${picked}"
        data-action="toggle" data-slot="${escapeHtml(s.slot_id)}">${escapeHtml(s.label)}</button>`;
    })
    .join("");
  const feedback = canSendFeedback(view)
    ? `<button data-action="feedback" ${state.busy ? "disabled" : ""}>Send choices</button>`
    : "";
  const retrieve = canRetrieve(view)
    ? `<button data-action="retrieve" ${state.busy ? "disabled" : ""}>See results</button>`
    : "";
  const prompt = canSendFeedback(view)
    ? "<p>Would any of these matter to you?</p>"
    : "";
  return `
    <section class="screen screen-refinement">
      <h1>Refining your request</h1>
      ${errorBanner(state)}
      ${frameSummary(view)}
      ${icsBlock(view)}
      ${prompt}
      <div class="suggestions">${chips}</div>
      <div class="actions">${feedback}${retrieve}</div>
    </section>`;
}

function resultRow(item: ResultItem, rank: number): string {
  const badges = item.matched_slots
    .map((slot) => `<span class="badge">${escapeHtml(slot)}</span>`)
    .join("");
  return `
    <li class="result">
      <span class="rank">${rank}</span>
      <a href="${escapeHtml(item.url)}">${escapeHtml(item.title)}</a>
      <span class="score">${escapeHtml(String(item.score))}</span>
      <p>${escapeHtml(item.snippet)}</p>
      <div class="badges">${badges}</div>
    </li>`;
}

function resultsScreen(state: UiState): string {
  const results = state.results;
  const view = state.session;
  if (results === null || view === null) {
    return requestScreen(state);
  }
  const rows = results.suggestions.map((item, i) => resultRow(item, i + 1)).join("");
  const body = results.suggestions.length
    ? `<ol class="results">${rows}</ol>`
    : `<p class="empty">No results came back for this request.</p>`;
  const again = canRefineAgain(view)
    ? `<button data-action="refine-again">Refine again</button>`
    : "";
  return `
    <section class="screen screen-results">
      <h1>Results</h1>
      ${errorBanner(state)}
      ${icsBlock(view)}
      ${body}
      <div class="actions">${again}
        <button data-action="new-request">New request</button></div>
    </section>`;
}

export function renderApp(state: UiState): string {
  switch (state.screen) {
    case "request":
      return requestScreen(state);
    case "refinement":
      return refinementScreen(state);
    case "results":
      return resultsScreen(state);
  }
}
