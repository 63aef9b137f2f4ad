/** Screen state and display helpers.
 *
 * The UI mirrors the server: which screen shows and which actions are
 * offered derive from fields the service sent back, never from local
 * recomputation. Scores are formatted with String() so the page shows
 * exactly what the API returned.
 */

import type { RetrieveResponse, SessionView } from "./api.js";

export type Screen = "request" | "refinement" | "results";

export interface UiState {
  screen: Screen;
  session: SessionView | null;
  results: RetrieveResponse | null;
  picked: Set<string>;
  error: string | null;
  busy: boolean;
}

export function initialState(): UiState {
  return {
    screen: "request",
    session: null,
    results: null,
    picked: new Set(),
    error: null,
    busy: false,
  };
}

export function withSession(state: UiState, view: SessionView): UiState {
  return {
    ...state,
    screen: "refinement",
    session: view,
    picked: new Set(),
    error: null,
    busy: false,
  };
}

export function withResults(state: UiState, results: RetrieveResponse): UiState {
  const session =
    state.session === null ? null : { ...state.session, state: results.state };
  return { ...state, screen: "results", session, results, error: null, busy: false };
}

export function withError(state: UiState, message: string): UiState {
  return { ...state, error: message, busy: false };
}

export function backToRefinement(state: UiState): UiState {
  if (state.session === null) {
    return state;
  }
  return { ...state, screen: "refinement", error: null };
}

/** Toggle a suggestion chip; ids outside the current slate are ignored. */
export function togglePick(state: UiState, slotId: string): UiState {
  const shown = new Set((state.session?.suggestions ?? []).map((s) => s.slot_id));
  if (!shown.has(slotId)) {
    return state;
  }
  const picked = new Set(state.picked);
  if (picked.has(slotId)) {
    picked.delete(slotId);
  } else {
    picked.add(slotId);
  }
  return { ...state, picked };
}

/** Split the current slate for feedback: unpicked suggestions are
 * reported as rejected so the server's log covers the whole slate. */
export function feedbackSplit(state: UiState): { selected: string[]; rejected: string[] } {
  const suggestions = state.session?.suggestions ?? [];
  const selected = suggestions
    .filter((s) => state.picked.has(s.slot_id))
    .map((s) => s.slot_id);
  const rejected = suggestions
    .filter((s) => !state.picked.has(s.slot_id))
    .map((s) => s.slot_id);
  return { selected, rejected };
}

export function icsText(view: SessionView): string {
  return String(view.ics);
}

export function thresholdText(view: SessionView): string {
  return String(view.threshold);
}

/** Bar width only; the numbers beside the bar stay verbatim. */
export function progressPercent(view: SessionView): number {
  if (view.threshold <= 0) {
    return 100;
  }
  return Math.min(100, (view.ics / view.threshold) * 100);
}

export function canSendFeedback(view: SessionView): boolean {
  return view.state === "refining" && view.suggestions.length > 0;
}

export function canRetrieve(view: SessionView): boolean {
  return view.state === "ready" || view.state === "retrieved";
}

export function canRefineAgain(view: SessionView): boolean {
  return view.step < view.max_steps;
}
