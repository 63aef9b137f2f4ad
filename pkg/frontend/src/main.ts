/** Browser entry point: wires the client, state, and renderer together.
 *
 * The page is served from /ui/ by the API process, so the client talks
 * to the same origin with absolute paths.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderApp } from "./render.js";
import {
  UiState,
  backToRefinement,
  feedbackSplit,
  initialState,
  togglePick,
  withError,
  withResults,
  withSession,
} from "./state.js";

const client = new ApiClient("");
const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
let state: UiState = initialState();

function update(next: UiState): void {
  state = next;
  root!.innerHTML = renderApp(state);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.body.error}: ${err.body.detail}`;
  }
  return err instanceof Error ? err.message : String(err);
}

async function guard(work: () => Promise<UiState>): Promise<void> {
  update({ ...state, busy: true, error: null });
  try {
    update(await work());
  } catch (err) {
    update(withError({ ...state, busy: false }, describe(err)));
  }
}

root.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (form.dataset.action !== "submit-request") {
    return;
  }
  event.preventDefault();
  const data = new FormData(form);
  const text = String(data.get("text") ?? "").trim();
  const location = String(data.get("location") ?? "").trim();
  if (!text) {
    return;
  }
  void guard(async () => {
    const view = await client.createSession(text, location || undefined);
    return withSession(state, view);
  });
});

root.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (target === null) {
    return;
  }
  const action = target.dataset.action;
  const session = state.session;
  if (action === "toggle" && target.dataset.slot) {
    update(togglePick(state, target.dataset.slot));
  } else if (action === "feedback" && session !== null) {
    const { selected, rejected } = feedbackSplit(state);
    void guard(async () => {
      const view = await client.sendFeedback(session.id, selected, rejected);
      return withSession(state, view);
    });
  } else if (action === "retrieve" && session !== null) {
    void guard(async () => {
      const results = await client.retrieve(session.id);
      return withResults(state, results);
    });
  } else if (action === "refine-again") {
    update(backToRefinement(state));
  } else if (action === "new-request") {
    update(initialState());
  }
});

update(state);
