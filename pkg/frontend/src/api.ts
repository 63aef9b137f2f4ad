/** Typed client for the refinement service.
 *
 * Every method resolves to the server's JSON body untouched, so callers
 * can display scores and states verbatim. Non-2xx responses become
 * ApiError with the service's {error, detail} body attached.
 */

export type SessionState = "refining" | "ready" | "retrieved" | "abandoned";

export interface FrameSlot {
  slot_id: string;
  label: string;
  aspect: string | null;
}

export interface Frame {
  topic_id: string;
  intent_id: string;
  slots: FrameSlot[];
  location: string | null;
  provenance: string;
}

export interface SlotSuggestion {
  slot_id: string;
  label: string;
}

export interface SessionView {
  id: string;
  frame: Frame;
  ics: number;
  threshold: number;
  step: number;
  max_steps: number;
  state: SessionState;
  selected: string[];
  rejected: string[];
  suggestions: SlotSuggestion[];
}

export interface ResultItem {
  title: string;
  url: string;
  snippet: string;
  score: number;
  matched_slots: string[];
}

export interface RetrieveResponse {
  session_id: string;
  state: SessionState;
  suggestions: ResultItem[];
}

export interface OntologySlot {
  id: string;
  label: string;
  curated: boolean;
}

export interface OntologyIntent {
  id: string;
  label: string;
  slots: OntologySlot[];
}

export interface OntologyTopic {
  id: string;
  label: string;
  intents: OntologyIntent[];
}

export interface OntologyView {
  version: string | number;
  topics: OntologyTopic[];
}

export interface ErrorBody {
  error: string;
  detail: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(body.detail || body.error);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly base: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  createSession(text: string, location?: string): Promise<SessionView> {
    const payload: Record<string, string> = { text };
    if (location) {
      payload.location = location;
    }
    return this.post("/sessions", payload);
  }

  getSession(id: string): Promise<SessionView> {
    return this.request(`/sessions/${encodeURIComponent(id)}`);
  }

  sendFeedback(id: string, selected: string[], rejected: string[]): Promise<SessionView> {
    return this.post(`/sessions/${encodeURIComponent(id)}/feedback`, { selected, rejected });
  }

  retrieve(id: string): Promise<RetrieveResponse> {
    return this.post(`/sessions/${encodeURIComponent(id)}/retrieve`);
  }

  ontology(): Promise<OntologyView> {
    return this.request("/ontology");
  }

  private post<T>(path: string, payload?: unknown): Promise<T> {
    const init: RequestInit = { method: "POST" };
    if (payload !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(payload);
    }
    return this.request<T>(path, init);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, body as ErrorBody);
    }
    return body as T;
  }
}
