/** Typed access to the session-service HTTP API. The client owns no game
 * truth; every call returns the server's view verbatim. */

export interface CreateRequest {
  split?: string;
  index?: number;
  source?: string;
  target?: string;
}

export interface CreateResponse {
  session_id: string;
  source: string;
  target: string;
  step_budget: number;
}

export interface SessionState {
  session_id: string;
  status: "running" | "success" | "failure";
  current: string;
  target: string;
  history: string[];
  presented: string[];
  steps_taken: number;
  steps_remaining: number;
  step_budget: number;
  failure_reason?: string | null;
  optimal_length?: number;
  suboptimal_steps?: number;
}

export interface SplitCounts {
  splits: Record<string, number>;
}

/** The server answered with an error body {code, message}. */
export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The request never completed; the server's state is unknown. */
export class TransportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TransportError";
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(path, init);
  } catch (err) {
    throw new TransportError(String(err));
  }
  let body: unknown = null;
  try {
    body = await resp.json();
  } catch {
    if (resp.ok) {
      throw new TransportError(`non-JSON response from ${path}`);
    }
  }
  if (!resp.ok) {
    const e = body as { code?: string; message?: string } | null;
    throw new ApiError(
      e?.code ?? `http_${resp.status}`,
      e?.message ?? resp.statusText,
      resp.status,
    );
  }
  return body as T;
}

export function createSession(body: CreateRequest): Promise<CreateResponse> {
  return request("/api/sessions", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}

export function getState(sessionId: string): Promise<SessionState> {
  return request(`/api/sessions/${encodeURIComponent(sessionId)}`);
}

export function move(sessionId: string, choice: number): Promise<SessionState> {
  return request(`/api/sessions/${encodeURIComponent(sessionId)}/move`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ choice }),
  });
}

export function listSplits(): Promise<SplitCounts> {
  return request("/api/tasks");
}
