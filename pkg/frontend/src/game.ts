/** DOM-free game client: a small state machine over the session API.
 *
 * All truth lives server-side; this object holds only the session id, the
 * last state the server sent, and enough context to retry after a network
 * failure without losing what was on screen.
 */

import {
  ApiError,
  CreateRequest,
  SessionState,
  TransportError,
  createSession,
  getState,
  move,
} from "./api.js";

export type Phase = "idle" | "busy" | "playing" | "terminal";

export interface TerminalSummary {
  outcome: "success" | "failure";
  stepsTaken: number;
  optimalLength: number;
  suboptimalSteps: number | null; // steps - optimal, successes only
  failureReason: string | null;
}

export interface GameView {
  phase: Phase;
  current: string | null;
  target: string | null;
  history: string[];
  /** Server order, verbatim. Re-sorting would break comparability with
   * agent prompts, so the view never touches it. */
  links: string[];
  stepsRemaining: number | null;
  stepBudget: number | null;
  summary: TerminalSummary | null;
  /** Set after a network failure; the rest of the view keeps its last
   * good contents so nothing silently disappears. */
  networkError: string | null;
  apiError: string | null;
}

function summarize(state: SessionState): TerminalSummary | null {
  if (state.status === "running") {
    return null;
  }
  const optimal = state.optimal_length ?? 0;
  return {
    outcome: state.status,
    stepsTaken: state.steps_taken,
    optimalLength: optimal,
    suboptimalSteps:
      state.status === "success" ? state.steps_taken - optimal : null,
    failureReason: state.failure_reason ?? null,
  };
}

export class GameClient {
  private sessionId: string | null = null;
  private state: SessionState | null = null;
  private busy = false;
  private networkError: string | null = null;
  private apiError: string | null = null;
  private retryAction: (() => Promise<void>) | null = null;

  constructor(private readonly onChange: () => void = () => {}) {}

  get currentSessionId(): string | null {
    return this.sessionId;
  }

  view(): GameView {
    const s = this.state;
    return {
      phase: this.busy
        ? "busy"
        : s === null
          ? "idle"
          : s.status === "running"
            ? "playing"
            : "terminal",
      current: s?.current ?? null,
      target: s?.target ?? null,
      history: s ? [...s.history] : [],
      links: s && s.status === "running" ? [...s.presented] : [],
      stepsRemaining: s?.steps_remaining ?? null,
      stepBudget: s?.step_budget ?? null,
      summary: s ? summarize(s) : null,
      networkError: this.networkError,
      apiError: this.apiError,
    };
  }

  /** Start a fresh game. On network failure the retry re-creates. */
  async newGame(req: CreateRequest): Promise<void> {
    await this.run(async () => {
      const created = await createSession(req);
      this.sessionId = created.session_id;
      this.state = await getState(created.session_id);
    });
  }

  /** Rebind to an existing session (page reload). A vanished session is
   * not an error: the client just returns to idle. */
  async resume(sessionId: string): Promise<void> {
    await this.run(async () => {
      try {
        this.state = await getState(sessionId);
        this.sessionId = sessionId;
      } catch (err) {
        if (err instanceof ApiError && err.code === "session_not_found") {
          this.sessionId = null;
          this.state = null;
          return;
        }
        throw err;
      }
    });
  }

  /** Submit the clicked link index. Indexes come from rendered buttons, so
   * anything out of range is a programming error, not a user error. */
  async choose(index: number): Promise<void> {
    const s = this.state;
    if (!this.sessionId || !s || s.status !== "running") {
      throw new Error("no running game to move in");
    }
    if (!Number.isInteger(index) || index < 0 || index >= s.presented.length) {
      throw new RangeError(`link index ${index} out of range`);
    }
    const sid = this.sessionId;
    await this.run(
      async () => {
        this.state = await move(sid, index);
      },
      // a lost move response leaves the server state unknown; the safe
      // retry is an idempotent refresh, never a second POST
      async () => {
        this.state = await getState(sid);
      },
    );
  }

  /** Re-fetch server state (also the manual refresh path). */
  async refresh(): Promise<void> {
    const sid = this.sessionId;
    if (!sid) {
      return;
    }
    await this.run(async () => {
      this.state = await getState(sid);
    });
  }

  /** Re-run whatever failed last, if anything. */
  async retry(): Promise<void> {
    const action = this.retryAction;
    if (!action) {
      return;
    }
    await this.run(action);
  }

  private async run(
    action: () => Promise<void>,
    onRetry?: () => Promise<void>,
  ): Promise<void> {
    this.busy = true;
    this.networkError = null;
    this.apiError = null;
    this.onChange();
    try {
      await action();
      this.retryAction = null;
    } catch (err) {
      if (err instanceof TransportError) {
        this.networkError = err.message;
        this.retryAction = onRetry ?? action;
      } else if (err instanceof ApiError) {
        this.retryAction = null;
        if (err.code === "session_terminal" && this.sessionId) {
          // someone finished this game elsewhere; fetch the ending
          this.state = await getState(this.sessionId).catch(() => this.state);
        } else {
          this.apiError = `${err.code}: ${err.message}`;
        }
      } else {
        throw err;
      }
    } finally {
      this.busy = false;
      this.onChange();
    }
  }
}
