/** Entry point: wires the game client to the page. The only client-side
 * persistence is the session id, kept per tab so concurrent tabs stay
 * independent games. */

import { listSplits } from "./api.js";
import { GameClient } from "./game.js";
import { render, UiHandlers } from "./ui.js";

const SESSION_KEY = "wikirace.session";

function storedSession(): string | null {
  return window.sessionStorage.getItem(SESSION_KEY);
}

function rememberSession(id: string | null): void {
  if (id === null) {
    window.sessionStorage.removeItem(SESSION_KEY);
  } else {
    window.sessionStorage.setItem(SESSION_KEY, id);
  }
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }

  let splits: string[] = [];
  const client = new GameClient(() => {
    rememberSession(client.currentSessionId);
    render(root, client.view(), splits, handlers);
  });

  const handlers: UiHandlers = {
    onStart: (split) => {
      void client.newGame({ split, index: pickIndex(split) });
    },
    onChoose: (index) => {
      void client.choose(index);
    },
    onRetry: () => {
      void client.retry();
    },
    onNewGame: () => {
      rememberSession(null);
      window.location.reload();
    },
  };

  const counts: Record<string, number> = await listSplits()
    .then((r) => r.splits)
    .catch(() => ({}));
  splits = Object.keys(counts).sort();

  function pickIndex(split: string): number {
    const n = counts[split] ?? 1;
    return Math.floor(Math.random() * n);
  }

  const existing = storedSession();
  if (existing) {
    await client.resume(existing);
  }
  render(root, client.view(), splits, handlers);
}

void boot();
