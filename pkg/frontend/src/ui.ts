/** Thin DOM layer: renders a GameView into a container and forwards
 * clicks. All layout decisions live here; no game logic does. */

import { GameView } from "./game.js";

export interface UiHandlers {
  onStart: (split: string) => void;
  onChoose: (index: number) => void;
  onRetry: () => void;
  onNewGame: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderBanner(view: GameView, handlers: UiHandlers): HTMLElement | null {
  if (view.networkError) {
    const banner = el("div", "banner banner-error");
    banner.append(el("span", undefined, "Network trouble. Nothing was lost."));
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => handlers.onRetry());
    banner.append(retry);
    return banner;
  }
  if (view.apiError) {
    return el("div", "banner banner-error", view.apiError);
  }
  return null;
}

function renderIdle(splits: string[], handlers: UiHandlers): HTMLElement {
  const box = el("div", "start");
  box.append(el("h2", undefined, "Start a game"));
  const row = el("div", "split-row");
  for (const split of splits) {
    const b = el("button", "split", split);
    b.addEventListener("click", () => handlers.onStart(split));
    row.append(b);
  }
  box.append(row);
  return box;
}

function renderGame(view: GameView, handlers: UiHandlers): HTMLElement {
  const box = el("div", "game");

  const head = el("div", "head");
  head.append(el("div", "target", `Target: ${view.target ?? ""}`));
  if (view.stepsRemaining !== null) {
    head.append(el("div", "steps", `Steps remaining: ${view.stepsRemaining}`));
  }
  box.append(head);

  const historyBox = el("div", "history");
  historyBox.append(el("h3", undefined, "Path so far"));
  const list = el("ol");
  for (const title of view.history) {
    list.append(el("li", undefined, title));
  }
  historyBox.append(list);
  box.append(historyBox);

  box.append(el("h2", "current", view.current ?? ""));

  // buttons mirror the server's presented order exactly; index shown is
  // the index submitted
  const links = el("div", "links");
  view.links.forEach((title, index) => {
    const b = el("button", "link");
    b.dataset.index = String(index);
    b.append(el("span", "num", `${index}.`), el("span", "title", title));
    b.addEventListener("click", () => handlers.onChoose(index));
    links.append(b);
  });
  box.append(links);
  return box;
}

function renderSummary(view: GameView, handlers: UiHandlers): HTMLElement {
  const s = view.summary!;
  const box = el("div", "summary");
  box.append(
    el("h2", undefined, s.outcome === "success" ? "You made it!" : "Game over"),
  );
  const facts = el("dl");
  const fact = (k: string, v: string) => {
    facts.append(el("dt", undefined, k), el("dd", undefined, v));
  };
  fact("Outcome", s.outcome + (s.failureReason ? ` (${s.failureReason})` : ""));
  fact("Steps taken", String(s.stepsTaken));
  fact("Optimal length", String(s.optimalLength));
  if (s.suboptimalSteps !== null) {
    fact("Suboptimal steps", String(s.suboptimalSteps));
  }
  box.append(facts);
  const again = el("button", "again", "Play again");
  again.addEventListener("click", () => handlers.onNewGame());
  box.append(again);
  return box;
}

export function render(
  root: HTMLElement,
  view: GameView,
  splits: string[],
  handlers: UiHandlers,
): void {
  root.replaceChildren();
  const banner = renderBanner(view, handlers);
  if (banner) {
    root.append(banner);
  }
  let body: HTMLElement;
  if (view.summary !== null) {
    body = renderSummary(view, handlers);
  } else if (view.current !== null) {
    body = renderGame(view, handlers);
  } else if (view.phase === "busy") {
    body = el("div", "busy", "…");
  } else {
    body = renderIdle(splits, handlers);
  }
  if (view.phase === "busy") {
    // keep the board visible while a request is in flight, just inert
    body.classList.add("pending");
    for (const b of body.querySelectorAll("button")) {
      b.disabled = true;
    }
  }
  root.append(body);
}
