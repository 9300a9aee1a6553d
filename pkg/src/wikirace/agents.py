"""Agent decision contract, deterministic baselines, and a remote
chat-completions client with retries, rate limiting, and usage accounting.

Baselines flagged ``privileged`` read oracle distances or out-degrees that
ordinary agents never see; every trajectory they produce is marked so they
stay out of headline comparisons.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass, field

import requests

API_KEY_VAR = "WIKIRACE_API_KEY"
API_BASE_VAR = "WIKIRACE_API_BASE"


class AgentError(Exception):
    """Transport failure after retries; the episode fails as agent_error."""


class AgentConfigError(Exception):
    """Bad credentials, unknown model, unknown baseline kind: not retryable."""


@dataclass(frozen=True)
class PrivilegedView:
    """Engine-side facts for privileged baselines only."""

    presented_ids: tuple[int, ...]
    distances: tuple[int, ...]      # oracle distance of each presented link to the target
    out_degrees: tuple[int, ...]


@dataclass(frozen=True)
class Observation:
    system_text: str
    user_text: str
    max_index: int
    current_title: str
    target_title: str
    history_titles: tuple[str, ...]
    presented_titles: tuple[str, ...]
    privileged: PrivilegedView | None = None


@dataclass
class AgentReply:
    raw_text: str
    tokens_in: int = 0
    tokens_out: int = 0
    latency: float = 0.0
    provider_cost: float | None = None

    def __post_init__(self):
        if self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("token counts must be >= 0")


class Agent:
    """Decision contract: one reply per observation, no cross-episode memory.

    Instances may serve many concurrent episodes, so implementations must be
    thread-safe.
    """

    name: str = "agent"
    privileged: bool = False

    def decide(self, obs: Observation) -> AgentReply:
        raise NotImplementedError


class FirstLinkAgent(Agent):
    name = "first_link"

    def decide(self, obs: Observation) -> AgentReply:
        return AgentReply(raw_text="0")


class RandomAgent(Agent):
    """Uniform choice, derived per call from (seed, prompt bytes) so runs
    reproduce regardless of episode scheduling."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.name = f"random[seed={seed}]"

    def decide(self, obs: Observation) -> AgentReply:
        digest = hashlib.sha256(
            f"{self.seed}:".encode() + obs.user_text.encode()
        ).digest()
        pick = int.from_bytes(digest[:8], "little") % (obs.max_index + 1)
        return AgentReply(raw_text=str(pick))


class OracleGreedyAgent(Agent):
    """Always steps to a minimum-distance link (ties: lowest index)."""

    name = "oracle_greedy"
    privileged = True

    def decide(self, obs: Observation) -> AgentReply:
        view = obs.privileged
        if view is None:
            raise AgentConfigError("oracle_greedy requires a privileged view")
        best = min(range(len(view.distances)), key=lambda i: view.distances[i])
        return AgentReply(raw_text=str(best))


class HubGreedyAgent(Agent):
    """Always steps to the highest out-degree link (ties: lowest index)."""

    name = "hub_greedy"
    privileged = True

    def decide(self, obs: Observation) -> AgentReply:
        view = obs.privileged
        if view is None:
            raise AgentConfigError("hub_greedy requires a privileged view")
        best = max(
            range(len(view.out_degrees)),
            key=lambda i: (view.out_degrees[i], -i),
        )
        return AgentReply(raw_text=str(best))


BASELINES = {
    "random": RandomAgent,
    "first_link": FirstLinkAgent,
    "oracle_greedy": OracleGreedyAgent,
    "hub_greedy": HubGreedyAgent,
}


def baseline(kind: str, **params) -> Agent:
    try:
        cls = BASELINES[kind]
    except KeyError:
        raise AgentConfigError(
            f"unknown baseline {kind!r}; expected one of {sorted(BASELINES)}"
        ) from None
    return cls(**params)


class TokenBucket:
    """Requests-per-minute limiter shared across an agent's episodes."""

    def __init__(self, per_minute: float):
        if per_minute <= 0:
            raise AgentConfigError("requests-per-minute budget must be > 0")
        self.capacity = per_minute
        self.tokens = per_minute
        self.rate = per_minute / 60.0
        self.updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(wait)


@dataclass
class LlmAgentConfig:
    model: str
    base_url: str | None = None          # falls back to WIKIRACE_API_BASE
    api_key: str | None = None           # falls back to WIKIRACE_API_KEY
    temperature: float = 0.0
    max_output_tokens: int = 512
    timeout: float = 60.0
    retries: int = 3                     # transport/5xx/429 only
    backoff: float = 0.5                 # doubles per attempt
    requests_per_minute: float = 60.0
    price_in_per_mtok: float | None = None
    price_out_per_mtok: float | None = None
    extra_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.retries < 0:
            raise AgentConfigError("retry count must be >= 0")
        if self.requests_per_minute <= 0:
            raise AgentConfigError("requests-per-minute budget must be > 0")


class LlmAgent(Agent):
    """OpenAI-compatible chat-completions client.

    Base-URL override covers hosted and local serving stacks alike; there is
    no per-vendor code. Cost is reported only when per-million-token rates
    are configured, never guessed.
    """

    def __init__(self, config: LlmAgentConfig, session: requests.Session | None = None):
        base = config.base_url or os.environ.get(API_BASE_VAR)
        if not base:
            raise AgentConfigError(
                f"no endpoint: pass base_url or set {API_BASE_VAR}"
            )
        self.config = config
        self.base_url = base.rstrip("/")
        self.api_key = config.api_key or os.environ.get(API_KEY_VAR, "")
        self.name = f"llm:{config.model}"
        self._session = session or requests.Session()
        self._bucket = TokenBucket(config.requests_per_minute)

    def sampling_params(self) -> dict:
        """Logged per trajectory so runs are reconstructible."""
        return {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            **self.config.extra_params,
        }

    def _cost(self, tokens_in: int, tokens_out: int) -> float | None:
        cfg = self.config
        if cfg.price_in_per_mtok is None or cfg.price_out_per_mtok is None:
            return None
        return (
            tokens_in * cfg.price_in_per_mtok
            + tokens_out * cfg.price_out_per_mtok
        ) / 1_000_000

    def decide(self, obs: Observation) -> AgentReply:
        messages = []
        if obs.system_text:
            messages.append({"role": "system", "content": obs.system_text})
        messages.append({"role": "user", "content": obs.user_text})
        payload = {"messages": messages, **self.sampling_params()}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"

        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            self._bucket.acquire()
            started = time.monotonic()
            try:
                resp = self._session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            latency = time.monotonic() - started
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = AgentError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code >= 400:
                # auth and request-shape errors never fix themselves
                raise AgentConfigError(
                    f"HTTP {resp.status_code} from {url}: {resp.text[:200]}"
                )
            body = resp.json()
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise AgentError(f"malformed completion payload from {url}: {exc}")
            usage = body.get("usage") or {}
            tokens_in = int(usage.get("prompt_tokens", 0))
            tokens_out = int(usage.get("completion_tokens", 0))
            return AgentReply(
                raw_text=text or "",
                tokens_in=tokens_in,
                tokens_out=tokens_out,
                latency=latency,
                provider_cost=self._cost(tokens_in, tokens_out),
            )
        raise AgentError(
            f"request to {url} failed after {self.config.retries + 1} attempts: {last_error}"
        )
