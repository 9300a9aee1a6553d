"""Agent tests: baseline behavior, privileged gating, and the LLM client's
protocol, retries, accounting, and rate limiting."""

import time
from collections import Counter

import pytest

from wikirace.agents import (
    AgentConfigError,
    AgentError,
    AgentReply,
    LlmAgent,
    LlmAgentConfig,
    Observation,
    PrivilegedView,
    TokenBucket,
    baseline,
)

from stub_server import StubChatServer, word_count


def obs(max_index=4, user="pick one", privileged=None):
    return Observation(
        system_text="system",
        user_text=user,
        max_index=max_index,
        current_title="A",
        target_title="Z",
        history_titles=("A",),
        presented_titles=tuple("BCDEF"[: max_index + 1]),
        privileged=privileged,
    )


def view(distances, out_degrees=None):
    n = len(distances)
    return PrivilegedView(
        presented_ids=tuple(range(n)),
        distances=tuple(distances),
        out_degrees=tuple(out_degrees or [1] * n),
    )


class TestBaselines:
    def test_first_link(self):
        agent = baseline("first_link")
        assert agent.decide(obs()).raw_text == "0"
        assert agent.privileged is False

    def test_unknown_kind(self):
        with pytest.raises(AgentConfigError, match="unknown baseline"):
            baseline("psychic")

    def test_random_reproducible(self):
        a = baseline("random", seed=5)
        b = baseline("random", seed=5)
        observations = [obs(max_index=9, user=f"prompt {i}") for i in range(20)]
        assert [a.decide(o).raw_text for o in observations] == [
            b.decide(o).raw_text for o in observations
        ]

    def test_random_uniform_within_3_sigma(self):
        agent = baseline("random", seed=1)
        n, k = 1000, 5
        counts = Counter(
            agent.decide(obs(max_index=k - 1, user=f"p{i}")).raw_text
            for i in range(n)
        )
        assert set(counts) == {"0", "1", "2", "3", "4"}
        expect = n / k
        sigma = (n * (1 / k) * (1 - 1 / k)) ** 0.5
        for c in counts.values():
            assert abs(c - expect) < 3 * sigma

    def test_oracle_greedy_min_distance_lowest_index(self):
        agent = baseline("oracle_greedy")
        assert agent.privileged is True
        reply = agent.decide(obs(privileged=view([4, 2, 7, 2, 9])))
        assert reply.raw_text == "1"  # first of the tied minima

    def test_oracle_greedy_requires_view(self):
        with pytest.raises(AgentConfigError, match="privileged"):
            baseline("oracle_greedy").decide(obs())

    def test_hub_greedy_max_degree_lowest_index(self):
        agent = baseline("hub_greedy")
        assert agent.privileged is True
        reply = agent.decide(
            obs(privileged=view([1, 1, 1, 1, 1], out_degrees=[3, 90, 17, 90, 2]))
        )
        assert reply.raw_text == "1"

    def test_reply_rejects_negative_tokens(self):
        with pytest.raises(ValueError):
            AgentReply(raw_text="x", tokens_in=-1)


class TestTokenBucket:
    def test_capacity_consumed_without_sleeping(self):
        bucket = TokenBucket(per_minute=3)
        started = time.monotonic()
        for _ in range(3):
            bucket.acquire()
        assert time.monotonic() - started < 0.5
        assert bucket.tokens < 1.0

    def test_zero_budget_rejected(self):
        with pytest.raises(AgentConfigError):
            TokenBucket(0)


class TestLlmAgent:
    def config(self, base_url, **kw):
        defaults = dict(
            model="stub-model",
            base_url=base_url,
            api_key="sk-test",
            timeout=5.0,
            retries=2,
            backoff=0.01,
            requests_per_minute=100000,
        )
        defaults.update(kw)
        return LlmAgentConfig(**defaults)

    def test_round_trip_with_usage(self):
        with StubChatServer(lambda payload: "I pick 3") as stub:
            agent = LlmAgent(self.config(stub.base_url))
            reply = agent.decide(obs(user="choose a link, any link"))
        assert reply.raw_text == "I pick 3"
        assert reply.tokens_in == word_count("system") + word_count("choose a link, any link")
        assert reply.tokens_out == 3
        assert reply.latency > 0
        assert reply.provider_cost is None  # no prices configured

    def test_request_body_carries_exact_prompt(self):
        user_text = 'Visit "Kraków" → then decide.\n\n0. One\n1. Two'
        with StubChatServer(lambda payload: "0") as stub:
            agent = LlmAgent(self.config(stub.base_url, temperature=0.25))
            agent.decide(obs(user=user_text))
            headers, payload = stub.requests[0]
        assert payload["messages"][0] == {"role": "system", "content": "system"}
        assert payload["messages"][1] == {"role": "user", "content": user_text}
        assert payload["model"] == "stub-model"
        assert payload["temperature"] == 0.25
        assert headers["Authorization"] == "Bearer sk-test"

    def test_retries_on_5xx_then_succeeds(self):
        with StubChatServer(lambda p: "1", status_plan=[500, 503]) as stub:
            agent = LlmAgent(self.config(stub.base_url))
            reply = agent.decide(obs())
        assert reply.raw_text == "1"
        assert len(stub.requests) == 3

    def test_retries_on_429(self):
        with StubChatServer(lambda p: "2", status_plan=[429]) as stub:
            agent = LlmAgent(self.config(stub.base_url))
            assert agent.decide(obs()).raw_text == "2"

    def test_exhausted_retries_raise_agent_error(self):
        with StubChatServer(lambda p: "1", status_plan=[500] * 3) as stub:
            agent = LlmAgent(self.config(stub.base_url))
            with pytest.raises(AgentError, match="3 attempts"):
                agent.decide(obs())

    def test_auth_failure_is_fatal_not_retried(self):
        with StubChatServer(lambda p: "1", status_plan=[401, 401]) as stub:
            agent = LlmAgent(self.config(stub.base_url))
            with pytest.raises(AgentConfigError, match="401"):
                agent.decide(obs())
            assert len(stub.requests) == 1

    def test_connection_failure_raises_agent_error(self):
        agent = LlmAgent(self.config("http://127.0.0.1:9", retries=1))
        with pytest.raises(AgentError):
            agent.decide(obs())

    def test_cost_from_price_table(self):
        with StubChatServer(lambda p: "one two three four") as stub:
            agent = LlmAgent(
                self.config(
                    stub.base_url, price_in_per_mtok=2.0, price_out_per_mtok=10.0
                )
            )
            reply = agent.decide(obs(user="a b c"))
        # 4 prompt words (system + a b c), 4 completion words
        assert reply.provider_cost == pytest.approx((4 * 2.0 + 4 * 10.0) / 1e6)

    def test_missing_endpoint_rejected(self, monkeypatch):
        monkeypatch.delenv("WIKIRACE_API_BASE", raising=False)
        with pytest.raises(AgentConfigError, match="WIKIRACE_API_BASE"):
            LlmAgent(LlmAgentConfig(model="m"))

    def test_env_fallbacks(self, monkeypatch):
        monkeypatch.setenv("WIKIRACE_API_BASE", "http://example.invalid/v1/")
        monkeypatch.setenv("WIKIRACE_API_KEY", "sk-env")
        agent = LlmAgent(LlmAgentConfig(model="m"))
        assert agent.base_url == "http://example.invalid/v1"
        assert agent.api_key == "sk-env"
        assert agent.name == "llm:m"
