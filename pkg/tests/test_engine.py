"""Engine tests: link filtering, prompt goldens, choice parsing, episode
mechanics, reward scoring, and trajectory serialization."""

import json
import random
from pathlib import Path

import pytest

from wikirace.agents import Agent, AgentError, AgentReply, baseline
from wikirace.engine import (
    GameConfig,
    GameState,
    SYSTEM_PROMPT,
    filter_links,
    load_trajectories,
    parse_choice,
    render_prompt,
    run_episode,
    save_trajectories,
    score_response,
    step_rng,
    trajectory_from_dict,
    trajectory_to_dict,
)
from wikirace.graphcore import distances_to, has_edge, out_neighbors
from wikirace.tasks import TaskInstance, generate_split, SplitSpec

from golden_fixtures import golden_graph, golden_states

GOLDEN_DIR = Path(__file__).parent / "golden"


class ScriptedAgent(Agent):
    """Replays a fixed list of raw responses."""

    name = "scripted"

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def decide(self, obs):
        text = self.responses[self.calls]
        self.calls += 1
        return AgentReply(raw_text=text)


class PathAgent(Agent):
    """Follows a known page-id path by picking each page's index."""

    name = "path"

    def __init__(self, g, path):
        self.titles = [g.titles[p] for p in path]
        self.pos = 0

    def decide(self, obs):
        idx = obs.presented_titles.index(self.titles[self.pos])
        self.pos += 1
        return AgentReply(raw_text=str(idx))


class FailingAgent(Agent):
    name = "failing"

    def decide(self, obs):
        raise AgentError("socket closed")


def make_task(g, source, target, split="custom"):
    fld = distances_to(g, target)
    return TaskInstance(source, target, int(fld.dist[source]), split, "00000000")


class TestFilterLinks:
    def test_under_cap_presents_everything(self):
        g = golden_graph()
        fld = distances_to(g, 6)
        nbrs = out_neighbors(g, 0)
        kept = filter_links(nbrs, fld, 50, random.Random(1))
        assert sorted(kept) == sorted(int(v) for v in nbrs)

    def test_over_cap_keeps_closest(self, benchmark_graph, benchmark_cache):
        g = benchmark_graph
        # find a node with out-degree above 5 and cap at 5
        node = max(range(g.num_nodes), key=g.out_degree)
        assert g.out_degree(node) > 5
        fld = benchmark_cache.get(0)
        kept = filter_links(out_neighbors(g, node), fld, 5, random.Random(0))
        assert len(kept) == 5
        omitted = set(int(v) for v in out_neighbors(g, node)) - set(kept)
        worst_kept = max(int(fld.dist[v]) for v in kept)
        for v in omitted:
            assert int(fld.dist[v]) >= worst_kept

    def test_tie_break_by_id_then_shuffle(self):
        g = golden_graph()
        fld = distances_to(g, 8)
        # node 0 neighbors {1,3,5} at distances {3,1,3}; cap 2 keeps 3 then 1
        kept = filter_links(out_neighbors(g, 0), fld, 2, random.Random(9))
        assert sorted(kept) == [1, 3]

    def test_shuffle_depends_only_on_rng(self):
        g = golden_graph()
        fld = distances_to(g, 6)
        a = filter_links(out_neighbors(g, 0), fld, 50, step_rng(7, 0))
        b = filter_links(out_neighbors(g, 0), fld, 50, step_rng(7, 0))
        c = filter_links(out_neighbors(g, 0), fld, 50, step_rng(7, 1))
        assert a == b
        assert sorted(a) == sorted(c)

    def test_shuffle_is_uniform_enough(self):
        # 3 items have 6 orders; 1200 draws should hit each within 3 sigma
        g = golden_graph()
        fld = distances_to(g, 6)
        counts = {}
        for s in range(1200):
            order = tuple(filter_links(out_neighbors(g, 0), fld, 50, step_rng(s, 0)))
            counts[order] = counts.get(order, 0) + 1
        assert len(counts) == 6
        expect = 1200 / 6
        sigma = (1200 * (1 / 6) * (5 / 6)) ** 0.5
        for n in counts.values():
            assert abs(n - expect) < 3 * sigma


class TestPromptGoldens:
    def test_system_prompt(self):
        frozen = (GOLDEN_DIR / "system.txt").read_text(encoding="utf-8")
        assert SYSTEM_PROMPT == frozen

    @pytest.mark.parametrize("idx", [1, 2, 3, 4, 5])
    def test_user_prompt_matches_frozen_bytes(self, idx):
        g = golden_graph()
        state = golden_states(g)[idx - 1]
        _, user = render_prompt(state, g)
        frozen = (GOLDEN_DIR / f"prompt_{idx}.txt").read_text(encoding="utf-8")
        assert user == frozen

    def test_max_choice_sentence(self):
        g = golden_graph()
        state = golden_states(g)[0]
        _, user = render_prompt(state, g)
        n = len(state.presented)
        assert user.endswith(
            f"Reply with the number of your choice (0 to {n - 1})."
        )


class TestParseChoice:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("25", 25),
            ("I choose 25 because it looks promising.", 25),
            ("Options 3 and 7 tempt me. Final answer: 7", 7),
            ("Let's go with 0", 0),
            ("My answer is 12.", 12),
            ("\\boxed{4}", 4),
            ("the answer is 9, so \\boxed{3}", 3),       # boxed beats plain
            ("\\boxed{99} hmm, \\boxed{2}", 2),          # last in-range boxed
            ("\\boxed{ 5 }", 5),
            ("none of these", None),
            ("", None),
            ("100", None),                                # out of range
            ("item v2 looks good", None),                 # word-adjacent
            ("about 3.5 units", None),                    # decimal parts
            ("-2", None),                                 # negative
            ("pages 12 then 30 then 7", 7),
        ],
    )
    def test_cases(self, raw, expected):
        assert parse_choice(raw, 49) == expected

    def test_boxed_out_of_range_falls_back_to_plain(self):
        assert parse_choice("\\boxed{80} I mean 4", 10) == 4

    def test_range_respects_max_index(self):
        assert parse_choice("7", 6) is None
        assert parse_choice("7", 7) == 7


class TestScoreResponse:
    def test_values(self):
        assert score_response("3", optimal_index=3, max_index=9) == 1.0
        assert score_response("\\boxed{3}", 3, 9) == 1.0
        assert score_response("5", 3, 9) == 0.0
        assert score_response("gibberish", 3, 9) == -0.5
        assert score_response("42", 3, 9) == -0.5  # out of range is unformatted

    def test_optimal_must_be_presentable(self):
        from wikirace.engine import EngineError
        with pytest.raises(EngineError):
            score_response("1", optimal_index=5, max_index=3)


class TestRunEpisode:
    def test_scripted_shortest_path(self):
        g = golden_graph()
        # 0 -> 5 -> 6 is a shortest path to Hydrogen
        task = make_task(g, 0, 6)
        assert task.optimal_length == 2
        fld = distances_to(g, 6)
        traj = run_episode(task, PathAgent(g, [5, 6]), g, fld, GameConfig(rng_seed=7))
        assert traj.outcome == "success"
        assert traj.failure_reason is None
        assert traj.steps_taken == 2
        assert traj.history == ["Alpha Centauri", "Go (game)", "Hydrogen"]
        assert len(traj.steps) == 2
        assert traj.steps[0].chosen_index is not None

    def test_oracle_greedy_always_optimal(self, benchmark_graph, benchmark_cache):
        spec = SplitSpec("mini", 6, (3, 5))
        tasks = generate_split(benchmark_graph, benchmark_cache, spec, seed=5)
        agent = baseline("oracle_greedy")
        for task in tasks:
            fld = benchmark_cache.get(task.target)
            traj = run_episode(task, agent, benchmark_graph, fld, GameConfig(rng_seed=1))
            assert traj.outcome == "success"
            assert traj.steps_taken == task.optimal_length

    def test_budget_failure(self):
        g = golden_graph()
        # Istanbul is 3 hops from Alpha Centauri: unreachable in a 2-step budget
        task = make_task(g, 0, 7)
        assert task.optimal_length == 3
        fld = distances_to(g, 7)
        traj = run_episode(
            task, ScriptedAgent(["0", "0"]), g, fld, GameConfig(max_steps=2, rng_seed=2)
        )
        assert traj.outcome == "failure"
        assert traj.failure_reason == "step_budget"
        assert traj.steps_taken == 2

    def test_budget_never_exceeded(self):
        g = golden_graph()
        task = make_task(g, 0, 9)
        fld = distances_to(g, 9)
        agent = baseline("random", seed=3)
        for seed in range(30):
            traj = run_episode(task, agent, g, fld, GameConfig(rng_seed=seed))
            assert traj.steps_taken <= 30
            assert len(traj.steps) <= 30

    def test_parse_error_after_retries(self):
        g = golden_graph()
        task = make_task(g, 0, 6)
        fld = distances_to(g, 6)
        agent = ScriptedAgent(["nah", "still no", "refuse"])
        traj = run_episode(task, agent, g, fld, GameConfig(rng_seed=0))
        assert agent.calls == 3  # initial + 2 retries
        assert traj.outcome == "failure"
        assert traj.failure_reason == "parse_error"
        assert traj.steps_taken == 0
        assert traj.steps[0].chosen_index is None
        assert traj.steps[0].page_after is None

    def test_retry_appends_reminder_once_per_attempt(self):
        g = golden_graph()
        task = make_task(g, 0, 6)
        fld = distances_to(g, 6)
        seen = []

        class Recorder(Agent):
            name = "recorder"

            def decide(self, obs):
                seen.append(obs.user_text)
                return AgentReply(raw_text="nope" if len(seen) < 2 else "1")

        run_episode(task, Recorder(), g, fld, GameConfig(rng_seed=0))
        assert seen[1].startswith(seen[0])
        tail = seen[1][len(seen[0]):]
        assert tail == "\n\nReply with only a single integer between 0 and 2."

    def test_retry_usage_accumulates_into_one_step(self):
        g = golden_graph()
        task = make_task(g, 0, 6)
        fld = distances_to(g, 6)

        class Counting(Agent):
            name = "counting"
            calls = 0

            def decide(self, obs):
                self.calls += 1
                text = "hmm" if self.calls == 1 else "1"
                return AgentReply(raw_text=text, tokens_in=10, tokens_out=5, latency=0.25)

        traj = run_episode(task, Counting(), g, fld, GameConfig(rng_seed=0))
        assert traj.steps[0].tokens_in == 20
        assert traj.steps[0].tokens_out == 10
        assert traj.steps[0].latency == 0.5

    def test_agent_error_reason(self):
        g = golden_graph()
        task = make_task(g, 0, 6)
        fld = distances_to(g, 6)
        traj = run_episode(task, FailingAgent(), g, fld, GameConfig(rng_seed=0))
        assert traj.outcome == "failure"
        assert traj.failure_reason == "agent_error"
        assert traj.steps_taken == 0

    def test_presented_always_true_neighbors(self, benchmark_graph, benchmark_cache):
        g = benchmark_graph
        spec = SplitSpec("mini", 4, (4,))
        tasks = generate_split(g, benchmark_cache, spec, seed=2)
        agent = baseline("random", seed=0)
        for task in tasks:
            fld = benchmark_cache.get(task.target)
            traj = run_episode(task, agent, g, fld, GameConfig(rng_seed=3))
            for step in traj.steps:
                before = g.resolve_title(step.page_before)
                assert len(step.presented) == len(set(step.presented))
                assert len(step.presented) <= 50
                for title in step.presented:
                    link = g.resolve_title(title)
                    assert has_edge(g, before, link)

    def test_descent_link_always_available(self, benchmark_graph, benchmark_cache):
        g = benchmark_graph
        spec = SplitSpec("mini", 4, (6,))
        tasks = generate_split(g, benchmark_cache, spec, seed=8)
        agent = baseline("random", seed=1)
        for task in tasks:
            fld = benchmark_cache.get(task.target)
            traj = run_episode(task, agent, g, fld, GameConfig(rng_seed=4))
            for step in traj.steps:
                before = g.resolve_title(step.page_before)
                d_before = int(fld.dist[before])
                best = min(
                    int(fld.dist[g.resolve_title(t)]) for t in step.presented
                )
                assert best == d_before - 1

    def test_field_target_mismatch_rejected(self):
        from wikirace.engine import EngineError
        g = golden_graph()
        task = make_task(g, 0, 6)
        with pytest.raises(EngineError, match="distance field"):
            run_episode(task, baseline("first_link"), g, distances_to(g, 5))

    def test_deterministic_trajectory_bytes(self):
        g = golden_graph()
        task = make_task(g, 0, 9)
        fld = distances_to(g, 9)
        lines = []
        for _ in range(2):
            traj = run_episode(
                task, baseline("random", seed=11), g, fld, GameConfig(rng_seed=21)
            )
            lines.append(json.dumps(trajectory_to_dict(traj), sort_keys=True))
        assert lines[0] == lines[1]


class TestTrajectoryPersistence:
    def _sample(self):
        g = golden_graph()
        task = make_task(g, 0, 6, split="easy")
        fld = distances_to(g, 6)
        return run_episode(
            task, baseline("oracle_greedy"), g, fld, GameConfig(rng_seed=5)
        )

    def test_round_trip_lossless(self, tmp_path):
        traj = self._sample()
        p = tmp_path / "t.jsonl"
        save_trajectories([traj, traj], p)
        back = load_trajectories(p)
        assert len(back) == 2
        assert trajectory_to_dict(back[0]) == trajectory_to_dict(traj)
        # and byte-identical when re-serialized
        q = tmp_path / "u.jsonl"
        save_trajectories(back, q)
        assert p.read_bytes() == q.read_bytes()

    def test_dict_round_trip_identity(self):
        traj = self._sample()
        d = trajectory_to_dict(traj)
        assert trajectory_to_dict(trajectory_from_dict(d)) == d

    def test_wall_time_is_latency_sum(self):
        traj = self._sample()
        assert traj.wall_time == sum(s.latency for s in traj.steps)
        assert traj.tokens_in == sum(s.tokens_in for s in traj.steps)
