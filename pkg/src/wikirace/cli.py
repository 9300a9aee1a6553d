"""Command-line entry point wiring every module: ingest, precompute,
generate, play, probe, serve, analyze, report.

Every output-producing invocation writes a RunManifest JSON next to its
first output (or at --manifest), recording argv, the resolved config and
its digest, the graph snapshot, seed, timestamps, and output paths, so any
artifact can be traced back to the exact run that made it.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from . import agents as agents_mod
from . import metrics as metrics_mod
from .agents import AgentConfigError, LlmAgent, LlmAgentConfig, baseline
from .engine import (
    GameConfig,
    load_trajectories,
    run_episode,
    save_trajectories,
    trajectory_line,
)
from .graphcore import DistanceCache, GraphError, graph_checksum, load_graph, save_graph
from .ingest import EdgeListSource, IngestError, degree_stats, ingest
from .metrics import MetricsError, build_report, render_jsonl, render_table
from .tasks import (
    EVAL_SPLITS,
    SplitSpec,
    TaskGenError,
    export_training_pairs,
    generate_probe_set,
    generate_split,
    import_pairs,
    load_probe_set,
    load_tasks,
    parse_probe_response,
    render_probe_prompt,
    save_probe_set,
    save_tasks,
    save_training_pairs,
)

# --- configuration resolution ---------------------------------------------------

ENV_KEYS = {
    "api_base": "WIKIRACE_API_BASE",
    "api_key": "WIKIRACE_API_KEY",
}


def read_config_file(path: str | None) -> dict[str, str]:
    """key=value lines; '#' starts a comment."""
    if not path:
        return {}
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: bad config line {raw.strip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve_setting(name: str, flag_value, file_cfg: dict, default=None, cast=str):
    """Precedence: flag > environment > config file > default."""
    if flag_value is not None:
        return flag_value
    env_var = ENV_KEYS.get(name)
    if env_var and os.environ.get(env_var):
        return cast(os.environ[env_var])
    if name in file_cfg:
        return cast(file_cfg[name])
    return default


# --- run manifest ----------------------------------------------------------------

def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@contextmanager
def manifest_scope(args, config: dict, snapshot: str | None = None,
                   seed: int | None = None):
    """Collects output paths and writes the manifest exactly once, flagging
    interrupted or failed runs so partial outputs are never trusted."""
    manifest = {
        "argv": list(getattr(args, "argv_snapshot", sys.argv[1:])),
        "command": args.command,
        "config": config,
        "config_digest": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
        "snapshot_checksum": snapshot,
        "seed": seed,
        "started": _utcnow(),
        "finished": None,
        "outputs": [],
        "status": "running",
    }
    outputs: list[Path] = []
    try:
        yield outputs
        manifest["status"] = "ok"
    except BaseException as exc:
        manifest["status"] = f"error: {exc}" if not isinstance(
            exc, KeyboardInterrupt
        ) else "interrupted"
        raise
    finally:
        manifest["finished"] = _utcnow()
        manifest["outputs"] = [str(p) for p in outputs]
        path = getattr(args, "manifest", None)
        if path is None and outputs:
            path = str(outputs[0]) + ".manifest.json"
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(manifest, f, indent=2)
                f.write("\n")


# --- shared helpers ----------------------------------------------------------------

def open_graph(args):
    g = load_graph(args.graph)
    cache_dir = getattr(args, "cache_dir", None)
    cache = DistanceCache(g, root=cache_dir)
    return g, cache


def derive_episode_seed(run_seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{run_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "-" for c in text)


def build_agent(args, file_cfg) -> agents_mod.Agent:
    name = args.agent
    if name in agents_mod.BASELINES:
        if name == "random":
            return baseline("random", seed=args.seed)
        return baseline(name)
    if name == "llm":
        model = resolve_setting("model", getattr(args, "model", None), file_cfg)
        if not model:
            raise AgentConfigError("llm agent needs --model or model= in config")
        return LlmAgent(
            LlmAgentConfig(
                model=model,
                base_url=resolve_setting("api_base", getattr(args, "api_base", None), file_cfg),
                api_key=resolve_setting("api_key", None, file_cfg),
                temperature=float(resolve_setting("temperature", getattr(args, "temperature", None), file_cfg, 0.0)),
                max_output_tokens=int(resolve_setting("max_output_tokens", None, file_cfg, 512)),
                timeout=float(resolve_setting("timeout", None, file_cfg, 60.0)),
                retries=int(resolve_setting("retries", None, file_cfg, 3)),
                requests_per_minute=float(resolve_setting("rpm", getattr(args, "rpm", None), file_cfg, 60.0)),
                price_in_per_mtok=_opt_float(resolve_setting("price_in_per_mtok", None, file_cfg)),
                price_out_per_mtok=_opt_float(resolve_setting("price_out_per_mtok", None, file_cfg)),
            )
        )
    raise AgentConfigError(
        f"unknown agent {name!r}; expected llm or one of {sorted(agents_mod.BASELINES)}"
    )


def _opt_float(v):
    return None if v is None else float(v)


# --- subcommands -------------------------------------------------------------------

def cmd_ingest(args, file_cfg):
    source = EdgeListSource(args.edges, format=args.format)
    g, report = ingest(source)
    config = {"edges": args.edges, "format": args.format, "out": args.out}
    with manifest_scope(args, config, snapshot=report.snapshot_checksum) as outputs:
        save_graph(g, args.out)
        outputs.append(Path(args.out))
    print(f"lines_read        {report.lines_read}")
    print(f"edges_kept        {report.edges_kept}")
    for reason, count in sorted(report.edges_dropped.items()):
        print(f"edges_dropped.{reason}  {count}")
    print(f"nodes_total       {report.nodes_total}")
    print(f"scc_size          {report.scc_size}")
    print(f"snapshot          {report.snapshot_checksum}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_scc_stats(args, file_cfg):
    g, _ = open_graph(args)
    s = degree_stats(g)
    print(f"nodes             {g.num_nodes}")
    print(f"edges             {g.nnz}")
    print(f"snapshot          {graph_checksum(g)}")
    print(f"out_degree.min    {s.min}")
    print(f"out_degree.median {s.median}")
    print(f"out_degree.mean   {s.mean:.3f}")
    print(f"out_degree.max    {s.max}")
    print(f"frac_over_50      {s.frac_over_50:.6f}")
    return 0


def cmd_precompute(args, file_cfg):
    g, cache = open_graph(args)
    if not args.cache_dir:
        raise GraphError("precompute-distances needs --cache-dir to persist fields")
    targets: set[int] = set()
    for path in args.tasks:
        for t in load_tasks(path, g):
            targets.add(t.target)
    for title in args.target:
        node = g.resolve_title(title)
        if node is None:
            raise GraphError(f"unknown page title {title!r}")
        targets.add(node)
    before = cache.computed
    cache.warm(sorted(targets))
    print(f"targets           {len(targets)}")
    print(f"computed          {cache.computed - before}")
    print(f"cache_dir         {args.cache_dir}")
    return 0


def cmd_gen_tasks(args, file_cfg):
    g, cache = open_graph(args)
    if args.split in EVAL_SPLITS:
        spec = EVAL_SPLITS[args.split]
    else:
        raise TaskGenError(
            f"unknown split {args.split!r}; expected one of {sorted(EVAL_SPLITS)}"
        )
    out = args.out or f"tasks_{args.split}.jsonl"
    config = {"split": args.split, "seed": args.seed, "out": out}
    with manifest_scope(args, config, snapshot=graph_checksum(g), seed=args.seed) as outputs:
        tasks = generate_split(g, cache, spec, args.seed)
        save_tasks(tasks, out, g)
        outputs.append(Path(out))
    print(f"tasks             {len(tasks)}")
    print(f"out               {out}")
    return 0


def cmd_gen_probe(args, file_cfg):
    g, cache = open_graph(args)
    out = args.out or "probe.jsonl"
    config = {"seed": args.seed, "out": out}
    with manifest_scope(args, config, snapshot=graph_checksum(g), seed=args.seed) as outputs:
        samples = generate_probe_set(g, args.seed)
        save_probe_set(samples, out, g)
        outputs.append(Path(out))
    print(f"samples           {len(samples)}")
    print(f"out               {out}")
    return 0


def cmd_export_train(args, file_cfg):
    g, cache = open_graph(args)
    exclude = []
    for path in args.exclude:
        exclude.extend(load_tasks(path, g))
    out = args.out or "train_pairs.jsonl"
    config = {
        "seed": args.seed,
        "count": args.count,
        "exclude": list(args.exclude),
        "out": out,
    }
    with manifest_scope(args, config, snapshot=graph_checksum(g), seed=args.seed) as outputs:
        pairs = export_training_pairs(
            g, cache, seed=args.seed, count=args.count, exclude=exclude
        )
        save_training_pairs(pairs, out, g)
        outputs.append(Path(out))
    print(f"pairs             {len(pairs)}")
    print(f"excluded          {len(exclude)}")
    print(f"out               {out}")
    return 0


def cmd_import_pairs(args, file_cfg):
    g, cache = open_graph(args)
    out = args.out or "tasks_imported.jsonl"
    config = {"csv": args.csv, "out": out}
    with manifest_scope(args, config, snapshot=graph_checksum(g)) as outputs:
        tasks, report = import_pairs(args.csv, g, cache)
        save_tasks(tasks, out, g)
        outputs.append(Path(out))
    print(f"rows_read         {report.rows_read}")
    print(f"imported          {report.imported}")
    print(f"skipped           {len(report.skipped)}")
    for row, reason in report.skipped:
        print(f"  row {row}: {reason}", file=sys.stderr)
    print(f"out               {out}")
    return 0


def _play_one(task, agent, g, cache, config_base, index):
    fld = cache.get(task.target)
    config = GameConfig(
        max_steps=config_base.max_steps,
        link_cap=config_base.link_cap,
        rng_seed=derive_episode_seed(config_base.rng_seed, index),
        parse_retries=config_base.parse_retries,
    )
    return run_episode(task, agent, g, fld, config)


def cmd_play(args, file_cfg):
    g, cache = open_graph(args)
    if bool(args.split) == bool(args.tasks):
        raise TaskGenError("pass exactly one of --split or --tasks")
    tasks_path = args.tasks or str(Path(args.tasks_dir) / f"tasks_{args.split}.jsonl")
    tasks = load_tasks(tasks_path, g)
    agent = build_agent(args, file_cfg)
    out = args.out or f"trajs_{slug(Path(tasks_path).stem)}_{slug(agent.name)}.jsonl"
    base = GameConfig(
        max_steps=args.max_steps,
        link_cap=args.link_cap,
        rng_seed=args.seed,
        parse_retries=args.parse_retries,
    )
    config = {
        "tasks": tasks_path,
        "agent": agent.name,
        "seed": args.seed,
        "max_steps": args.max_steps,
        "link_cap": args.link_cap,
        "parallel": args.parallel,
        "out": out,
    }
    if isinstance(agent, LlmAgent):
        config["sampling"] = agent.sampling_params()

    with manifest_scope(args, config, snapshot=graph_checksum(g), seed=args.seed) as outputs:
        trajs = [None] * len(tasks)
        if args.parallel <= 1:
            for i, task in enumerate(tasks):
                trajs[i] = _play_one(task, agent, g, cache, base, i)
        else:
            with concurrent.futures.ThreadPoolExecutor(args.parallel) as pool:
                futures = [
                    pool.submit(_play_one, task, agent, g, cache, base, i)
                    for i, task in enumerate(tasks)
                ]
                # in-order collection keeps the log byte-deterministic
                for i, fut in enumerate(futures):
                    trajs[i] = fut.result()
        save_trajectories(trajs, out)
        outputs.append(Path(out))

    rows = build_report(trajs)
    sys.stdout.write(render_table(rows))
    print(f"out               {out}")
    return 0


class _OracleProbeAgent:
    """Privileged sanity agent: answers the probe truthfully from the graph."""

    name = "probe_oracle"

    def __init__(self, g):
        self.g = g

    def answer(self, sample, prompt: str) -> str:
        from .graphcore import has_edge

        return "\\boxed{yes}" if has_edge(self.g, sample.source, sample.target) else "\\boxed{no}"


def cmd_run_probe(args, file_cfg):
    g, cache = open_graph(args)
    samples = load_probe_set(args.probe, g)
    out = args.out or "probe_results.jsonl"
    if args.agent == "oracle":
        responder = _OracleProbeAgent(g)

        def ask(sample, prompt):
            return responder.answer(sample, prompt), 0, 0
        agent_name = responder.name
    else:
        llm = build_agent(args, file_cfg)
        if not isinstance(llm, LlmAgent):
            raise AgentConfigError("run-probe supports --agent oracle or llm")

        def ask(sample, prompt):
            from .agents import Observation

            reply = llm.decide(
                Observation(
                    system_text="",
                    user_text=prompt,
                    max_index=0,
                    current_title="",
                    target_title="",
                    history_titles=(),
                    presented_titles=(),
                )
            )
            return reply.raw_text, reply.tokens_in, reply.tokens_out
        agent_name = llm.name

    config = {"probe": args.probe, "agent": agent_name, "out": out}
    with manifest_scope(args, config, snapshot=graph_checksum(g)) as outputs:
        labels, predictions = [], []
        with open(out, "w", encoding="utf-8") as f:
            for sample in samples:
                prompt = render_probe_prompt(g, sample)
                raw, tin, tout = ask(sample, prompt)
                pred = parse_probe_response(raw)
                labels.append(sample.label)
                predictions.append(pred)
                f.write(
                    json.dumps(
                        {
                            "source": g.titles[sample.source],
                            "target": g.titles[sample.target],
                            "category": sample.category,
                            "label": sample.label,
                            "raw_response": raw,
                            "prediction": pred,
                            "tokens_in": tin,
                            "tokens_out": tout,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        outputs.append(Path(out))
        score = metrics_mod.probe_f1(labels, predictions)
    print(f"samples           {len(samples)}")
    print(f"precision         {score.precision:.4f}")
    print(f"recall            {score.recall:.4f}")
    print(f"f1                {score.f1:.4f}")
    print(f"discarded         {score.discarded}")
    print(f"out               {out}")
    return 0


def _load_log_paths(paths) -> list:
    trajs = []
    for spec in paths:
        p = Path(spec)
        if p.is_dir():
            for child in sorted(p.glob("*.jsonl")):
                trajs.extend(load_trajectories(child))
        else:
            trajs.extend(load_trajectories(p))
    return trajs


def cmd_analyze(args, file_cfg):
    trajs = _load_log_paths(args.logs)
    if not trajs:
        raise MetricsError("no trajectories found under --logs")
    by = tuple(k.strip() for k in args.by.split(",") if k.strip())
    rows = build_report(trajs, by=by, include_abandoned=args.include_abandoned)
    sys.stdout.write(render_table(rows))
    if args.out:
        with manifest_scope(args, {"logs": list(args.logs), "by": args.by}) as outputs:
            txt = Path(args.out + ".txt")
            txt.write_text(render_table(rows), encoding="utf-8")
            outputs.append(txt)
            jl = Path(args.out + ".jsonl")
            jl.write_text(render_jsonl(rows), encoding="utf-8")
            outputs.append(jl)
    return 0


def cmd_report(args, file_cfg):
    from .figures import render_report_figures

    trajs = _load_log_paths(args.logs)
    if not trajs:
        raise MetricsError("no trajectories found under --logs")
    rows = build_report(trajs, include_abandoned=args.include_abandoned)
    out_dir = Path(args.out_dir)
    config = {"logs": list(args.logs), "out_dir": str(out_dir)}
    with manifest_scope(args, config) as outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
        table_path = out_dir / "report.txt"
        table_path.write_text(render_table(rows), encoding="utf-8")
        outputs.append(table_path)

        jsonl_path = out_dir / "report.jsonl"
        jsonl_path.write_text(render_jsonl(rows), encoding="utf-8")
        outputs.append(jsonl_path)

        # the delimited output holds raw values, not display strings
        tsv_path = out_dir / "report.tsv"
        with open(tsv_path, "w", encoding="utf-8") as f:
            f.write("\t".join(metrics_mod.COLUMNS) + "\n")
            for r in rows:
                cells = [
                    r.split, r.agent, r.games, r.success_rate,
                    r.suboptimal_mean, r.parse_errors, r.loop_frequency,
                    r.recovery_rate, r.avg_max_visitation,
                    r.tokens_out_per_step, r.cost_per_step,
                ]
                f.write("\t".join("" if c is None else str(c) for c in cells) + "\n")
        outputs.append(tsv_path)

        outputs.extend(render_report_figures(rows, out_dir))
    sys.stdout.write(render_table(rows))
    print(f"out_dir           {out_dir}")
    return 0


def cmd_serve(args, file_cfg):
    import uvicorn

    from .service import create_app

    g, cache = open_graph(args)
    tasks_by_split = {}
    tasks_dir = Path(args.tasks_dir)
    for path in sorted(tasks_dir.glob("tasks_*.jsonl")):
        name = path.stem.removeprefix("tasks_")
        tasks_by_split[name] = load_tasks(path, g)
    host, _, port = args.bind.partition(":")
    app = create_app(
        g, cache, tasks_by_split, args.logs_dir, ui_dir=args.ui_dir
    )
    print(f"splits            {sorted(tasks_by_split)}")
    print(f"serving           http://{args.bind}")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


# --- dispatch ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wikirace",
        description="WikiRace navigation-game engine and evaluation harness",
    )
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--manifest", help="explicit RunManifest path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an edge list into a graph snapshot")
    p.add_argument("edges")
    p.add_argument("--format", choices=["tsv-titles", "tsv-ids"], default="tsv-titles")
    p.add_argument("--out", default="graph.wkrg")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("scc-stats", help="degree and size statistics of a snapshot")
    p.add_argument("--graph", required=True)
    p.set_defaults(handler=cmd_scc_stats)

    p = sub.add_parser("precompute-distances", help="warm the distance cache")
    p.add_argument("--graph", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--tasks", action="append", default=[], help="task files whose targets to warm")
    p.add_argument("--target", action="append", default=[], help="explicit target titles")
    p.set_defaults(handler=cmd_precompute)

    p = sub.add_parser("gen-tasks", help="generate an evaluation split")
    p.add_argument("--graph", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_gen_tasks)

    p = sub.add_parser("gen-probe", help="generate the world-knowledge probe set")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_gen_probe)

    p = sub.add_parser("export-train", help="export training pairs")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--exclude", action="append", default=[], help="task files to exclude")
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_export_train)

    p = sub.add_parser("import-pairs", help="import external source/target pairs")
    p.add_argument("csv")
    p.add_argument("--graph", required=True)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_import_pairs)

    p = sub.add_parser("play", help="run an agent over a task file")
    p.add_argument("--graph", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--split")
    p.add_argument("--tasks")
    p.add_argument("--tasks-dir", default=".")
    p.add_argument("--max-steps", type=int, default=30)
    p.add_argument("--link-cap", type=int, default=50)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parse-retries", type=int, default=2)
    p.add_argument("--model")
    p.add_argument("--api-base")
    p.add_argument("--temperature", type=float)
    p.add_argument("--rpm", type=float)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_play)

    p = sub.add_parser("run-probe", help="run the yes/no probe")
    p.add_argument("--graph", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--agent", default="oracle", help="oracle or llm")
    p.add_argument("--model")
    p.add_argument("--api-base")
    p.add_argument("--temperature", type=float)
    p.add_argument("--rpm", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_run_probe)

    p = sub.add_parser("serve", help="serve live sessions and the UI")
    p.add_argument("--graph", required=True)
    p.add_argument("--tasks-dir", default=".")
    p.add_argument("--logs-dir", default="logs")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--ui-dir")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=cmd_serve)

    p = sub.add_parser("analyze", help="aggregate trajectory logs into a table")
    p.add_argument("--logs", action="append", required=True)
    p.add_argument("--by", default="split,agent")
    p.add_argument("--include-abandoned", action="store_true")
    p.add_argument("--out", help="prefix for .txt/.jsonl copies")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("report", help="full report: table, delimited rows, figures")
    p.add_argument("--logs", action="append", required=True)
    p.add_argument("--out-dir", default="report")
    p.add_argument("--include-abandoned", action="store_true")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv_snapshot = list(argv) if argv is not None else sys.argv[1:]
    try:
        file_cfg = read_config_file(args.config)
        return args.handler(args, file_cfg)
    except FileNotFoundError as exc:
        name = exc.filename or str(exc)
        print(f"error: missing file: {name}", file=sys.stderr)
        return 2
    except (GraphError, IngestError, TaskGenError, MetricsError, AgentConfigError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
