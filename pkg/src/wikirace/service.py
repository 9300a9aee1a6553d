"""HTTP service for live interactive games: session lifecycle, move
semantics, task listings, and results, persisting every terminal session
in the same JSONL schema as engine runs.

The per-session step RNG is derived from the session id, so a page refresh
can never reshuffle the current links, and an engine replay of the same
choices under that seed reproduces the trajectory field for field.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .engine import (
    GameConfig,
    GameTrajectory,
    StepRecord,
    filter_links,
    step_rng,
    trajectory_to_dict,
)
from .graphcore import DistanceCache, PageGraph, graph_checksum, out_neighbors
from .tasks import TaskInstance

SESSION_TTL = 86400.0  # seconds of inactivity before failure(abandoned)


class ServiceError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


def derive_session_seed(session_id: str) -> int:
    digest = hashlib.sha256(session_id.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class Session:
    session_id: str
    task: TaskInstance
    config: GameConfig
    player: str
    created_at: float
    last_active: float
    current: int
    history: list[int]
    presented: list[int]
    steps: list[StepRecord] = field(default_factory=list)
    status: str = "running"
    failure_reason: str | None = None
    step_started: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def steps_taken(self) -> int:
        return len(self.history) - 1


class CreateBody(BaseModel):
    split: str | None = None
    index: int | None = None
    source: str | None = None
    target: str | None = None


class MoveBody(BaseModel):
    choice: int


class SessionStore:
    """All mutable service state: live sessions plus the append-only log."""

    def __init__(
        self,
        graph: PageGraph,
        cache: DistanceCache,
        tasks_by_split: dict[str, list[TaskInstance]],
        log_dir: str | Path,
        now_fn=time.time,
        session_ttl: float = SESSION_TTL,
    ):
        self.graph = graph
        self.cache = cache
        self.tasks_by_split = tasks_by_split
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.now_fn = now_fn
        self.session_ttl = session_ttl
        self.snapshot = graph_checksum(graph)
        self.sessions: dict[str, Session] = {}
        self._sessions_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self.results: list[dict] = []
        self._load_existing_logs()

    def _load_existing_logs(self) -> None:
        for path in sorted(self.log_dir.glob("sessions-*.jsonl")):
            with open(path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        self.results.append(json.loads(line))

    # -- task resolution --

    def resolve_task(self, body: CreateBody) -> TaskInstance:
        if body.split is not None:
            tasks = self.tasks_by_split.get(body.split)
            if tasks is None:
                raise ServiceError(
                    "task_not_found", f"unknown split {body.split!r}", 404
                )
            index = body.index if body.index is not None else 0
            if not 0 <= index < len(tasks):
                raise ServiceError(
                    "task_not_found",
                    f"split {body.split!r} has no task index {index}",
                    404,
                )
            return tasks[index]
        if body.source is not None and body.target is not None:
            g = self.graph
            source = g.resolve_title(body.source)
            target = g.resolve_title(body.target)
            if source is None or target is None:
                missing = body.source if source is None else body.target
                raise ServiceError(
                    "task_not_found", f"unknown page title {missing!r}", 404
                )
            if source == target:
                raise ServiceError("invalid_task", "source equals target", 400)
            length = int(self.cache.get(target).dist[source])
            return TaskInstance(source, target, length, "custom", self.snapshot)
        raise ServiceError(
            "invalid_request", "pass either split(+index) or source+target", 400
        )

    # -- session lifecycle --

    def create(self, body: CreateBody) -> Session:
        task = self.resolve_task(body)
        now = self.now_fn()
        session_id = uuid.uuid4().hex
        config = GameConfig(rng_seed=derive_session_seed(session_id))
        session = Session(
            session_id=session_id,
            task=task,
            config=config,
            player="human",
            created_at=now,
            last_active=now,
            current=task.source,
            history=[task.source],
            presented=[],
            step_started=now,
        )
        self._present_links(session)
        with self._sessions_lock:
            self.sessions[session_id] = session
        return session

    def _present_links(self, session: Session) -> None:
        fld = self.cache.get(session.task.target)
        rng = step_rng(session.config.rng_seed, session.steps_taken)
        session.presented = filter_links(
            out_neighbors(self.graph, session.current),
            fld,
            session.config.link_cap,
            rng,
        )

    def get(self, session_id: str) -> Session:
        self.sweep_expired()
        with self._sessions_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError("session_not_found", f"no session {session_id}", 404)
        return session

    def sweep_expired(self) -> None:
        now = self.now_fn()
        with self._sessions_lock:
            expired = [
                s
                for s in self.sessions.values()
                if s.status == "running" and now - s.last_active > self.session_ttl
            ]
        for session in expired:
            with session.lock:
                if session.status != "running":
                    continue
                session.status = "failure"
                session.failure_reason = "abandoned"
                self._finalize(session)
            with self._sessions_lock:
                self.sessions.pop(session.session_id, None)

    def move(self, session_id: str, choice: int) -> Session:
        session = self.get(session_id)
        with session.lock:
            if session.status != "running":
                raise ServiceError(
                    "session_terminal", "this game already ended", 409
                )
            if not 0 <= choice < len(session.presented):
                # a misclick must not consume a step
                raise ServiceError(
                    "invalid_choice",
                    f"choice must be in [0, {len(session.presented) - 1}]",
                    400,
                )
            g = self.graph
            now = self.now_fn()
            nxt = session.presented[choice]
            session.steps.append(
                StepRecord(
                    step_index=session.steps_taken,
                    page_before=g.titles[session.current],
                    presented=[g.titles[p] for p in session.presented],
                    raw_response=str(choice),
                    chosen_index=choice,
                    page_after=g.titles[nxt],
                    latency=now - session.step_started,
                )
            )
            session.history.append(nxt)
            session.current = nxt
            session.last_active = now
            session.step_started = now
            if nxt == session.task.target:
                session.status = "success"
                session.presented = []
                self._finalize(session)
            elif session.steps_taken >= session.config.max_steps:
                session.status = "failure"
                session.failure_reason = "step_budget"
                session.presented = []
                self._finalize(session)
            else:
                self._present_links(session)
        return session

    # -- persistence --

    def to_trajectory(self, session: Session) -> GameTrajectory:
        g = self.graph
        task = session.task
        return GameTrajectory(
            source=g.titles[task.source],
            target=g.titles[task.target],
            optimal_length=task.optimal_length,
            split=task.split,
            snapshot=task.snapshot_checksum,
            agent=session.player,
            privileged=False,
            config=session.config,
            outcome=session.status,
            failure_reason=session.failure_reason,
            steps_taken=session.steps_taken,
            tokens_in=0,
            tokens_out=0,
            cost=None,
            wall_time=sum(s.latency for s in session.steps),
            steps=list(session.steps),
        )

    def _finalize(self, session: Session) -> None:
        record = trajectory_to_dict(self.to_trajectory(session))
        day = datetime.fromtimestamp(self.now_fn(), tz=timezone.utc).strftime("%Y%m%d")
        path = self.log_dir / f"sessions-{day}.jsonl"
        with self._log_lock:
            with open(path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
            self.results.append(record)

    # -- views --

    def state_payload(self, session: Session) -> dict:
        g = self.graph
        payload = {
            "session_id": session.session_id,
            "status": session.status,
            "current": g.titles[session.current],
            "target": g.titles[session.task.target],
            "history": [g.titles[p] for p in session.history],
            "presented": [g.titles[p] for p in session.presented],
            "steps_taken": session.steps_taken,
            "steps_remaining": session.config.max_steps - session.steps_taken,
            "step_budget": session.config.max_steps,
        }
        if session.status != "running":
            payload["failure_reason"] = session.failure_reason
            payload["optimal_length"] = session.task.optimal_length
            if session.status == "success":
                payload["suboptimal_steps"] = (
                    session.steps_taken - session.task.optimal_length
                )
        return payload


def create_app(
    graph: PageGraph,
    cache: DistanceCache,
    tasks_by_split: dict[str, list[TaskInstance]],
    log_dir: str | Path,
    ui_dir: str | Path | None = None,
    now_fn=time.time,
    session_ttl: float = SESSION_TTL,
) -> FastAPI:
    store = SessionStore(graph, cache, tasks_by_split, log_dir, now_fn, session_ttl)
    app = FastAPI(title="wikirace", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error(_req: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "invalid_request", "message": str(exc.errors())},
        )

    @app.post("/api/sessions")
    def create_session(body: CreateBody):
        session = store.create(body)
        g = store.graph
        return {
            "session_id": session.session_id,
            "source": g.titles[session.task.source],
            "target": g.titles[session.task.target],
            "step_budget": session.config.max_steps,
        }

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        return store.state_payload(store.get(session_id))

    @app.post("/api/sessions/{session_id}/move")
    def move(session_id: str, body: MoveBody):
        return store.state_payload(store.move(session_id, body.choice))

    @app.get("/api/tasks")
    def list_tasks(split: str | None = None):
        if split is None:
            return {
                "splits": {name: len(ts) for name, ts in store.tasks_by_split.items()}
            }
        tasks = store.tasks_by_split.get(split)
        if tasks is None:
            raise ServiceError("split_not_found", f"unknown split {split!r}", 404)
        g = store.graph
        return {
            "tasks": [
                {
                    "index": i,
                    "source": g.titles[t.source],
                    "target": g.titles[t.target],
                    "optimal_length": t.optimal_length,
                }
                for i, t in enumerate(tasks)
            ]
        }

    @app.get("/api/results")
    def get_results(player: str | None = None, split: str | None = None,
                    outcome: str | None = None):
        store.sweep_expired()
        rows = store.results
        if player is not None:
            rows = [r for r in rows if r["agent"]["name"] == player]
        if split is not None:
            rows = [r for r in rows if r["task"]["split"] == split]
        if outcome is not None:
            rows = [r for r in rows if r["outcome"] == outcome]
        return {"results": rows}

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
