"""Service shell: session lifecycle, full-duplex streaming, persistence.

One asyncio loop per session owns that session's engine; sessions share
nothing but the policy backend. Outbound frames pass through a per-session
sender task that merges consecutive character chunks when the client is
slow (never reordering or dropping) and appends every transmitted frame to
the session's log file, so a finished or crashed session replays exactly
from disk.

Endpoints: POST /sessions, GET /sessions/{id}/transcript, GET
/sessions/{id}/metrics, GET /healthz, and the websocket attach at
GET /sessions/{id}/stream (one client per session; frames are
newline-delimited JSON wire events, one per message).
"""

from __future__ import annotations

import asyncio
import collections
import contextlib
import json
import logging
import os
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse

from .analytics import build_report
from .codec import (
    ParseError,
    decode_event,
    encode_entry,
    encode_event,
    encode_header,
    message_to_dict,
    validate_event,
)
from .engine import (
    CancelGeneration,
    EmitWire,
    EngineError,
    InvokePolicy,
    ScheduleTick,
    SessionEngine,
)
from .model import (
    BotChar,
    ConversationLog,
    DraftUpdate,
    Error,
    Hello,
    Send,
    SessionConfig,
    WireEvent,
)
from .policy import (
    BackendError,
    CancellationToken,
    ModelPolicy,
    PolicyMode,
    RemoteBackend,
    RulePolicy,
    StubBackend,
)
from .simulate import frame_origin

logger = logging.getLogger("overlapchat.gateway")

ENV_BACKEND_URL = "OVERLAPCHAT_BACKEND_URL"
ENV_LOG_DIR = "OVERLAPCHAT_LOG_DIR"


@dataclass(frozen=True)
class GatewayConfig:
    listen: str = "127.0.0.1:8080"
    backend_kind: str = "stub"
    backend_url: str | None = None
    policy_kind: str = "rule"
    log_dir: str = "./logs"
    ui_dir: str | None = None
    max_sessions: int = 256
    session: SessionConfig = field(default_factory=SessionConfig)

    def __post_init__(self) -> None:
        if self.backend_kind not in ("stub", "remote"):
            raise ValueError(f"backend kind must be stub or remote, got {self.backend_kind!r}")
        if self.policy_kind not in ("rule", "model"):
            raise ValueError(f"policy kind must be rule or model, got {self.policy_kind!r}")
        if self.backend_kind == "remote" and not self.backend_url:
            raise ValueError("remote backend requires a url")

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])


def load_config(
    path: str | Path | None = None,
    env: dict | None = None,
    **overrides,
) -> GatewayConfig:
    """Assemble gateway config with precedence flag > env > file > default."""
    env = env if env is not None else dict(os.environ)
    values: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        session_raw = raw.pop("session", {})
        values.update(raw)
        if session_raw:
            values["session"] = SessionConfig(**session_raw)
    if env.get(ENV_BACKEND_URL):
        values["backend_url"] = env[ENV_BACKEND_URL]
        values.setdefault("backend_kind", "remote")
    if env.get(ENV_LOG_DIR):
        values["log_dir"] = env[ENV_LOG_DIR]
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return GatewayConfig(**values)


def build_policy(config: GatewayConfig):
    if config.backend_kind == "remote":
        backend = RemoteBackend(config.backend_url)
    else:
        backend = StubBackend()
    if config.policy_kind == "model":
        return ModelPolicy(backend)
    return RulePolicy(backend)


@dataclass
class SessionHandle:
    session_id: str
    created_at: float
    state: str = "active"  # active | closed


class SessionRuntime:
    """Owns one session: engine, log file, input queue, timers, policy tasks."""

    def __init__(self, handle: SessionHandle, config: SessionConfig, policy, log_path: Path):
        self.handle = handle
        self.config = config
        self.policy = policy
        self.engine = SessionEngine(config, handle.session_id)
        self.log = ConversationLog(handle.session_id, config)
        self.queue: asyncio.Queue = asyncio.Queue()
        self.outbox: collections.deque[WireEvent] = collections.deque()
        self.outbox_ready = asyncio.Event()
        self.client: WebSocket | None = None
        self.created_monotonic = time.monotonic()
        self.tokens: dict[int, CancellationToken] = {}
        self.tasks: set[asyncio.Task] = set()
        self._log_file = open(log_path, "a", encoding="utf-8")
        self._log_file.write(encode_header(self.log) + "\n")
        self._log_file.flush()
        self._loop_task: asyncio.Task | None = None
        self._sender_task: asyncio.Task | None = None

    def now_ms(self) -> int:
        return int((time.monotonic() - self.created_monotonic) * 1000)

    def start(self) -> None:
        if self._loop_task is None:
            self._loop_task = asyncio.create_task(self._loop())
            self._sender_task = asyncio.create_task(self._sender())

    async def close(self) -> None:
        self.handle.state = "closed"
        for task in (self._loop_task, self._sender_task, *list(self.tasks)):
            if task is not None:
                task.cancel()
        self._log_file.close()

    def _record(self, event: WireEvent) -> None:
        entry = self.log.append(frame_origin(event), event, int(time.time() * 1000))
        if not self._log_file.closed:
            self._log_file.write(encode_entry(entry) + "\n")
            self._log_file.flush()

    def enqueue_outbound(self, event: WireEvent) -> None:
        self.outbox.append(event)
        self.outbox_ready.set()

    async def _sender(self) -> None:
        """Drain the outbox in order; consecutive character chunks waiting
        together are merged into one frame before transmission and logging."""
        while True:
            await self.outbox_ready.wait()
            while self.outbox:
                event = self.outbox.popleft()
                if isinstance(event, BotChar):
                    while self.outbox and isinstance(self.outbox[0], BotChar):
                        event = BotChar(event.text_chunk + self.outbox.popleft().text_chunk)
                self._record(event)
                client = self.client
                if client is not None:
                    try:
                        await client.send_text(encode_event(event))
                    except Exception:
                        self.client = None
            self.outbox_ready.clear()

    async def _loop(self) -> None:
        while True:
            kind, payload = await self.queue.get()
            now = self.now_ms()
            try:
                if kind == "frame":
                    event = payload
                    violation = validate_event(event, self.engine.summary())
                    if violation is not None:
                        self.enqueue_outbound(Error(violation.code, violation.detail))
                        continue
                    self._record(event)
                    try:
                        effects = self.engine.handle_client_event(event)
                    except EngineError as exc:
                        self.enqueue_outbound(Error(exc.code, exc.detail))
                        continue
                    self._perform(effects, now)
                elif kind == "tick":
                    self._perform(self.engine.on_tick(now), now)
                elif kind == "policy":
                    request_id, value, error_code = payload
                    if error_code is None:
                        effects = self.engine.on_policy_result(request_id, value, now)
                    else:
                        effects = self.engine.on_policy_failure(request_id, error_code, now)
                    self._perform(effects, now)
            except asyncio.CancelledError:
                raise
            except Exception:
                logger.exception("session %s loop error", self.handle.session_id)

    def _perform(self, effects, now: int) -> None:
        for effect in effects:
            if isinstance(effect, EmitWire):
                self.enqueue_outbound(effect.event)
            elif isinstance(effect, ScheduleTick):
                delay = max(0.0, (effect.at_ts - self.now_ms()) / 1000)
                asyncio.get_running_loop().call_later(
                    delay, self.queue.put_nowait, ("tick", effect.at_ts)
                )
            elif isinstance(effect, InvokePolicy):
                self._start_policy(effect)
            elif isinstance(effect, CancelGeneration):
                token = self.tokens.pop(effect.request_id, None)
                if token is not None:
                    token.cancel()

    def _start_policy(self, invoke: InvokePolicy) -> None:
        token = CancellationToken()
        self.tokens[invoke.request_id] = token
        overlap = invoke.context.mode is PolicyMode.OVERLAP_TRIGGER

        async def run() -> None:
            try:
                if overlap:
                    value = await asyncio.to_thread(self.policy.decide, invoke.context, token)
                else:
                    value = await asyncio.to_thread(self.policy.respond, invoke.context, token)
                self.queue.put_nowait(("policy", (invoke.request_id, value, None)))
            except BackendError as exc:
                self.queue.put_nowait(("policy", (invoke.request_id, None, exc.code)))
            except Exception:
                logger.exception("policy call failed")
                self.queue.put_nowait(("policy", (invoke.request_id, None, "UNREACHABLE")))

        task = asyncio.create_task(run())
        self.tasks.add(task)
        task.add_done_callback(self.tasks.discard)


def create_app(config: GatewayConfig | None = None) -> FastAPI:
    config = config if config is not None else GatewayConfig()
    log_dir = Path(config.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    policy = build_policy(config)
    sessions: dict[str, SessionRuntime] = {}

    @contextlib.asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        for runtime in list(sessions.values()):
            await runtime.close()

    app = FastAPI(title="overlapchat gateway", lifespan=lifespan)
    app.state.sessions = sessions
    app.state.config = config

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/sessions", status_code=201)
    async def create_session(overrides: dict | None = None):
        if len(sessions) >= config.max_sessions:
            return JSONResponse(
                {"code": "LIMIT", "detail": f"at most {config.max_sessions} sessions"},
                status_code=429,
            )
        try:
            session_config = config.session.with_overrides(overrides or {})
        except (ValueError, TypeError) as exc:
            return JSONResponse({"code": "BAD_OVERRIDE", "detail": str(exc)}, status_code=400)
        session_id = uuid.uuid4().hex[:12]
        handle = SessionHandle(session_id=session_id, created_at=time.time())
        runtime = SessionRuntime(handle, session_config, policy, log_dir / f"{session_id}.jsonl")
        sessions[session_id] = runtime
        runtime.start()
        return {"session_id": session_id}

    def _find(session_id: str) -> SessionRuntime | None:
        runtime = sessions.get(session_id)
        if runtime is None or runtime.handle.state != "active":
            return None
        return runtime

    @app.get("/sessions/{session_id}/transcript")
    async def transcript(session_id: str):
        runtime = _find(session_id)
        if runtime is None:
            return JSONResponse({"code": "NOT_FOUND", "detail": session_id}, status_code=404)
        return {
            "session_id": session_id,
            "messages": [message_to_dict(m) for m in runtime.engine.transcript()],
        }

    @app.get("/sessions/{session_id}/metrics")
    async def metrics(session_id: str):
        runtime = _find(session_id)
        if runtime is None:
            return JSONResponse({"code": "NOT_FOUND", "detail": session_id}, status_code=404)
        return build_report(runtime.log).to_dict()

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        await websocket.accept()
        runtime = _find(session_id)
        if runtime is None:
            await websocket.send_text(encode_event(Error("NOT_FOUND", session_id)))
            await websocket.close(code=1008)
            return
        if runtime.client is not None:
            await websocket.send_text(
                encode_event(Error("ALREADY_ATTACHED", "one client per session"))
            )
            await websocket.close(code=1008)
            return
        runtime.client = websocket
        runtime.outbox_ready.set()
        try:
            while True:
                line = await websocket.receive_text()
                try:
                    event = decode_event(line)
                except ParseError as exc:
                    runtime.enqueue_outbound(Error(exc.code, str(exc)))
                    continue
                if isinstance(event, (DraftUpdate, Send)):
                    # the server session clock wins over the client's idea of time
                    stamped = runtime.now_ms()
                    event = (
                        DraftUpdate(event.text, stamped)
                        if isinstance(event, DraftUpdate)
                        else Send(stamped)
                    )
                elif not isinstance(event, Hello):
                    runtime.enqueue_outbound(Error("UNEXPECTED_EVENT", type(event).__name__))
                    continue
                runtime.queue.put_nowait(("frame", event))
        except WebSocketDisconnect:
            pass
        finally:
            if runtime.client is websocket:
                runtime.client = None

    @app.get("/", response_class=HTMLResponse)
    async def index():
        if config.ui_dir:
            index_path = Path(config.ui_dir) / "index.html"
            if index_path.exists():
                return HTMLResponse(index_path.read_text(encoding="utf-8"))
        return HTMLResponse(
            "<html><body><h1>overlapchat gateway</h1>"
            "<p>No UI bundle configured; the API and stream endpoints are live.</p>"
            "</body></html>"
        )

    if config.ui_dir and Path(config.ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir), name="ui")

    return app
