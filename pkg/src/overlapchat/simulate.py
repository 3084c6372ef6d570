"""Headless virtual-time harness and offline replay.

simulate() drives a session engine from a scripted trace of client frames
whose timestamps ARE the clock: ticks, policy deliveries, and emissions all
advance in trace time, so a run is bit-reproducible on any machine at any
real-world speed. replay() rebuilds a transcript and metrics purely from a
recorded log and never contacts a backend.

Trace file format: newline-delimited JSON client frames (draft_update /
send), timestamps non-decreasing.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from pathlib import Path

from .analytics import MetricsReport, build_report, finalized_messages
from .codec import decode_event, log_from_lines, read_log, validate_event
from .engine import (
    CancelGeneration,
    Effect,
    EmitWire,
    EngineError,
    InvokePolicy,
    ScheduleTick,
    SessionEngine,
    message_order,
)
from .model import (
    BotChar,
    BotRetract,
    BotSend,
    ConversationLog,
    DraftUpdate,
    Error,
    Hello,
    Message,
    Origin,
    PeerDraft,
    Send,
    SessionConfig,
    Status,
    UserMessageAck,
    WireEvent,
)
from .policy import BackendError, CancellationToken, PolicyMode, RulePolicy


class TraceError(Exception):
    code = "BAD_TRACE"


def frame_origin(event: WireEvent) -> Origin:
    if isinstance(event, (Hello, DraftUpdate, Send)):
        return Origin.USER
    if isinstance(event, (BotChar, BotRetract, BotSend, Status)):
        return Origin.BOT
    return Origin.SYSTEM


def load_trace(path: str | Path) -> list[WireEvent]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return parse_trace(lines)


def parse_trace(lines: list[str]) -> list[WireEvent]:
    events: list[WireEvent] = []
    last_ts = None
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            event = decode_event(line)
        except Exception as exc:
            raise TraceError(f"line {line_no}: {exc}") from exc
        if not isinstance(event, (DraftUpdate, Send)):
            raise TraceError(f"line {line_no}: {type(event).__name__} is not a trace event")
        ts = event.ts
        if last_ts is not None and ts < last_ts:
            raise TraceError(f"line {line_no}: ts {ts} goes backwards")
        last_ts = ts
        events.append(event)
    return events


def make_typing_trace(
    text: str,
    chars_per_second: float = 8.0,
    start_ts: int = 0,
    pause_before_send_ms: int = 1500,
    send: bool = True,
) -> list[WireEvent]:
    """Character-by-character draft snapshots at a fixed typing rate, then
    (optionally) a send after a pause. Test and demo helper."""
    events: list[WireEvent] = []
    ts = start_ts
    for i in range(1, len(text) + 1):
        ts = start_ts + round(i * 1000 / chars_per_second)
        events.append(DraftUpdate(text[:i], ts))
    if send:
        events.append(Send(ts + pause_before_send_ms))
    return events


@dataclass
class SimResult:
    transcript: list[Message]
    log: ConversationLog
    metrics: MetricsReport
    frames: list[tuple[int, WireEvent]]
    handling_ns: list[int] = field(default_factory=list)
    trigger_to_first_char_ms: list[int] = field(default_factory=list)
    send_wall_times: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class _PendingCall:
    request_id: int
    token: CancellationToken
    deliver: object  # callable returning (value, error_code)


class VirtualPolicyRuntime:
    """Runs the policy synchronously but delivers results after a configured
    virtual latency, with pipeline tokens that stay cancellable until the
    resulting emission finishes."""

    def __init__(self, policy=None, latency_ms: int = 0):
        self.policy = policy if policy is not None else RulePolicy()
        self.latency_ms = latency_ms
        self.tokens: dict[int, CancellationToken] = {}

    def start(self, invoke: InvokePolicy):
        token = CancellationToken()
        self.tokens[invoke.request_id] = token
        if invoke.context.mode is PolicyMode.OVERLAP_TRIGGER:
            def deliver():
                try:
                    return self.policy.decide(invoke.context, token), None
                except BackendError as exc:
                    return None, exc.code
        else:
            def deliver():
                try:
                    return self.policy.respond(invoke.context, token), None
                except BackendError as exc:
                    return None, exc.code
        return _PendingCall(invoke.request_id, token, deliver)

    def cancel(self, request_id: int) -> None:
        token = self.tokens.get(request_id)
        if token is not None:
            token.cancel()


# heap priorities: policy deliveries before ticks before trace input at the
# same virtual instant, so a completed response lands before a simultaneous
# keystroke and an emission finishes before a simultaneous send
_PRIO_POLICY = 0
_PRIO_TICK = 1
_PRIO_TRACE = 2

_MAX_STEPS = 2_000_000


class SimulationRun:
    """One live simulated session that can be advanced one item at a time,
    so many sessions can be multiplexed the way the gateway's event loop
    multiplexes real ones."""

    def __init__(
        self,
        trace: list[WireEvent],
        config: SessionConfig | None = None,
        runtime: VirtualPolicyRuntime | None = None,
        session_id: str = "sim",
    ) -> None:
        self.config = config if config is not None else SessionConfig()
        self.runtime = runtime if runtime is not None else VirtualPolicyRuntime()
        self.engine = SessionEngine(self.config, session_id)
        self.log = ConversationLog(session_id, self.config)
        self.frames: list[tuple[int, WireEvent]] = []
        self.handling_ns: list[int] = []
        self.trigger_latencies: list[int] = []
        self.send_wall_times: list[tuple[int, float]] = []
        self._heap: list[tuple[int, int, int, object]] = []
        self._counter = 0
        self._scheduled_ticks: set[int] = set()
        self._pending_calls: dict[int, _PendingCall] = {}
        self._last_invoke_ts: int | None = None
        self._awaiting_first_char = False
        self._steps = 0
        for event in trace:
            self._push(event.ts, _PRIO_TRACE, event)

    def _push(self, ts: int, prio: int, item: object) -> None:
        heapq.heappush(self._heap, (ts, prio, self._counter, item))
        self._counter += 1

    def _emit(self, now: int, event: WireEvent) -> None:
        self.log.append(frame_origin(event), event, now)
        self.frames.append((now, event))
        if self._awaiting_first_char and isinstance(event, BotChar):
            self._awaiting_first_char = False
            if self._last_invoke_ts is not None:
                self.trigger_latencies.append(now - self._last_invoke_ts)

    def _perform(self, now: int, effects: list[Effect]) -> None:
        for effect in effects:
            if isinstance(effect, EmitWire):
                self._emit(now, effect.event)
            elif isinstance(effect, ScheduleTick):
                if effect.at_ts not in self._scheduled_ticks:
                    self._scheduled_ticks.add(effect.at_ts)
                    self._push(effect.at_ts, _PRIO_TICK, "tick")
            elif isinstance(effect, InvokePolicy):
                call = self.runtime.start(effect)
                self._pending_calls[effect.request_id] = call
                self._last_invoke_ts = now
                self._awaiting_first_char = True
                self._push(now + self.runtime.latency_ms, _PRIO_POLICY, call)
            elif isinstance(effect, CancelGeneration):
                self.runtime.cancel(effect.request_id)
                self._pending_calls.pop(effect.request_id, None)

    def step(self) -> bool:
        """Process the next due item; returns False once the session is
        quiescent (trace consumed, emissions finished, timers drained)."""
        if not self._heap:
            return False
        self._steps += 1
        if self._steps > _MAX_STEPS:
            raise TraceError("simulation did not quiesce")
        now, prio, _, item = heapq.heappop(self._heap)
        started = time.perf_counter_ns()
        if prio == _PRIO_TRACE:
            if isinstance(item, Send):
                self.send_wall_times.append((now, time.monotonic()))
            violation = validate_event(item, self.engine.summary())
            if violation is not None:
                self._emit(now, Error(violation.code, violation.detail))
            else:
                self._emit(now, item)
                try:
                    self._perform(now, self.engine.handle_client_event(item))
                except EngineError as exc:
                    self._emit(now, Error(exc.code, exc.detail))
        elif prio == _PRIO_TICK:
            self._scheduled_ticks.discard(now)
            self._perform(now, self.engine.on_tick(now))
        else:
            call = item
            if self._pending_calls.pop(call.request_id, None) is None or call.token.cancelled:
                self.handling_ns.append(time.perf_counter_ns() - started)
                return True
            value, error_code = call.deliver()
            if error_code is not None:
                self._perform(now, self.engine.on_policy_failure(call.request_id, error_code, now))
            else:
                self._perform(now, self.engine.on_policy_result(call.request_id, value, now))
        self.handling_ns.append(time.perf_counter_ns() - started)
        return True

    def result(self) -> SimResult:
        return SimResult(
            transcript=self.engine.transcript(),
            log=self.log,
            metrics=build_report(self.log),
            frames=self.frames,
            handling_ns=self.handling_ns,
            trigger_to_first_char_ms=self.trigger_latencies,
            send_wall_times=self.send_wall_times,
        )


class Simulator:
    def __init__(
        self,
        config: SessionConfig | None = None,
        runtime: VirtualPolicyRuntime | None = None,
        session_id: str = "sim",
    ) -> None:
        self.config = config if config is not None else SessionConfig()
        self.runtime = runtime if runtime is not None else VirtualPolicyRuntime()
        self.session_id = session_id

    def run(self, trace: list[WireEvent]) -> SimResult:
        run = SimulationRun(trace, self.config, self.runtime, self.session_id)
        while run.step():
            pass
        return run.result()


def simulate(
    trace: list[WireEvent] | str | Path,
    config: SessionConfig | None = None,
    runtime: VirtualPolicyRuntime | None = None,
    session_id: str = "sim",
) -> SimResult:
    if isinstance(trace, (str, Path)):
        trace = load_trace(trace)
    return Simulator(config, runtime, session_id).run(trace)


@dataclass
class ReplayResult:
    transcript: list[Message]
    metrics: MetricsReport
    log: ConversationLog


def replay(source: str | Path | ConversationLog) -> ReplayResult:
    """Reconstruct transcript and metrics from a recorded log alone."""
    if isinstance(source, ConversationLog):
        log = source
    elif isinstance(source, (str, Path)):
        log = read_log(source)
    else:
        raise TypeError("replay expects a path or a ConversationLog")
    messages = finalized_messages(log)
    by_id = {m.id: m for m in messages}
    ordered = [by_id[i] for i in message_order(messages)]
    return ReplayResult(transcript=ordered, metrics=build_report(log), log=log)


def replay_lines(lines: list[str]) -> ReplayResult:
    return replay(log_from_lines(lines))


def transcript_lines(messages: list[Message]) -> list[str]:
    """Human-readable transcript rendering shared by the CLI commands."""
    out = []
    for m in messages:
        speaker = "User" if m.role.value == "user" else "Bot"
        marks = []
        if m.act is not None:
            marks.append(m.act.value)
        if m.sealed_with_ellipsis:
            marks.append("sealed")
        suffix = f"  [{', '.join(marks)}]" if marks else ""
        out.append(f"[{m.sent_ts / 1000:8.3f}s] {speaker}: {m.text}{suffix}")
    return out
