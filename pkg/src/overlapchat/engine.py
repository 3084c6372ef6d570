"""Per-session state machine for overlap-capable chat.

The engine is a pure state-transition core: every entry point takes the
current time, mutates session state, and returns a list of Effect values.
All I/O (frame transport, timers, policy calls) is performed by whichever
driver owns the engine, so the same code runs under the live gateway and
the virtual-time simulator and produces identical effect sequences for
identical inputs.

Concurrency contract: one writer per engine (the session loop). At most one
bot emission and at most one policy invocation are in flight at any time;
a user Send cancels whichever is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import (
    BotChar,
    BotRetract,
    BotSend,
    BotStatus,
    ConversationLog,
    DialogueAct,
    DraftState,
    DraftUpdate,
    Hello,
    Message,
    PeerDraft,
    PolicyDecision,
    RetractMode,
    Role,
    Send,
    SessionConfig,
    Status,
    TimingDecision,
    UserMessageAck,
    WireEvent,
)
from .policy import APOLOGY_TEXT, DraftBudgets, PolicyContext, PolicyMode

MAX_DRAFT_CHARS = 10_000


class EngineError(Exception):
    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


@dataclass
class BotEmission:
    """One in-progress character-by-character bot response."""

    full_text: str
    act: DialogueAct | None
    emitted_chars: int
    started_ts: int
    request_id: int


@dataclass
class PendingInvocation:
    """The single policy call allowed in flight, keyed by draft revision so
    stale completions can be discarded."""

    request_id: int
    mode: PolicyMode
    draft_revision: int


@dataclass
class SessionState:
    user_draft: DraftState
    bot_emission: BotEmission | None = None
    messages: list[Message] = field(default_factory=list)
    last_policy_invocation_ts: int | None = None
    next_message_id: int = 0
    pending: PendingInvocation | None = None


# Effects are plain data; the engine performs no I/O itself.


@dataclass(frozen=True)
class EmitWire:
    event: WireEvent


@dataclass(frozen=True)
class InvokePolicy:
    context: PolicyContext
    request_id: int
    draft_revision: int


@dataclass(frozen=True)
class CancelGeneration:
    request_id: int


@dataclass(frozen=True)
class ScheduleTick:
    at_ts: int


Effect = EmitWire | InvokePolicy | CancelGeneration | ScheduleTick


def resolve_interruption(emitted_chars: int, threshold: int) -> RetractMode:
    """Seal iff strictly more than threshold characters are already visible.

    "Exceeds" is read as a strict inequality: at exactly the threshold the
    partial response is still deleted outright.
    """
    if emitted_chars < 0:
        raise ValueError("emitted_chars must be >= 0")
    return RetractMode.SEAL if emitted_chars > threshold else RetractMode.FULL


def is_deletion(previous: str, new: str) -> bool:
    """A draft change deletes iff the previous text is not a prefix of the new."""
    return not new.startswith(previous)


def completion_ts(started_ts: int, text_len: int, chars_per_second: int) -> int:
    """Virtual timestamp at which the last character of an emission lands."""
    return started_ts + math.ceil(text_len * 1000 / chars_per_second)


def schedule_policy_trigger(
    state: SessionState, now: int, config: SessionConfig
) -> PolicyContext | None:
    """Decide whether an overlap policy invocation may fire right now.

    All conditions must hold: overlap enabled, bot idle (no emission, no
    in-flight invocation), enough draft tokens, the user is at a natural
    boundary (trailing whitespace or a pause), the cooldown has elapsed, and
    at least one per-draft overlap budget remains.
    """
    if not config.overlap_enabled:
        return None
    if state.bot_emission is not None or state.pending is not None:
        return None
    draft = state.user_draft
    tokens = draft.text.split()
    if len(tokens) < config.min_trigger_tokens:
        return None
    at_boundary = draft.text[-1:].isspace() or (now - draft.last_change_ts >= config.trigger_pause_ms)
    if not at_boundary:
        return None
    if (
        state.last_policy_invocation_ts is not None
        and now - state.last_policy_invocation_ts < config.cooldown_ms
    ):
        return None
    budgets = _budgets(state, config)
    if budgets.backchannels_left <= 0 and budgets.preemptive_left <= 0:
        return None
    return PolicyContext(
        transcript=tuple(state.messages),
        live_draft=draft.text,
        draft_budgets=budgets,
        mode=PolicyMode.OVERLAP_TRIGGER,
    )


def _budgets(state: SessionState, config: SessionConfig) -> DraftBudgets:
    draft = state.user_draft
    return DraftBudgets(
        backchannels_left=config.max_backchannels_per_draft - draft.backchannels_used,
        preemptive_left=config.max_preemptive_per_draft - draft.preemptive_used,
        backchannels_used=draft.backchannels_used,
    )


def message_order(source) -> list[int]:
    """Transcript order: by finalization time, user before bot on ties.

    Accepts a message list or a ConversationLog (finalized messages are the
    ones carried by ack/send frames)."""
    if isinstance(source, ConversationLog):
        messages = [
            e.event.message
            for e in source
            if isinstance(e.event, (UserMessageAck, BotSend))
        ]
    else:
        messages = list(source)
    ordered = sorted(
        messages, key=lambda m: (m.sent_ts, 0 if m.role is Role.USER else 1, m.id)
    )
    return [m.id for m in ordered]


class SessionEngine:
    def __init__(self, config: SessionConfig, session_id: str = "session") -> None:
        self.config = config
        self.session_id = session_id
        self.state = SessionState(user_draft=DraftState(owner=Role.USER))
        self._next_request_id = 0
        # last trigger-retry tick already requested, to avoid re-emitting it
        self._requested_trigger_tick: int | None = None

    # -- client events ------------------------------------------------------

    def handle_client_event(self, event: WireEvent) -> list[Effect]:
        if isinstance(event, DraftUpdate):
            return self.apply_user_draft(event.text, event.ts)
        if isinstance(event, Send):
            return self.apply_user_send(event.ts)
        if isinstance(event, Hello):
            return []
        raise EngineError("UNEXPECTED_EVENT", type(event).__name__)

    def apply_user_draft(self, text: str, ts: int) -> list[Effect]:
        if len(text) > MAX_DRAFT_CHARS:
            raise EngineError("OVERSIZE", f"draft of {len(text)} chars exceeds {MAX_DRAFT_CHARS}")
        draft = self.state.user_draft
        if draft.text == "" and text != "":
            draft.started_ts = ts
        draft.text = text
        draft.revision += 1
        draft.last_change_ts = ts
        self._requested_trigger_tick = None
        effects: list[Effect] = [EmitWire(PeerDraft(Role.USER, text))]
        effects.extend(self._trigger_effects(ts))
        return effects

    def apply_user_send(self, ts: int) -> list[Effect]:
        state = self.state
        draft = state.user_draft
        if draft.text == "":
            raise EngineError("EMPTY_SEND", "send with an empty draft")

        effects: list[Effect] = []
        user_message = Message(
            id=state.next_message_id,
            role=Role.USER,
            text=draft.text,
            sent_ts=ts,
            draft_started_ts=draft.started_ts,
        )
        state.next_message_id += 1
        state.messages.append(user_message)
        effects.append(EmitWire(UserMessageAck(user_message)))

        if state.bot_emission is not None:
            effects.extend(self._interrupt_emission(ts))
        elif state.pending is not None:
            # a Send supersedes whatever the policy was asked about
            effects.append(CancelGeneration(state.pending.request_id))
            state.pending = None

        draft.text = ""
        draft.revision += 1
        draft.last_change_ts = ts
        draft.started_ts = ts
        draft.backchannels_used = 0
        draft.preemptive_used = 0
        self._requested_trigger_tick = None

        effects.append(self._invoke(PolicyMode.FULL_RESPONSE, ts))
        return effects

    def _interrupt_emission(self, ts: int) -> list[Effect]:
        state = self.state
        emission = state.bot_emission
        assert emission is not None
        effects: list[Effect] = []
        action = resolve_interruption(
            emission.emitted_chars, self.config.interrupt_seal_threshold_chars
        )
        visible = emission.full_text[: emission.emitted_chars]
        if action is RetractMode.SEAL:
            effects.append(EmitWire(BotRetract(RetractMode.SEAL, visible)))
            sealed = Message(
                id=state.next_message_id,
                role=Role.BOT,
                text=visible + "...",
                sent_ts=ts,
                draft_started_ts=emission.started_ts,
                sealed_with_ellipsis=True,
                act=emission.act,
            )
            state.next_message_id += 1
            state.messages.append(sealed)
            effects.append(EmitWire(BotSend(sealed)))
        else:
            effects.append(EmitWire(BotRetract(RetractMode.FULL, "")))
        effects.append(EmitWire(Status(BotStatus.IDLE)))
        effects.append(CancelGeneration(emission.request_id))
        state.bot_emission = None
        return effects

    # -- policy results -----------------------------------------------------

    def on_policy_result(self, request_id: int, value, now: int) -> list[Effect]:
        """Deliver a completed policy invocation.

        value is a PolicyDecision for overlap triggers or the response text
        for full responses. Stale completions (superseded request, changed
        draft) are dropped without effect.
        """
        pending = self.state.pending
        if pending is None or pending.request_id != request_id:
            return []
        self.state.pending = None
        if pending.mode is PolicyMode.OVERLAP_TRIGGER:
            if not isinstance(value, PolicyDecision):
                return []
            if pending.draft_revision != self.state.user_draft.revision:
                return []
            if value.timing is TimingDecision.AWAIT:
                return self._trigger_effects(now)
            if not self._consume_budget(value.act):
                return []
            assert value.utterance is not None
            return self.begin_bot_response(
                text=value.utterance, act=value.act, ts=now, request_id=request_id
            )
        text = value if isinstance(value, str) and value else None
        if text is None:
            return []
        return self.begin_bot_response(text=text, act=None, ts=now, request_id=request_id)

    def on_policy_failure(self, request_id: int, code: str, now: int, apology: str | None = None) -> list[Effect]:
        """Backend failure: overlap triggers quietly become Await; a failed
        full response falls back to a fixed apology message."""
        pending = self.state.pending
        if pending is None or pending.request_id != request_id:
            return []
        self.state.pending = None
        if pending.mode is PolicyMode.OVERLAP_TRIGGER or code == "CANCELLED":
            return []
        return self.begin_bot_response(
            text=apology or APOLOGY_TEXT, act=None, ts=now, request_id=request_id
        )

    def _consume_budget(self, act: DialogueAct | None) -> bool:
        draft = self.state.user_draft
        if act is DialogueAct.UNDERSTANDING:
            if draft.backchannels_used >= self.config.max_backchannels_per_draft:
                return False
            draft.backchannels_used += 1
            return True
        if act is DialogueAct.ANSWER:
            if draft.preemptive_used >= self.config.max_preemptive_per_draft:
                return False
            draft.preemptive_used += 1
            return True
        return True

    # -- bot emission -------------------------------------------------------

    def begin_bot_response(
        self, *, text: str, act: DialogueAct | None, ts: int, request_id: int
    ) -> list[Effect]:
        if self.state.bot_emission is not None:
            raise EngineError("BUSY", "an emission is already active")
        if not text:
            return []
        self.state.bot_emission = BotEmission(
            full_text=text, act=act, emitted_chars=0, started_ts=ts, request_id=request_id
        )
        first_char_at = completion_ts(ts, 1, self.config.bot_chars_per_second)
        return [EmitWire(Status(BotStatus.TYPING)), ScheduleTick(first_char_at)]

    def tick_bot_emission(self, now: int) -> list[Effect]:
        state = self.state
        emission = state.bot_emission
        if emission is None:
            return []
        rate = self.config.bot_chars_per_second
        target = (now - emission.started_ts) * rate // 1000
        target = max(0, min(target, len(emission.full_text)))
        effects: list[Effect] = []
        if target > emission.emitted_chars:
            chunk = emission.full_text[emission.emitted_chars : target]
            emission.emitted_chars = target
            effects.append(EmitWire(BotChar(chunk)))
        if emission.emitted_chars >= len(emission.full_text):
            done_ts = completion_ts(emission.started_ts, len(emission.full_text), rate)
            message = Message(
                id=state.next_message_id,
                role=Role.BOT,
                text=emission.full_text,
                sent_ts=done_ts,
                draft_started_ts=emission.started_ts,
                act=emission.act,
            )
            state.next_message_id += 1
            state.messages.append(message)
            state.bot_emission = None
            effects.append(EmitWire(BotSend(message)))
            effects.append(EmitWire(Status(BotStatus.IDLE)))
            effects.extend(self._trigger_effects(now))
        else:
            next_char_at = completion_ts(
                emission.started_ts, emission.emitted_chars + 1, rate
            )
            effects.append(ScheduleTick(next_char_at))
        return effects

    def on_tick(self, now: int) -> list[Effect]:
        effects = self.tick_bot_emission(now)
        if self.state.bot_emission is None:
            effects.extend(self._trigger_effects(now))
        return effects

    # -- trigger scheduling ---------------------------------------------------

    def _invoke(self, mode: PolicyMode, now: int) -> InvokePolicy:
        state = self.state
        request_id = self._next_request_id
        self._next_request_id += 1
        context = PolicyContext(
            transcript=tuple(state.messages),
            live_draft=state.user_draft.text if mode is PolicyMode.OVERLAP_TRIGGER else "",
            draft_budgets=_budgets(state, self.config),
            mode=mode,
        )
        state.pending = PendingInvocation(
            request_id=request_id, mode=mode, draft_revision=state.user_draft.revision
        )
        state.last_policy_invocation_ts = now
        return InvokePolicy(context=context, request_id=request_id, draft_revision=state.user_draft.revision)

    def _trigger_effects(self, now: int) -> list[Effect]:
        if schedule_policy_trigger(self.state, now, self.config) is not None:
            return [self._invoke(PolicyMode.OVERLAP_TRIGGER, now)]
        retry = self._trigger_retry_at(now)
        if retry is not None and retry != self._requested_trigger_tick:
            self._requested_trigger_tick = retry
            return [ScheduleTick(retry)]
        return []

    def _trigger_retry_at(self, now: int) -> int | None:
        """Earliest future time the pause/cooldown gates could open, or None
        when no amount of waiting would make the trigger fire."""
        state = self.state
        config = self.config
        if not config.overlap_enabled:
            return None
        if state.bot_emission is not None or state.pending is not None:
            return None
        draft = state.user_draft
        if len(draft.text.split()) < config.min_trigger_tokens:
            return None
        budgets = _budgets(state, config)
        if budgets.backchannels_left <= 0 and budgets.preemptive_left <= 0:
            return None
        candidates = []
        if not draft.text[-1:].isspace():
            candidates.append(draft.last_change_ts + config.trigger_pause_ms)
        if state.last_policy_invocation_ts is not None:
            candidates.append(state.last_policy_invocation_ts + config.cooldown_ms)
        retry = max(candidates) if candidates else None
        if retry is None or retry <= now:
            return None
        return retry

    # -- inspection -----------------------------------------------------------

    def transcript(self) -> list[Message]:
        return list(self.state.messages)

    def summary(self):
        from .codec import StateSummary

        draft = self.state.user_draft
        return StateSummary(
            bot_typing=self.state.bot_emission is not None,
            draft_rev=draft.revision,
            draft_text=draft.text,
            last_change_ts=draft.last_change_ts,
            session_id=self.session_id,
        )
