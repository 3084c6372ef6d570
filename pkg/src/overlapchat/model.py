"""Shared domain types for overlap-capable chat sessions.

Everything here is an immutable value except ConversationLog, which is an
append-only, single-writer event journal. All other modules (engine, policy,
analytics, gateway) consume these types; none of them define their own wire
shapes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class Role(enum.Enum):
    USER = "user"
    BOT = "bot"


class Origin(enum.Enum):
    """Who produced a log entry: a party to the chat, or the server itself."""

    USER = "user"
    BOT = "bot"
    SYSTEM = "system"


class TimingDecision(enum.Enum):
    AWAIT = "await"
    OVERLAP = "overlap"


class DialogueAct(enum.Enum):
    UNDERSTANDING = "understanding"
    ANSWER = "answer"


class RetractMode(enum.Enum):
    """How an interrupted bot emission is resolved: deleted outright, or kept
    as a sent message with a trailing ellipsis."""

    FULL = "full"
    SEAL = "seal"


class BotStatus(enum.Enum):
    TYPING = "typing"
    IDLE = "idle"


@dataclass(frozen=True)
class PolicyDecision:
    """Outcome of one policy invocation during the user's typing.

    Await carries nothing; Overlap must carry both a dialogue act and a
    non-empty utterance. Construction enforces this, it is not advisory.
    """

    timing: TimingDecision
    act: DialogueAct | None = None
    utterance: str | None = None

    def __post_init__(self) -> None:
        if self.timing is TimingDecision.AWAIT:
            if self.act is not None or self.utterance is not None:
                raise ValueError("Await decision must not carry an act or utterance")
        else:
            if self.act is None:
                raise ValueError("Overlap decision requires a dialogue act")
            if not self.utterance:
                raise ValueError("Overlap decision requires a non-empty utterance")


@dataclass(frozen=True)
class Message:
    """A finalized chat message. Timestamps are ms since session start."""

    id: int
    role: Role
    text: str
    sent_ts: int
    draft_started_ts: int
    sealed_with_ellipsis: bool = False
    act: DialogueAct | None = None

    def __post_init__(self) -> None:
        if self.sent_ts < self.draft_started_ts:
            raise ValueError("sent_ts must be >= draft_started_ts")
        if self.sealed_with_ellipsis:
            if self.role is not Role.BOT:
                raise ValueError("only bot messages can be sealed")
            if not self.text.endswith("..."):
                raise ValueError("sealed message text must end with '...'")
        if self.act is not None and self.role is not Role.BOT:
            raise ValueError("dialogue acts are bot-only")


@dataclass
class DraftState:
    """Live, unsent text of one party, plus per-draft overlap budgets.

    revision increments by exactly one per accepted change. started_ts tracks
    when the current draft first became non-empty (it becomes the finalized
    message's draft_started_ts).
    """

    owner: Role
    text: str = ""
    revision: int = 0
    last_change_ts: int = 0
    backchannels_used: int = 0
    preemptive_used: int = 0
    started_ts: int = 0


# Wire events. One frame = one line of the log format; "type" strings are
# part of the external contract and must not change.


@dataclass(frozen=True)
class Hello:
    session_id: str


@dataclass(frozen=True)
class DraftUpdate:
    text: str
    ts: int


@dataclass(frozen=True)
class Send:
    ts: int


@dataclass(frozen=True)
class PeerDraft:
    role: Role
    text: str


@dataclass(frozen=True)
class BotChar:
    text_chunk: str


@dataclass(frozen=True)
class BotRetract:
    mode: RetractMode
    visible_text: str


@dataclass(frozen=True)
class BotSend:
    message: Message


@dataclass(frozen=True)
class UserMessageAck:
    message: Message


@dataclass(frozen=True)
class Status:
    bot: BotStatus


@dataclass(frozen=True)
class Error:
    code: str
    detail: str


WireEvent = (
    Hello
    | DraftUpdate
    | Send
    | PeerDraft
    | BotChar
    | BotRetract
    | BotSend
    | UserMessageAck
    | Status
    | Error
)

CLIENT_EVENT_TYPES = (Hello, DraftUpdate, Send)


@dataclass(frozen=True)
class SessionConfig:
    """Tunable session behavior. All numeric fields must be positive.

    The 130-char seal threshold is the one externally fixed constant; the
    trigger thresholds are deliberately conservative defaults against
    over-eager overlap and are all overridable per session.
    """

    debounce_ms: int = 50
    trigger_pause_ms: int = 700
    min_trigger_tokens: int = 3
    cooldown_ms: int = 2000
    max_backchannels_per_draft: int = 1
    max_preemptive_per_draft: int = 1
    interrupt_seal_threshold_chars: int = 130
    bot_chars_per_second: int = 30
    overlap_enabled: bool = True

    def __post_init__(self) -> None:
        for name in (
            "debounce_ms",
            "trigger_pause_ms",
            "min_trigger_tokens",
            "cooldown_ms",
            "max_backchannels_per_draft",
            "max_preemptive_per_draft",
            "interrupt_seal_threshold_chars",
            "bot_chars_per_second",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.overlap_enabled, bool):
            raise ValueError("overlap_enabled must be a boolean")

    def with_overrides(self, overrides: dict) -> "SessionConfig":
        unknown = set(overrides) - {f for f in self.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)


class LogAppendError(Exception):
    """Raised when an append would move the log's clock backwards."""

    code = "REJECTED"


# Appends are tolerated up to this much clock jitter; the stored timestamp is
# clamped so entries stay non-decreasing.
APPEND_TS_TOLERANCE_MS = 1


@dataclass(frozen=True)
class LogEntry:
    seq: int
    wall_ts: int
    origin: Origin
    event: WireEvent


class ConversationLog:
    """Append-only event journal: the single source of truth for a session.

    seq is gapless from 0 and wall_ts is non-decreasing. The log is owned by
    one writer (the session loop); snapshots taken after an append completes
    are safe to read from other threads.
    """

    def __init__(self, session_id: str, config: SessionConfig) -> None:
        self.session_id = session_id
        self.config = config
        self.entries: list[LogEntry] = []

    def append(self, origin: Origin, event: WireEvent, wall_ts: int) -> LogEntry:
        if self.entries:
            last_ts = self.entries[-1].wall_ts
            if wall_ts < last_ts - APPEND_TS_TOLERANCE_MS:
                raise LogAppendError(
                    f"wall_ts {wall_ts} is earlier than last entry ts {last_ts}"
                )
            wall_ts = max(wall_ts, last_ts)
        entry = LogEntry(seq=len(self.entries), wall_ts=wall_ts, origin=origin, event=event)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def duration_ms(self) -> int:
        if len(self.entries) < 2:
            return 0
        return self.entries[-1].wall_ts - self.entries[0].wall_ts
