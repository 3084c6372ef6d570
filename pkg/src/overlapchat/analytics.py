"""Conversation analytics computed from a session log.

Five metrics per conversation: mean message length, total turns, turns per
minute, overlap ratio, and deletes per minute. Everything is a pure function
of the append-only log, so a live session and an offline replay of its log
produce field-identical reports.

Overlap is discretized: the session span is cut into fixed bins (1 s by
default) and a bin counts as overlapping iff it contains at least one user
draft update and at least one bot character in the same bin.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    BotChar,
    BotRetract,
    BotSend,
    ConversationLog,
    DraftUpdate,
    Message,
    Role,
    Send,
    UserMessageAck,
)

DEFAULT_BIN_MS = 1000


class AnalyticsError(Exception):
    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class RoleMetrics:
    mean_message_length: float | None
    total_turns: int
    turns_per_minute: float | None


@dataclass(frozen=True)
class MetricsReport:
    user: RoleMetrics
    bot: RoleMetrics
    overlap_ratio: float | None
    deletes_per_minute: dict
    duration_s: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def role_dict(r: RoleMetrics) -> dict:
            return {
                "mean_message_length": r.mean_message_length,
                "total_turns": r.total_turns,
                "turns_per_minute": r.turns_per_minute,
            }

        return {
            "user": role_dict(self.user),
            "bot": role_dict(self.bot),
            "overlap_ratio": self.overlap_ratio,
            "deletes_per_minute": dict(self.deletes_per_minute),
            "duration_s": self.duration_s,
            "warnings": list(self.warnings),
        }


def finalized_messages(log: ConversationLog, role: Role | None = None) -> list[Message]:
    """Messages in finalization order, read back from ack/send frames."""
    messages = []
    for entry in log:
        event = entry.event
        if isinstance(event, UserMessageAck):
            messages.append(event.message)
        elif isinstance(event, BotSend):
            messages.append(event.message)
    if role is not None:
        messages = [m for m in messages if m.role is role]
    return messages


def mean_message_length(log: ConversationLog, role: Role) -> float:
    texts = [m.text for m in finalized_messages(log, role)]
    if not texts:
        raise AnalyticsError("NO_MESSAGES", f"no finalized {role.value} messages")
    return sum(len(t) for t in texts) / len(texts)


def total_turns(log: ConversationLog, role: Role) -> int:
    """Turns are Send/finalize actions, not typing activity. Sealed fragments
    and backchannels count as bot turns."""
    if role is Role.USER:
        return sum(1 for e in log if isinstance(e.event, Send))
    return sum(1 for e in log if isinstance(e.event, BotSend))


def _duration_ms(log: ConversationLog) -> int:
    return log.duration_ms


def turns_per_minute(log: ConversationLog, role: Role) -> float:
    duration = _duration_ms(log)
    if duration <= 0:
        raise AnalyticsError("ZERO_DURATION")
    minutes = (duration / 1000) / 60
    return total_turns(log, role) / minutes


def overlap_ratio(log: ConversationLog, bin_ms: int = DEFAULT_BIN_MS) -> float:
    """Percentage of [first_ts, last_ts) bins with keystrokes from both sides."""
    if bin_ms <= 0:
        raise ValueError("bin_ms must be positive")
    duration = _duration_ms(log)
    if duration < bin_ms:
        raise AnalyticsError("TOO_SHORT", f"duration {duration} ms < bin {bin_ms} ms")
    first = log.entries[0].wall_ts
    last = log.entries[-1].wall_ts
    total_bins = -(-(last - first) // bin_ms)
    user_bins = set()
    bot_bins = set()
    for entry in log:
        if not first <= entry.wall_ts < last:
            continue
        index = (entry.wall_ts - first) // bin_ms
        if isinstance(entry.event, DraftUpdate):
            user_bins.add(index)
        elif isinstance(entry.event, BotChar):
            bot_bins.add(index)
    overlapping = len(user_bins & bot_bins)
    return 100.0 * overlapping / total_bins


def deletes_per_minute(log: ConversationLog, role: Role, unit: str = "events") -> float:
    """Deletion rate. A user delete is a draft update that does not extend the
    previous draft; a bot delete is a retraction frame. unit="chars" counts
    removed characters instead of deletion events, for sensitivity analysis."""
    if unit not in ("events", "chars"):
        raise ValueError("unit must be 'events' or 'chars'")
    duration = _duration_ms(log)
    if duration <= 0:
        raise AnalyticsError("ZERO_DURATION")
    count = 0
    if role is Role.USER:
        previous = ""
        for entry in log:
            event = entry.event
            if isinstance(event, DraftUpdate):
                if not event.text.startswith(previous):
                    if unit == "events":
                        count += 1
                    else:
                        common = _common_prefix_len(previous, event.text)
                        count += len(previous) - common
                previous = event.text
            elif isinstance(event, Send):
                previous = ""
    else:
        for entry in log:
            event = entry.event
            if isinstance(event, BotRetract):
                if unit == "events":
                    count += 1
                else:
                    count += len(event.visible_text)
    minutes = (duration / 1000) / 60
    return count / minutes


def _common_prefix_len(a: str, b: str) -> int:
    n = min(len(a), len(b))
    for i in range(n):
        if a[i] != b[i]:
            return i
    return n


def build_report(
    log: ConversationLog, bin_ms: int = DEFAULT_BIN_MS, delete_unit: str = "events"
) -> MetricsReport:
    """Assemble the full report; metrics that cannot be computed for this log
    become absent cells plus a warning, mirroring missing table cells."""
    warnings: list[str] = []

    def attempt(fn, role: Role):
        try:
            return fn(log, role)
        except AnalyticsError as exc:
            warnings.append(f"{fn.__name__}({role.value}): {exc.code}")
            return None

    role_metrics = {}
    for role in (Role.USER, Role.BOT):
        role_metrics[role] = RoleMetrics(
            mean_message_length=attempt(mean_message_length, role),
            total_turns=total_turns(log, role),
            turns_per_minute=attempt(turns_per_minute, role),
        )
    ratio = None
    try:
        ratio = overlap_ratio(log, bin_ms)
    except AnalyticsError as exc:
        warnings.append(f"overlap_ratio: {exc.code}")
    deletes = {}
    for role in (Role.USER, Role.BOT):
        try:
            deletes[role.value] = deletes_per_minute(log, role, unit=delete_unit)
        except AnalyticsError as exc:
            deletes[role.value] = None
            warnings.append(f"deletes_per_minute({role.value}): {exc.code}")
    return MetricsReport(
        user=role_metrics[Role.USER],
        bot=role_metrics[Role.BOT],
        overlap_ratio=ratio,
        deletes_per_minute=deletes,
        duration_s=_duration_ms(log) / 1000,
        warnings=tuple(warnings),
    )
