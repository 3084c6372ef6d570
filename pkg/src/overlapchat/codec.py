"""Wire-event codec, event validation, and conversation-log file IO.

Frames travel as single-line JSON with a fixed "type" discriminator; the log
file is newline-delimited JSON so analytics and eval tooling can replay
sessions offline. Field names and type strings are bit-exact contracts:
changing them breaks recorded logs and the browser client.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .model import (
    BotChar,
    BotRetract,
    BotSend,
    BotStatus,
    ConversationLog,
    DialogueAct,
    DraftUpdate,
    Error,
    Hello,
    LogEntry,
    Message,
    Origin,
    PeerDraft,
    RetractMode,
    Role,
    Send,
    SessionConfig,
    Status,
    UserMessageAck,
    WireEvent,
)


class ParseError(Exception):
    code = "PARSE_ERROR"


class CorruptLogError(Exception):
    """A log file line that cannot be decoded; carries the offending seq."""

    code = "CORRUPT_LOG"

    def __init__(self, seq: int, reason: str) -> None:
        super().__init__(f"corrupt log at seq {seq}: {reason}")
        self.seq = seq
        self.reason = reason


def message_to_dict(m: Message) -> dict:
    return {
        "id": m.id,
        "role": m.role.value,
        "text": m.text,
        "sealed_with_ellipsis": m.sealed_with_ellipsis,
        "act": m.act.value if m.act is not None else None,
        "sent_ts": m.sent_ts,
        "draft_started_ts": m.draft_started_ts,
    }


def message_from_dict(d: dict) -> Message:
    act = d["act"]
    return Message(
        id=d["id"],
        role=Role(d["role"]),
        text=d["text"],
        sealed_with_ellipsis=d["sealed_with_ellipsis"],
        act=DialogueAct(act) if act is not None else None,
        sent_ts=d["sent_ts"],
        draft_started_ts=d["draft_started_ts"],
    )


def event_to_dict(event: WireEvent) -> dict:
    if isinstance(event, Hello):
        return {"type": "hello", "session_id": event.session_id}
    if isinstance(event, DraftUpdate):
        return {"type": "draft_update", "text": event.text, "ts": event.ts}
    if isinstance(event, Send):
        return {"type": "send", "ts": event.ts}
    if isinstance(event, PeerDraft):
        return {"type": "peer_draft", "role": event.role.value, "text": event.text}
    if isinstance(event, BotChar):
        return {"type": "bot_char", "text_chunk": event.text_chunk}
    if isinstance(event, BotRetract):
        return {
            "type": "bot_retract",
            "mode": event.mode.value,
            "visible_text": event.visible_text,
        }
    if isinstance(event, BotSend):
        return {"type": "bot_send", "message": message_to_dict(event.message)}
    if isinstance(event, UserMessageAck):
        return {"type": "user_message_ack", "message": message_to_dict(event.message)}
    if isinstance(event, Status):
        return {"type": "status", "bot": event.bot.value}
    if isinstance(event, Error):
        return {"type": "error", "code": event.code, "detail": event.detail}
    raise TypeError(f"not a WireEvent: {event!r}")


def event_from_dict(d: dict) -> WireEvent:
    kind = d["type"]
    if kind == "hello":
        return Hello(session_id=_req(d, "session_id", str))
    if kind == "draft_update":
        return DraftUpdate(text=_req(d, "text", str), ts=_req(d, "ts", int))
    if kind == "send":
        return Send(ts=_req(d, "ts", int))
    if kind == "peer_draft":
        return PeerDraft(role=Role(_req(d, "role", str)), text=_req(d, "text", str))
    if kind == "bot_char":
        return BotChar(text_chunk=_req(d, "text_chunk", str))
    if kind == "bot_retract":
        return BotRetract(
            mode=RetractMode(_req(d, "mode", str)),
            visible_text=_req(d, "visible_text", str),
        )
    if kind == "bot_send":
        return BotSend(message=message_from_dict(d["message"]))
    if kind == "user_message_ack":
        return UserMessageAck(message=message_from_dict(d["message"]))
    if kind == "status":
        return Status(bot=BotStatus(_req(d, "bot", str)))
    if kind == "error":
        return Error(code=_req(d, "code", str), detail=_req(d, "detail", str))
    raise ValueError(f"unknown event type {kind!r}")


def _req(d: dict, key: str, typ: type):
    value = d[key]
    # bool is an int subclass; reject it where an int is required
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise ValueError(f"field {key!r} has wrong type")
    return value


def encode_event(event: WireEvent) -> str:
    """One frame, one line; compact separators, keys in contract order."""
    return json.dumps(event_to_dict(event), ensure_ascii=False, separators=(",", ":"))


def decode_event(line: str) -> WireEvent:
    """Inverse of encode_event. Raises ParseError on anything malformed;
    never lets arbitrary input escape as another exception type."""
    try:
        d = json.loads(line)
        if not isinstance(d, dict):
            raise ValueError("frame is not a JSON object")
        return event_from_dict(d)
    except ParseError:
        raise
    except Exception as exc:
        raise ParseError(f"bad frame: {exc}") from exc


@dataclass(frozen=True)
class StateSummary:
    """What validation needs to know about the session at event arrival."""

    bot_typing: bool = False
    draft_rev: int = 0
    draft_text: str = ""
    last_change_ts: int = 0
    session_id: str | None = None


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str


def validate_event(event: WireEvent, summary: StateSummary) -> Violation | None:
    """Check a decoded client event against current session state.

    Returns None when the event is legal, otherwise a machine-readable
    Violation. Server-originated frame types are never legal from a client.
    """
    if isinstance(event, Send):
        if summary.draft_text == "":
            return Violation("EMPTY_SEND", "send with an empty draft")
        return None
    if isinstance(event, DraftUpdate):
        if event.ts < summary.last_change_ts:
            return Violation(
                "STALE_REVISION",
                f"draft snapshot at ts {event.ts} is older than ts {summary.last_change_ts}",
            )
        return None
    if isinstance(event, Hello):
        if summary.session_id is not None and event.session_id != summary.session_id:
            return Violation("BAD_SESSION", f"unknown session {event.session_id!r}")
        return None
    return Violation("UNEXPECTED_EVENT", f"{type(event).__name__} is not a client event")


# --- log file IO -----------------------------------------------------------
#
# Line 1 is a header object {"session_id":..,"config":{..}}; every following
# line is an entry {"seq":..,"ts":..,"origin":..,"event":{..}}. A file
# truncated at a line boundary replays cleanly; a partial trailing line is
# reported as corruption at the seq it would have held.


def entry_to_dict(entry: LogEntry) -> dict:
    return {
        "seq": entry.seq,
        "ts": entry.wall_ts,
        "origin": entry.origin.value,
        "event": event_to_dict(entry.event),
    }


def encode_entry(entry: LogEntry) -> str:
    return json.dumps(entry_to_dict(entry), ensure_ascii=False, separators=(",", ":"))


def encode_header(log: ConversationLog) -> str:
    header = {
        "session_id": log.session_id,
        "config": {
            name: getattr(log.config, name) for name in log.config.__dataclass_fields__
        },
    }
    return json.dumps(header, ensure_ascii=False, separators=(",", ":"))


def log_to_lines(log: ConversationLog) -> list[str]:
    return [encode_header(log)] + [encode_entry(e) for e in log.entries]


def write_log(log: ConversationLog, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in log_to_lines(log)), encoding="utf-8")


def log_from_lines(lines: list[str]) -> ConversationLog:
    lines = [line for line in lines if line.strip() != ""]
    session_id = "unknown"
    config = SessionConfig()
    start = 0
    if lines:
        try:
            first = json.loads(lines[0])
        except Exception as exc:
            raise CorruptLogError(0, f"unreadable first line: {exc}") from exc
        if isinstance(first, dict) and "seq" not in first:
            try:
                session_id = first["session_id"]
                config = SessionConfig(**first["config"])
            except Exception as exc:
                raise CorruptLogError(0, f"bad header: {exc}") from exc
            start = 1

    log = ConversationLog(session_id, config)
    for seq, line in enumerate(lines[start:]):
        try:
            d = json.loads(line)
            if d["seq"] != seq:
                raise ValueError(f"expected seq {seq}, found {d['seq']}")
            event = event_from_dict(d["event"])
            log.append(Origin(d["origin"]), event, d["ts"])
        except CorruptLogError:
            raise
        except Exception as exc:
            raise CorruptLogError(seq, str(exc)) from exc
    return log


def read_log(path: str | Path) -> ConversationLog:
    text = Path(path).read_text(encoding="utf-8")
    return log_from_lines(text.split("\n"))
