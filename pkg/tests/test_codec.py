import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlapchat.codec import (
    CorruptLogError,
    ParseError,
    StateSummary,
    decode_event,
    encode_entry,
    encode_event,
    log_from_lines,
    log_to_lines,
    read_log,
    validate_event,
    write_log,
)
from overlapchat.model import (
    BotChar,
    BotRetract,
    BotSend,
    BotStatus,
    ConversationLog,
    DialogueAct,
    DraftUpdate,
    Error,
    Hello,
    Message,
    Origin,
    PeerDraft,
    RetractMode,
    Role,
    Send,
    SessionConfig,
    Status,
    UserMessageAck,
)

# avoid lone surrogates, which are not representable in UTF-8 files
text_st = st.text(alphabet=st.characters(exclude_categories=["Cs"]))
ts_st = st.integers(min_value=0, max_value=10**12)


@st.composite
def message_st(draw):
    role = draw(st.sampled_from([Role.USER, Role.BOT]))
    start = draw(ts_st)
    sealed = role is Role.BOT and draw(st.booleans())
    text = draw(text_st)
    if sealed:
        text = text + "..."
    act = draw(st.sampled_from([None, DialogueAct.UNDERSTANDING, DialogueAct.ANSWER])) if role is Role.BOT else None
    return Message(
        id=draw(st.integers(min_value=0, max_value=10**6)),
        role=role,
        text=text,
        sent_ts=start + draw(st.integers(min_value=0, max_value=10**6)),
        draft_started_ts=start,
        sealed_with_ellipsis=sealed,
        act=act,
    )


event_st = st.one_of(
    st.builds(Hello, session_id=text_st),
    st.builds(DraftUpdate, text=text_st, ts=ts_st),
    st.builds(Send, ts=ts_st),
    st.builds(PeerDraft, role=st.sampled_from([Role.USER, Role.BOT]), text=text_st),
    st.builds(BotChar, text_chunk=text_st),
    st.builds(
        BotRetract,
        mode=st.sampled_from([RetractMode.FULL, RetractMode.SEAL]),
        visible_text=text_st,
    ),
    st.builds(BotSend, message=message_st()),
    st.builds(UserMessageAck, message=message_st()),
    st.builds(Status, bot=st.sampled_from([BotStatus.TYPING, BotStatus.IDLE])),
    st.builds(Error, code=text_st, detail=text_st),
)


class TestCodec:
    def test_draft_update_bytes_are_pinned(self):
        line = encode_event(DraftUpdate(text="I want to be", ts=4200))
        assert line == '{"type":"draft_update","text":"I want to be","ts":4200}'

    def test_type_strings_are_pinned(self):
        cases = {
            Hello("s"): "hello",
            DraftUpdate("x", 1): "draft_update",
            Send(1): "send",
            PeerDraft(Role.USER, "x"): "peer_draft",
            BotChar("x"): "bot_char",
            BotRetract(RetractMode.FULL, ""): "bot_retract",
            Status(BotStatus.TYPING): "status",
            Error("E", "d"): "error",
        }
        for event, expected in cases.items():
            assert json.loads(encode_event(event))["type"] == expected

    def test_retract_modes_are_pinned(self):
        assert json.loads(encode_event(BotRetract(RetractMode.FULL, "")))["mode"] == "full"
        assert json.loads(encode_event(BotRetract(RetractMode.SEAL, "x")))["mode"] == "seal"

    def test_retract_full_round_trip(self):
        event = BotRetract(RetractMode.FULL, "")
        assert decode_event(encode_event(event)) == event

    @given(event_st)
    @settings(max_examples=300, deadline=None)
    def test_round_trip_identity(self, event):
        assert decode_event(encode_event(event)) == event

    def test_missing_fields_fail(self):
        with pytest.raises(ParseError):
            decode_event('{"type":"draft_update"}')

    @pytest.mark.parametrize(
        "line",
        [
            "",
            "not json",
            "42",
            "[]",
            '{"type":"warp"}',
            '{"no_type":1}',
            '{"type":"send","ts":"soon"}',
            '{"type":"draft_update","text":5,"ts":1}',
            '{"type":"send","ts":true}',
        ],
    )
    def test_malformed_lines_raise_parse_error(self, line):
        with pytest.raises(ParseError):
            decode_event(line)

    @given(st.text())
    @settings(max_examples=300, deadline=None)
    def test_decode_is_total(self, junk):
        try:
            decode_event(junk)
        except ParseError:
            pass


class TestValidateEvent:
    def test_send_with_draft_ok(self):
        assert validate_event(Send(10), StateSummary(draft_text="hi")) is None

    def test_empty_send(self):
        violation = validate_event(Send(10), StateSummary(draft_text=""))
        assert violation is not None and violation.code == "EMPTY_SEND"

    def test_unknown_session(self):
        violation = validate_event(Hello("nope"), StateSummary(session_id="real"))
        assert violation is not None and violation.code == "BAD_SESSION"

    def test_known_session(self):
        assert validate_event(Hello("real"), StateSummary(session_id="real")) is None

    def test_stale_draft_snapshot(self):
        violation = validate_event(
            DraftUpdate("old", ts=10), StateSummary(last_change_ts=50)
        )
        assert violation is not None and violation.code == "STALE_REVISION"

    def test_server_frames_are_not_client_events(self):
        violation = validate_event(BotChar("x"), StateSummary())
        assert violation is not None and violation.code == "UNEXPECTED_EVENT"


class TestLogFile:
    def _sample_log(self):
        log = ConversationLog("abc", SessionConfig())
        log.append(Origin.USER, DraftUpdate("h", 100), 100)
        log.append(Origin.USER, DraftUpdate("hi", 200), 200)
        log.append(Origin.SYSTEM, Error("X", "d"), 300)
        return log

    def test_write_read_round_trip(self, tmp_path):
        log = self._sample_log()
        path = tmp_path / "session.jsonl"
        write_log(log, path)
        loaded = read_log(path)
        assert loaded.session_id == "abc"
        assert loaded.config == log.config
        assert loaded.entries == log.entries

    def test_replay_is_byte_identical(self):
        log = self._sample_log()
        lines = log_to_lines(log)
        replayed = log_from_lines(lines)
        assert log_to_lines(replayed) == lines

    def test_entry_schema(self):
        log = self._sample_log()
        entry = json.loads(encode_entry(log.entries[0]))
        assert set(entry) == {"seq", "ts", "origin", "event"}
        assert entry["origin"] == "user"

    def test_truncated_last_line_is_corrupt(self, tmp_path):
        log = self._sample_log()
        path = tmp_path / "session.jsonl"
        write_log(log, path)
        text = path.read_text().rstrip("\n")
        path.write_text(text[:-7])  # clip into the last entry
        with pytest.raises(CorruptLogError) as excinfo:
            read_log(path)
        assert excinfo.value.seq == 2

    def test_truncation_at_line_boundary_replays(self, tmp_path):
        log = self._sample_log()
        path = tmp_path / "session.jsonl"
        write_log(log, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        loaded = read_log(path)
        assert len(loaded) == 2

    def test_seq_gap_is_corrupt(self):
        log = self._sample_log()
        lines = log_to_lines(log)
        del lines[2]  # drop the seq-1 entry
        with pytest.raises(CorruptLogError) as excinfo:
            log_from_lines(lines)
        assert excinfo.value.seq == 1

    def test_empty_file_is_empty_log(self):
        loaded = log_from_lines([])
        assert len(loaded) == 0
