import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlapchat.model import DialogueAct, Message, PolicyDecision, Role, TimingDecision
from overlapchat.policy import (
    BackendError,
    CancellationToken,
    DraftBudgets,
    GenerationRequest,
    MalformedOutputError,
    PolicyContext,
    PolicyMode,
    RulePolicy,
    StubBackend,
    decision_or_await,
    parse_tagged_output,
    render_prompt,
    select_backchannel,
    serialize_decision,
)

FRESH = DraftBudgets(backchannels_left=1, preemptive_left=1)


def ctx(draft: str, budgets: DraftBudgets = FRESH, transcript=(), mode=PolicyMode.OVERLAP_TRIGGER):
    return PolicyContext(
        transcript=tuple(transcript), live_draft=draft, draft_budgets=budgets, mode=mode
    )


class TestParse:
    def test_await(self):
        assert parse_tagged_output("[Await]") == PolicyDecision(TimingDecision.AWAIT)

    def test_overlap_understanding(self):
        decision = parse_tagged_output("[Overlap] [Understanding] Yeah.")
        assert decision == PolicyDecision(
            TimingDecision.OVERLAP, DialogueAct.UNDERSTANDING, "Yeah."
        )

    def test_overlap_answer(self):
        decision = parse_tagged_output("[Overlap] [Answer] You mean Bong Jun Ho?")
        assert decision.act is DialogueAct.ANSWER
        assert decision.utterance == "You mean Bong Jun Ho?"

    def test_surrounding_whitespace_ignored(self):
        assert parse_tagged_output("  [Await]\n") == PolicyDecision(TimingDecision.AWAIT)

    @pytest.mark.parametrize(
        "text",
        [
            "[Overlap]",
            "[Overlap] [Understanding]",
            "[Overlap] [Understanding]   ",
            "[Overlap] yeah",
            "[Await] extra words",
            "[await]",
            "Understanding yeah",
            "",
            "[Overlap] [Backchannel] hm",
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(MalformedOutputError):
            parse_tagged_output(text)

    def test_fail_quiet_wrapper(self):
        assert decision_or_await("[Overlap]") == PolicyDecision(TimingDecision.AWAIT)

    @given(st.text())
    @settings(max_examples=500, deadline=None)
    def test_total_over_arbitrary_text(self, junk):
        try:
            parse_tagged_output(junk)
        except MalformedOutputError:
            pass


decision_st = st.one_of(
    st.just(PolicyDecision(TimingDecision.AWAIT)),
    st.builds(
        lambda act, utt: PolicyDecision(TimingDecision.OVERLAP, act, utt),
        st.sampled_from([DialogueAct.UNDERSTANDING, DialogueAct.ANSWER]),
        st.text(
            alphabet=st.characters(exclude_categories=["Cs", "Zs", "Cc"]), min_size=1
        ).map(lambda s: s.strip()).filter(bool),
    ),
)


class TestSerializeRoundTrip:
    @given(decision_st)
    @settings(max_examples=300, deadline=None)
    def test_parse_inverts_serialize(self, decision):
        assert parse_tagged_output(serialize_decision(decision)) == decision

    def test_tag_spelling(self):
        assert serialize_decision(PolicyDecision(TimingDecision.AWAIT)) == "[Await]"
        assert (
            serialize_decision(
                PolicyDecision(TimingDecision.OVERLAP, DialogueAct.UNDERSTANDING, "yeah")
            )
            == "[Overlap] [Understanding] yeah"
        )


class TestSelectBackchannel:
    @pytest.mark.parametrize("k,expected", [(0, "yeah"), (1, "uh huh"), (2, "right"), (3, "mm hmm"), (4, "yeah")])
    def test_rotation(self, k, expected):
        assert select_backchannel(k) == expected

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError):
            select_backchannel(0, ())


class TestRenderPrompt:
    def test_contains_partial_turn_and_instruction(self):
        prompt = render_prompt(ctx("have you painted"))
        assert "have you painted" in prompt
        assert "[Await]" in prompt and "[Overlap]" in prompt

    def test_deterministic(self):
        a = render_prompt(ctx("have you painted"))
        b = render_prompt(ctx("have you painted"))
        assert a == b

    def test_full_response_has_no_partial_turn(self):
        message = Message(id=0, role=Role.USER, text="hello there", sent_ts=1, draft_started_ts=0)
        prompt = render_prompt(ctx("", transcript=[message], mode=PolicyMode.FULL_RESPONSE))
        assert "typing" not in prompt
        assert "User: hello there" in prompt

    def test_transcript_labels(self):
        messages = [
            Message(id=0, role=Role.USER, text="hi", sent_ts=1, draft_started_ts=0),
            Message(id=1, role=Role.BOT, text="yeah", sent_ts=2, draft_started_ts=1),
        ]
        prompt = render_prompt(ctx("more", transcript=messages))
        assert "User: hi\nBot: yeah\n" in prompt

    def test_full_response_mode_forbids_draft(self):
        with pytest.raises(ValueError):
            ctx("still typing", mode=PolicyMode.FULL_RESPONSE)


class TestRulePolicy:
    def test_question_start_gives_answer(self):
        decision = RulePolicy().decide(ctx("do you remember who the movie direc"))
        assert decision.timing is TimingDecision.OVERLAP
        assert decision.act is DialogueAct.ANSWER
        assert decision.utterance == "(re: direc) You mean the director?"

    def test_six_token_cadence_gives_backchannel(self):
        decision = RulePolicy().decide(ctx("today i went to the store"))
        assert decision == PolicyDecision(
            TimingDecision.OVERLAP, DialogueAct.UNDERSTANDING, "yeah"
        )

    def test_short_draft_awaits(self):
        assert RulePolicy().decide(ctx("hello")).timing is TimingDecision.AWAIT

    def test_question_needs_four_tokens(self):
        assert RulePolicy().decide(ctx("do you mind")).timing is TimingDecision.AWAIT

    def test_cadence_requires_multiple_of_six(self):
        assert RulePolicy().decide(ctx("today i went to the big store")).timing is TimingDecision.AWAIT

    def test_no_preemptive_budget_no_answer(self):
        budgets = DraftBudgets(backchannels_left=1, preemptive_left=0)
        decision = RulePolicy().decide(ctx("do you remember who the movie direc", budgets))
        assert decision.act is not DialogueAct.ANSWER

    def test_no_backchannel_budget_no_understanding(self):
        budgets = DraftBudgets(backchannels_left=0, preemptive_left=1)
        decision = RulePolicy().decide(ctx("today i went to the store", budgets))
        assert decision.timing is TimingDecision.AWAIT

    def test_backchannel_rotation_uses_used_count(self):
        budgets = DraftBudgets(backchannels_left=2, preemptive_left=1, backchannels_used=1)
        decision = RulePolicy().decide(ctx("today i went to the store", budgets))
        assert decision.utterance == "uh huh"

    def test_deterministic(self):
        context = ctx("do you remember who the movie direc")
        assert RulePolicy().decide(context) == RulePolicy().decide(context)

    def test_full_response_echoes_last_user_message(self):
        message = Message(id=0, role=Role.USER, text="tell me things", sent_ts=1, draft_started_ts=0)
        text = RulePolicy().respond(ctx("", transcript=[message], mode=PolicyMode.FULL_RESPONSE))
        assert text == "Echo: tell me things"


class TestStubBackend:
    def test_answer_template(self):
        prompt = render_prompt(ctx("do you remember who the movie direc"))
        response = StubBackend().generate(GenerationRequest(prompt, 500))
        assert response.text == "(re: direc) You mean the director?"

    def test_full_response_truncates_to_max_chars(self):
        message = Message(id=0, role=Role.USER, text="x" * 100, sent_ts=1, draft_started_ts=0)
        prompt = render_prompt(ctx("", transcript=[message], mode=PolicyMode.FULL_RESPONSE))
        response = StubBackend().generate(GenerationRequest(prompt, 20))
        assert len(response.text) == 20

    def test_cancelled_token_raises(self):
        token = CancellationToken()
        token.cancel()
        with pytest.raises(BackendError) as excinfo:
            StubBackend().generate(GenerationRequest("User: hi", 100), token)
        assert excinfo.value.code == "CANCELLED"

    def test_empty_prompt_rejected(self):
        with pytest.raises(BackendError):
            StubBackend().generate(GenerationRequest("", 100))

    def test_backend_errors_map_to_await(self):
        class DownBackend:
            def generate(self, request, token=None):
                raise BackendError("UNREACHABLE")

        decision = RulePolicy(DownBackend()).decide(ctx("do you remember who the movie direc"))
        assert decision.timing is TimingDecision.AWAIT


class TestCancellationToken:
    def test_cancel_is_recorded_once(self):
        token = CancellationToken()
        assert not token.cancelled
        token.cancel()
        first = token.cancelled_at
        token.cancel()
        assert token.cancelled and token.cancelled_at == first


def test_grammar_fuzz_smoke():
    rng = random.Random(7)
    pieces = ["[Await]", "[Overlap]", "[Understanding]", "[Answer]", "yeah", " ", "\n", "\x00", "日本語"]
    for _ in range(5000):
        text = "".join(rng.choice(pieces) for _ in range(rng.randrange(8)))
        decision_or_await(text)
