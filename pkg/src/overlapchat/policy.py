"""Overlap policy: when to barge in, and with what.

Three cooperating pieces:

* the tag grammar ("[Await]" / "[Overlap] [Understanding|Answer] utterance")
  with a total parser and its inverse serializer,
* a deterministic rule policy used as the reference implementation and in
  every golden test,
* a generation-backend contract with a deterministic stub and an HTTP client
  for a real model server.

Malformed model output always degrades to Await: a silent bot is a far
smaller failure than a garbled barge-in.
"""

from __future__ import annotations

import enum
import re
import threading
import time
from dataclasses import dataclass, field

import httpx

from .model import DialogueAct, Message, PolicyDecision, Role, TimingDecision

AWAIT_TAG = "[Await]"
OVERLAP_TAG = "[Overlap]"
ACT_TAGS = {DialogueAct.UNDERSTANDING: "[Understanding]", DialogueAct.ANSWER: "[Answer]"}

DEFAULT_BACKCHANNELS = ("yeah", "uh huh", "right", "mm hmm")

QUESTION_STARTERS = frozenset(
    "what who when where why how do does did is are can could would will have has".split()
)

# Fallback bot message when a full-response generation fails outright.
APOLOGY_TEXT = "Sorry, I could not come up with a reply just now."


class PolicyMode(enum.Enum):
    OVERLAP_TRIGGER = "overlap_trigger"
    FULL_RESPONSE = "full_response"


@dataclass(frozen=True)
class DraftBudgets:
    backchannels_left: int
    preemptive_left: int
    backchannels_used: int = 0


@dataclass(frozen=True)
class PolicyContext:
    """Snapshot handed to a policy invocation; never mutated afterwards."""

    transcript: tuple[Message, ...]
    live_draft: str
    draft_budgets: DraftBudgets
    mode: PolicyMode

    def __post_init__(self) -> None:
        if self.mode is PolicyMode.FULL_RESPONSE and self.live_draft != "":
            raise ValueError("full-response context must not carry a live draft")


class MalformedOutputError(Exception):
    code = "MALFORMED"


_OVERLAP_RE = re.compile(
    r"\A\[Overlap\]\s*\[(Understanding|Answer)\]\s*(.+)\Z", re.DOTALL
)


def parse_tagged_output(text: str) -> PolicyDecision:
    """Parse model output in the tag grammar.

    Grammar: "[Await]" | "[Overlap]" WS act WS utterance, with surrounding
    whitespace ignored and the utterance taken as the raw remainder. Total
    over arbitrary input: anything else raises MalformedOutputError.
    """
    if not isinstance(text, str):
        raise MalformedOutputError("output is not text")
    stripped = text.strip()
    if stripped == AWAIT_TAG:
        return PolicyDecision(TimingDecision.AWAIT)
    m = _OVERLAP_RE.match(stripped)
    if m is None:
        raise MalformedOutputError(f"not in the tag grammar: {stripped[:80]!r}")
    act = DialogueAct.UNDERSTANDING if m.group(1) == "Understanding" else DialogueAct.ANSWER
    utterance = m.group(2).strip()
    if not utterance:
        raise MalformedOutputError("empty utterance after act tag")
    return PolicyDecision(TimingDecision.OVERLAP, act, utterance)


def decision_or_await(text: str) -> PolicyDecision:
    """Fail-quiet variant: malformed output becomes Await."""
    try:
        return parse_tagged_output(text)
    except MalformedOutputError:
        return PolicyDecision(TimingDecision.AWAIT)


def serialize_decision(decision: PolicyDecision) -> str:
    """Inverse of parse_tagged_output; used as the corpus sample target format."""
    if decision.timing is TimingDecision.AWAIT:
        return AWAIT_TAG
    assert decision.act is not None and decision.utterance is not None
    return f"{OVERLAP_TAG} {ACT_TAGS[decision.act]} {decision.utterance}"


def select_backchannel(k: int, table: tuple[str, ...] = DEFAULT_BACKCHANNELS) -> str:
    """Deterministic rotation through the backchannel table.

    k is how many backchannels this draft has already consumed; rotation
    replaces random choice so golden transcripts stay stable.
    """
    if not table:
        raise ValueError("backchannel table must be non-empty")
    return table[k % len(table)]


# --- prompt rendering -------------------------------------------------------

_TYPING_MARKER = "User (typing): "
_USER_MARKER = "User: "
_OVERLAP_INSTRUCTION = (
    "The user has not finished typing. Reply with exactly one line: "
    "[Await] to keep waiting, or [Overlap] [Understanding] <utterance> "
    "or [Overlap] [Answer] <utterance> to overlap now."
)
_FULL_INSTRUCTION = "Reply with the bot's next message."


def render_prompt(ctx: PolicyContext) -> str:
    """Deterministic serialization of a policy context.

    Completed turns as "User:"/"Bot:" lines, then (in overlap mode) the live
    draft marked as an incomplete turn, then the reply instruction. Equal
    contexts render to identical bytes.
    """
    lines = []
    for m in ctx.transcript:
        label = "User" if m.role is Role.USER else "Bot"
        lines.append(f"{label}: {m.text}")
    if ctx.mode is PolicyMode.OVERLAP_TRIGGER:
        lines.append(_TYPING_MARKER + ctx.live_draft)
        lines.append(_OVERLAP_INSTRUCTION)
    else:
        lines.append(_FULL_INSTRUCTION)
    return "\n".join(lines)


# --- generation backend -----------------------------------------------------


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_chars: int
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class GenerationResponse:
    text: str


class BackendError(Exception):
    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


class CancellationToken:
    """Cooperative cancellation handle for one generation pipeline.

    The token is issued when a policy invocation starts and stays live until
    the resulting emission finishes, so an interruption can cancel the whole
    pipeline no matter which stage it is in. cancelled_at records wall time
    (time.monotonic) for latency assertions.
    """

    def __init__(self) -> None:
        self._event = threading.Event()
        self.cancelled_at: float | None = None

    def cancel(self) -> None:
        if not self._event.is_set():
            self.cancelled_at = time.monotonic()
            self._event.set()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()


def answer_stub_text(last_draft_token: str) -> str:
    return f"(re: {last_draft_token}) You mean the director?"


@dataclass
class StubBackend:
    """Deterministic stand-in for a model server.

    Recovers its inputs from the rendered prompt: an overlap-answer request
    (prompt contains the incomplete-turn marker) yields a fixed template
    keyed to the last draft token; a full-response request echoes the last
    user message, truncated to max_chars.
    """

    latency_ms: int = 0
    issued_tokens: list[CancellationToken] = field(default_factory=list)

    def generate(
        self, request: GenerationRequest, token: CancellationToken | None = None
    ) -> GenerationResponse:
        if not request.prompt:
            raise BackendError("EMPTY_PROMPT")
        if token is not None:
            self.issued_tokens.append(token)
            if token.cancelled:
                raise BackendError("CANCELLED")
        lines = request.prompt.split("\n")
        draft = None
        last_user = None
        for line in lines:
            if line.startswith(_TYPING_MARKER):
                draft = line[len(_TYPING_MARKER):]
            elif line.startswith(_USER_MARKER):
                last_user = line[len(_USER_MARKER):]
        if draft is not None:
            tokens = draft.split()
            last = tokens[-1] if tokens else "that"
            return GenerationResponse(answer_stub_text(last))
        if last_user is not None:
            return GenerationResponse(("Echo: " + last_user)[: request.max_chars])
        return GenerationResponse("Okay.")


@dataclass
class RemoteBackend:
    """HTTP client for a generation server: POST {base_url}/generate."""

    base_url: str
    timeout_s: float = 10.0

    def generate(
        self, request: GenerationRequest, token: CancellationToken | None = None
    ) -> GenerationResponse:
        if token is not None and token.cancelled:
            raise BackendError("CANCELLED")
        payload = {
            "prompt": request.prompt,
            "max_chars": request.max_chars,
            "stop": list(request.stop),
        }
        try:
            resp = httpx.post(
                self.base_url.rstrip("/") + "/generate",
                json=payload,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            text = resp.json()["text"]
        except httpx.TimeoutException as exc:
            raise BackendError("TIMEOUT", str(exc)) from exc
        except Exception as exc:
            raise BackendError("UNREACHABLE", str(exc)) from exc
        if token is not None and token.cancelled:
            raise BackendError("CANCELLED")
        if not isinstance(text, str) or not text:
            raise BackendError("UNREACHABLE", "backend returned no text")
        return GenerationResponse(text)


# --- policies ---------------------------------------------------------------

DEFAULT_MAX_CHARS = 500


class RulePolicy:
    """Deterministic reference policy.

    Overlap rules, in order: a question-shaped draft with at least four
    tokens earns a preemptive answer (utterance delegated to the backend);
    every sixth token earns one backchannel; otherwise wait. Budgets in the
    context are respected unconditionally.
    """

    def __init__(self, backend=None, backchannels: tuple[str, ...] = DEFAULT_BACKCHANNELS):
        self.backend = backend if backend is not None else StubBackend()
        self.backchannels = backchannels

    def decide(
        self, ctx: PolicyContext, token: CancellationToken | None = None
    ) -> PolicyDecision:
        tokens = ctx.live_draft.lower().split()
        budgets = ctx.draft_budgets
        if (
            tokens
            and tokens[0] in QUESTION_STARTERS
            and len(tokens) >= 4
            and budgets.preemptive_left > 0
        ):
            request = GenerationRequest(render_prompt(ctx), DEFAULT_MAX_CHARS)
            try:
                text = self.backend.generate(request, token).text
            except BackendError:
                return PolicyDecision(TimingDecision.AWAIT)
            return PolicyDecision(TimingDecision.OVERLAP, DialogueAct.ANSWER, text)
        if len(tokens) >= 6 and len(tokens) % 6 == 0 and budgets.backchannels_left > 0:
            utterance = select_backchannel(budgets.backchannels_used, self.backchannels)
            return PolicyDecision(TimingDecision.OVERLAP, DialogueAct.UNDERSTANDING, utterance)
        return PolicyDecision(TimingDecision.AWAIT)

    def respond(self, ctx: PolicyContext, token: CancellationToken | None = None) -> str:
        request = GenerationRequest(render_prompt(ctx), DEFAULT_MAX_CHARS)
        text = self.backend.generate(request, token).text
        return text


class ModelPolicy:
    """Policy backed by a generation server speaking the tag grammar."""

    def __init__(self, backend):
        self.backend = backend

    def decide(
        self, ctx: PolicyContext, token: CancellationToken | None = None
    ) -> PolicyDecision:
        request = GenerationRequest(render_prompt(ctx), DEFAULT_MAX_CHARS)
        text = self.backend.generate(request, token).text
        return decision_or_await(text)

    def respond(self, ctx: PolicyContext, token: CancellationToken | None = None) -> str:
        request = GenerationRequest(render_prompt(ctx), DEFAULT_MAX_CHARS)
        return self.backend.generate(request, token).text
