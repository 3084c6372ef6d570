"""Building overlap-tagged training samples from annotated dialogues.

The pipeline is adapter-based: corpora are first normalized to JSONL rows of
(speaker, text, act_label, overlap_onset), and everything here consumes that
intermediate. Conversations yield positive samples wherever one speaker's
turn overlaps the previous speaker's in-progress turn; instruction data
yields coin-flipped await/overlap samples so task-oriented prompts are
covered too. All randomness is seeded and reproducible bytewise.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .policy import DEFAULT_BACKCHANNELS, parse_tagged_output

# Dialogue-act labels consolidated into the single understanding tag:
# backchannels and their variants plus plain agreement.
UNDERSTANDING_ACT_LABELS = frozenset({"b", "bh", "bk", "b^m", "aa"})

# The standard act tag set of the annotated telephone-conversation corpus;
# labels outside this set are consolidated to not-overlap with a warning.
KNOWN_ACT_LABELS = UNDERSTANDING_ACT_LABELS | frozenset(
    (
        "sd sv % x ba qy ny fc qw nn h qy^d o ^q bf na ny^e ad ^2 qo qh ^h ar "
        "ng nn^e br no fp qrr arp_nd t3 oo_co_cc t1 bd aap_am ^g qw^d fa ft +"
    ).split()
)

NOT_OVERLAP = "not_overlap_signal"
UNDERSTANDING = "understanding"


class CorpusError(Exception):
    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class AnnotatedUtterance:
    speaker: str
    text: str
    act_label: str = ""
    overlap_onset: int | None = None


@dataclass(frozen=True)
class ContextTurn:
    speaker: str
    text: str


@dataclass(frozen=True)
class TaggedSample:
    context: tuple[ContextTurn, ...]
    prefix: str
    target: str

    def to_dict(self) -> dict:
        return {
            "context": [{"speaker": t.speaker, "text": t.text} for t in self.context],
            "prefix": self.prefix,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaggedSample":
        return cls(
            context=tuple(ContextTurn(t["speaker"], t["text"]) for t in d["context"]),
            prefix=d["prefix"],
            target=d["target"],
        )


def consolidate_acts(act_label: str, unknown_counter: Counter | None = None) -> str:
    """Collapse a corpus act label to understanding vs not-an-overlap-signal.

    Unknown labels consolidate to not-overlap but are tallied so corpus
    drift is visible.
    """
    if act_label in UNDERSTANDING_ACT_LABELS:
        return UNDERSTANDING
    if act_label not in KNOWN_ACT_LABELS and unknown_counter is not None:
        unknown_counter[act_label] += 1
    return NOT_OVERLAP


def _word_prefix(text: str, k: int) -> str:
    return " ".join(text.split()[:k])


def _middle_cut(token_count: int, rng: random.Random) -> int:
    """Seeded cut point at a word boundary inside the middle half of the text."""
    lo = max(1, -(-token_count // 4))
    hi = min(token_count - 1, (3 * token_count) // 4)
    if hi < lo:
        lo = hi = max(1, min(token_count - 1, token_count // 2))
    return rng.randint(lo, hi)


def build_conversation_samples(
    dialogue: list[AnnotatedUtterance],
    rng_seed: int,
    unknown_counter: Counter | None = None,
) -> list[TaggedSample]:
    """Mine one dialogue for overlap samples.

    For each adjacent pair by different speakers: a consolidated
    understanding reply becomes an overlap/understanding sample whose prefix
    cuts the previous turn at the recorded overlap onset (or a seeded middle
    word boundary); a reply that starts before the final token of a
    question becomes an overlap/answer sample. Each positive is balanced by
    one await sample cut from a non-overlapped utterance.
    """
    if len(dialogue) < 2:
        raise CorpusError("EMPTY_DIALOGUE", f"need >= 2 utterances, got {len(dialogue)}")
    for i, utt in enumerate(dialogue):
        if utt.overlap_onset is not None:
            if i == 0:
                raise CorpusError("BAD_ONSET", "first utterance cannot overlap")
            prev_tokens = len(dialogue[i - 1].text.split())
            if not 0 < utt.overlap_onset < prev_tokens:
                raise CorpusError(
                    "BAD_ONSET",
                    f"overlap_onset {utt.overlap_onset} out of range for previous "
                    f"utterance of {prev_tokens} tokens",
                )

    rng = random.Random(rng_seed)
    samples: list[TaggedSample] = []
    positive_sources: set[int] = set()
    positives: list[tuple[int, TaggedSample]] = []

    for i in range(len(dialogue) - 1):
        current, reply = dialogue[i], dialogue[i + 1]
        if current.speaker == reply.speaker:
            continue
        cur_tokens = len(current.text.split())
        if cur_tokens < 2:
            continue
        target = None
        if consolidate_acts(reply.act_label, unknown_counter) == UNDERSTANDING:
            target = f"[Overlap] [Understanding] {reply.text}"
        elif current.text.rstrip().endswith("?") and reply.overlap_onset is not None:
            target = f"[Overlap] [Answer] {reply.text}"
        if target is None:
            continue
        cut = reply.overlap_onset if reply.overlap_onset is not None else _middle_cut(cur_tokens, rng)
        context = tuple(ContextTurn(u.speaker, u.text) for u in dialogue[:i])
        positives.append((i, TaggedSample(context, _word_prefix(current.text, cut), target)))
        positive_sources.add(i)

    negative_pool = [
        i
        for i, utt in enumerate(dialogue)
        if i not in positive_sources
        and utt.overlap_onset is None
        and len(utt.text.split()) >= 2
    ]
    for i, positive in positives:
        samples.append(positive)
        if not negative_pool:
            continue
        j = negative_pool[rng.randrange(len(negative_pool))]
        source = dialogue[j]
        cut = _middle_cut(len(source.text.split()), rng)
        context = tuple(ContextTurn(u.speaker, u.text) for u in dialogue[:j])
        samples.append(TaggedSample(context, _word_prefix(source.text, cut), "[Await]"))
    return samples


def build_instruction_sample(instruction: str, rng_seed: int) -> TaggedSample:
    """Turn one instruction into a truncated-prompt sample.

    The target is a fair seeded coin: await, or an overlap/understanding
    backchannel rendered sentence-style.
    """
    tokens = instruction.split()
    if len(tokens) < 4:
        raise CorpusError("TOO_SHORT", f"need >= 4 tokens, got {len(tokens)}")
    rng = random.Random(rng_seed)
    cut = _middle_cut(len(tokens), rng)
    prefix = _word_prefix(instruction, cut)
    if rng.random() < 0.5:
        target = "[Await]"
    else:
        utterance = DEFAULT_BACKCHANNELS[rng.randrange(len(DEFAULT_BACKCHANNELS))]
        target = f"[Overlap] [Understanding] {utterance[0].upper()}{utterance[1:]}."
    return TaggedSample(context=(), prefix=prefix, target=target)


# --- normalized-file ingestion ----------------------------------------------


def read_dialogues(path: str | Path) -> list[list[AnnotatedUtterance]]:
    """Read normalized dialogue JSONL. Rows with the same consecutive
    dialogue_id form one dialogue; files without ids are a single dialogue."""
    dialogues: list[list[AnnotatedUtterance]] = []
    current: list[AnnotatedUtterance] = []
    current_id: object = None
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            utterance = AnnotatedUtterance(
                speaker=str(row["speaker"]),
                text=str(row["text"]),
                act_label=str(row.get("act_label", "")),
                overlap_onset=row.get("overlap_onset"),
            )
        except Exception as exc:
            raise CorpusError("BAD_ROW", f"line {line_no}: {exc}") from exc
        row_id = row.get("dialogue_id")
        if current and row_id != current_id:
            dialogues.append(current)
            current = []
        current_id = row_id
        current.append(utterance)
    if current:
        dialogues.append(current)
    return dialogues


def read_instructions(path: str | Path) -> list[str]:
    instructions = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            instructions.append(str(json.loads(line)["instruction"]))
        except Exception as exc:
            raise CorpusError("BAD_ROW", f"line {line_no}: {exc}") from exc
    return instructions


def build_corpus(
    dialogues: list[list[AnnotatedUtterance]],
    instructions: list[str],
    seed: int,
) -> tuple[list[TaggedSample], Counter]:
    """Deterministic full build: per-item child seeds keep output independent
    of any parallel execution order."""
    unknown: Counter = Counter()
    samples: list[TaggedSample] = []
    for i, dialogue in enumerate(dialogues):
        samples.extend(
            build_conversation_samples(dialogue, seed * 1_000_003 + i, unknown)
        )
    for i, instruction in enumerate(instructions):
        try:
            samples.append(build_instruction_sample(instruction, seed * 2_000_003 + i))
        except CorpusError:
            continue
    for sample in samples:
        parse_tagged_output(sample.target)
    return samples, unknown


def write_samples(samples: list[TaggedSample], path: str | Path) -> None:
    lines = [json.dumps(s.to_dict(), ensure_ascii=False, separators=(",", ":")) for s in samples]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_samples(path: str | Path) -> list[TaggedSample]:
    samples = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            samples.append(TaggedSample.from_dict(json.loads(line)))
        except Exception as exc:
            raise CorpusError("BAD_ROW", f"line {line_no}: {exc}") from exc
    return samples
