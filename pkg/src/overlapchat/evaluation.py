"""Scoring harness for overlap-tagged model output.

Three layers of scoring: timing classification (overlap vs await), dialogue
act classification on the gold-overlap subset, and utterance quality via
corpus BLEU-4 and mean ROUGE-L. Averaging is macro unless asked otherwise.

Smoothing and averaging choices are pinned so numbers are comparable across
implementations: zero-match n-gram orders smooth to 1/(2*denominator),
orders with no candidate n-grams drop out of the geometric mean, and
ROUGE-L uses the balanced F measure.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .model import PolicyDecision, TimingDecision
from .policy import decision_or_await, parse_tagged_output

# Pseudo act label for predictions that awaited on a gold-overlap sample.
NO_ACT_LABEL = "none"


class EvalError(Exception):
    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass(frozen=True)
class ClassReport:
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(frozen=True)
class EvalReport:
    timing: ClassReport
    acts: ClassReport | None
    bleu: float | None
    rouge_l: float | None

    def to_dict(self) -> dict:
        return {
            "timing": self.timing.to_dict(),
            "acts": self.acts.to_dict() if self.acts is not None else None,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
        }


def classification_report(preds, golds, classes=None, average: str = "macro") -> ClassReport:
    """Accuracy plus averaged precision/recall/F1 from the confusion matrix.

    Classes absent from both gold and predictions are skipped. Per-class
    ratios with a zero denominator are scored 0. average is "macro"
    (unweighted class mean) or "weighted" (by gold support).
    """
    preds = list(preds)
    golds = list(golds)
    if len(preds) != len(golds):
        raise EvalError("LENGTH_MISMATCH", f"{len(preds)} preds vs {len(golds)} golds")
    if not golds:
        raise EvalError("EMPTY")
    if average not in ("macro", "weighted"):
        raise ValueError("average must be 'macro' or 'weighted'")
    if classes is None:
        classes = sorted(set(golds) | set(preds), key=str)

    accuracy = sum(1 for p, g in zip(preds, golds) if p == g) / len(golds)
    gold_count = Counter(golds)
    pred_count = Counter(preds)
    tp = Counter(g for p, g in zip(preds, golds) if p == g)

    rows = []
    for cls in classes:
        support = gold_count[cls]
        predicted = pred_count[cls]
        if support == 0 and predicted == 0:
            continue
        precision = tp[cls] / predicted if predicted else 0.0
        recall = tp[cls] / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append((support, precision, recall, f1))
    if not rows:
        raise EvalError("EMPTY", "no classes present")

    if average == "macro":
        weights = [1.0] * len(rows)
    else:
        weights = [support for support, *_ in rows]
    total = sum(weights)
    precision = sum(w * r[1] for w, r in zip(weights, rows)) / total
    recall = sum(w * r[2] for w, r in zip(weights, rows)) / total
    f1 = sum(w * r[3] for w, r in zip(weights, rows)) / total
    return ClassReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates, references) -> float:
    """Corpus-level BLEU-4 on whitespace tokens."""
    candidates = list(candidates)
    references = list(references)
    if len(candidates) != len(references):
        raise EvalError("LENGTH_MISMATCH")
    if not candidates:
        raise EvalError("EMPTY")

    clipped = {n: 0 for n in range(1, 5)}
    total = {n: 0 for n in range(1, 5)}
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        ct = _tokens(cand)
        rt = _tokens(ref)
        cand_len += len(ct)
        ref_len += len(rt)
        for n in range(1, 5):
            cng = _ngram_counts(ct, n)
            if not cng:
                continue
            rng = _ngram_counts(rt, n)
            total[n] += sum(cng.values())
            clipped[n] += sum(min(count, rng[gram]) for gram, count in cng.items())

    orders = [n for n in range(1, 5) if total[n] > 0]
    if not orders:
        return 0.0
    log_sum = 0.0
    for n in orders:
        p = clipped[n] / total[n] if clipped[n] > 0 else 1.0 / (2 * total[n])
        log_sum += math.log(p)
    geometric = math.exp(log_sum / len(orders))
    penalty = math.exp(1 - ref_len / cand_len) if cand_len < ref_len else 1.0
    return penalty * geometric


def _lcs_len(a: list[str], b: list[str]) -> int:
    # single-row DP; quadratic time, linear space
    if len(a) < len(b):
        a, b = b, a
    row = [0] * (len(b) + 1)
    for x in a:
        diagonal = 0
        for j, y in enumerate(b, start=1):
            above = row[j]
            if x == y:
                row[j] = diagonal + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            diagonal = above
    return row[len(b)]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F measure (beta = 1) on whitespace tokens; 0 when either
    side has no tokens or nothing matches."""
    ct = _tokens(candidate)
    rt = _tokens(reference)
    if not ct or not rt:
        return 0.0
    lcs = _lcs_len(ct, rt)
    if lcs == 0:
        return 0.0
    precision = lcs / len(ct)
    recall = lcs / len(rt)
    return 2 * precision * recall / (precision + recall)


def run_eval(samples, model_outputs, average: str = "macro") -> EvalReport:
    """Score model outputs against gold tagged samples.

    Outputs that fail to parse count as Await. The act report and the
    utterance metrics are computed over gold-overlap samples only, with an
    awaiting prediction contributing a pseudo act class and an empty
    candidate utterance.
    """
    samples = list(samples)
    outputs = list(model_outputs)
    if len(samples) != len(outputs):
        raise EvalError("LENGTH_MISMATCH", f"{len(samples)} samples vs {len(outputs)} outputs")
    if not samples:
        raise EvalError("EMPTY")

    golds: list[PolicyDecision] = [parse_tagged_output(s.target) for s in samples]
    preds: list[PolicyDecision] = [decision_or_await(o) for o in outputs]

    timing = classification_report(
        [p.timing.value for p in preds],
        [g.timing.value for g in golds],
        classes=[TimingDecision.AWAIT.value, TimingDecision.OVERLAP.value],
        average=average,
    )

    overlap_indices = [i for i, g in enumerate(golds) if g.timing is TimingDecision.OVERLAP]
    if not overlap_indices:
        return EvalReport(timing=timing, acts=None, bleu=None, rouge_l=None)

    def act_label(d: PolicyDecision) -> str:
        return d.act.value if d.act is not None else NO_ACT_LABEL

    acts = classification_report(
        [act_label(preds[i]) for i in overlap_indices],
        [act_label(golds[i]) for i in overlap_indices],
        average=average,
    )
    candidates = [
        preds[i].utterance if preds[i].utterance is not None else "" for i in overlap_indices
    ]
    references = [golds[i].utterance or "" for i in overlap_indices]
    bleu = corpus_bleu(candidates, references)
    rouge = sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)
    return EvalReport(timing=timing, acts=acts, bleu=bleu, rouge_l=rouge)
