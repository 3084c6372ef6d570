import math

import pytest

from overlapchat.corpus import TaggedSample
from overlapchat.evaluation import (
    EvalError,
    classification_report,
    corpus_bleu,
    rouge_l,
    run_eval,
)

from oracle_ngram_lcs import (
    DISJOINT_CANDIDATE,
    DISJOINT_REFERENCE,
    oracle_bleu,
    oracle_rouge_l,
)


class TestClassificationReport:
    def test_identity_is_all_ones(self):
        report = classification_report(["a", "b", "a"], ["a", "b", "a"])
        assert (report.accuracy, report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_hand_derived_two_class_case(self):
        golds = ["A", "O", "A", "O"]
        preds = ["A", "A", "A", "O"]
        report = classification_report(preds, golds)
        assert report.accuracy == pytest.approx(0.75, abs=1e-12)
        assert report.precision == pytest.approx(0.8333, abs=1e-4)
        assert report.recall == pytest.approx(0.75, abs=1e-4)
        assert report.f1 == pytest.approx(0.7333, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(EvalError) as excinfo:
            classification_report(["a"], ["a", "b"])
        assert excinfo.value.code == "LENGTH_MISMATCH"

    def test_empty(self):
        with pytest.raises(EvalError) as excinfo:
            classification_report([], [])
        assert excinfo.value.code == "EMPTY"

    def test_class_absent_from_both_is_skipped(self):
        full = classification_report(["a", "a"], ["a", "a"], classes=["a", "ghost"])
        assert full.f1 == 1.0

    def test_weighted_average(self):
        golds = ["A", "O", "A", "O"]
        preds = ["A", "A", "A", "O"]
        report = classification_report(preds, golds, average="weighted")
        # equal supports; weighted equals macro here
        assert report.f1 == pytest.approx(0.7333, abs=1e-4)

    def test_zero_denominator_scores_zero(self):
        # nothing predicted as "b": precision(b) has zero denominator
        report = classification_report(["a", "a"], ["a", "b"])
        assert 0.0 <= report.precision <= 1.0


class TestCorpusBleu:
    def test_identity(self):
        value = corpus_bleu(
            ["yeah i painted something recently"], ["yeah i painted something recently"]
        )
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_short_candidate_brevity_penalty(self):
        value = corpus_bleu(["yeah i did"], ["yeah i did paint"])
        assert value == pytest.approx(math.exp(1 - 4 / 3), abs=1e-9)
        assert value == pytest.approx(0.7165, abs=1e-4)
        assert value == pytest.approx(oracle_bleu(["yeah i did"], ["yeah i did paint"]), abs=1e-12)

    def test_disjoint_tokens_are_near_zero(self):
        value = corpus_bleu([DISJOINT_CANDIDATE], [DISJOINT_REFERENCE])
        assert value < 0.01
        assert value == pytest.approx(oracle_bleu([DISJOINT_CANDIDATE], [DISJOINT_REFERENCE]), abs=1e-12)

    def test_matches_oracle_on_mixed_corpus(self):
        candidates = ["yeah i did", "the weather is nice today", "", "one two three four five"]
        references = ["yeah i did paint", "the weather is bad today", "say something", "one two three four five"]
        assert corpus_bleu(candidates, references) == pytest.approx(
            oracle_bleu(candidates, references), abs=1e-12
        )

    def test_all_empty_candidates(self):
        assert corpus_bleu(["", ""], ["a b", "c d"]) == 0.0

    def test_errors(self):
        with pytest.raises(EvalError):
            corpus_bleu([], [])
        with pytest.raises(EvalError):
            corpus_bleu(["a"], [])

    def test_case_insensitive_tokens(self):
        assert corpus_bleu(["Yeah I Did"], ["yeah i did"]) == pytest.approx(1.0, abs=1e-12)


class TestRougeL:
    def test_identity(self):
        assert rouge_l("yeah i did", "yeah i did") == pytest.approx(1.0, abs=1e-12)

    def test_hand_derived_case(self):
        value = rouge_l("yeah i did", "yeah i did paint")
        assert value == pytest.approx(0.8571, abs=1e-4)
        assert value == pytest.approx(oracle_rouge_l("yeah i did", "yeah i did paint"), abs=1e-12)

    def test_disjoint_is_zero(self):
        assert rouge_l("aaa bbb", "ccc ddd") == 0.0

    def test_empty_sides_are_zero(self):
        assert rouge_l("", "words here") == 0.0
        assert rouge_l("words here", "") == 0.0

    def test_subsequence_not_substring(self):
        value = rouge_l("a x b y c", "a b c")
        assert value == pytest.approx(oracle_rouge_l("a x b y c", "a b c"), abs=1e-12)

    @pytest.mark.parametrize(
        "cand,ref",
        [
            ("the quick brown fox", "the slow brown dog"),
            ("keep going yeah", "yeah keep going"),
            ("one", "one two three four"),
        ],
    )
    def test_matches_oracle(self, cand, ref):
        assert rouge_l(cand, ref) == pytest.approx(oracle_rouge_l(cand, ref), abs=1e-12)
        assert 0.0 <= rouge_l(cand, ref) <= 1.0


def sample(target, prefix="some prefix"):
    return TaggedSample(context=(), prefix=prefix, target=target)


GOLD_SAMPLES = [
    sample("[Overlap] [Understanding] yeah"),
    sample("[Await]"),
    sample("[Overlap] [Answer] You mean the director?"),
    sample("[Await]"),
    sample("[Overlap] [Understanding] uh huh"),
]


class TestRunEval:
    def test_identity_scores_all_ones(self):
        outputs = [s.target for s in GOLD_SAMPLES]
        report = run_eval(GOLD_SAMPLES, outputs)
        for r in (report.timing, report.acts):
            assert r.accuracy == r.precision == r.recall == r.f1 == 1.0
        assert report.bleu == pytest.approx(1.0, abs=1e-9)
        assert report.rouge_l == pytest.approx(1.0, abs=1e-9)

    def test_all_await_on_all_overlap_gold(self):
        golds = [sample("[Overlap] [Understanding] yeah")] * 4
        report = run_eval(golds, ["[Await]"] * 4)
        assert report.timing.accuracy == 0.0
        assert report.bleu == 0.0

    def test_malformed_counts_as_await(self):
        golds = [sample("[Overlap] [Understanding] yeah"), sample("[Await]")]
        report = run_eval(golds, ["complete garbage", "[Await]"])
        assert report.timing.accuracy == 0.5

    def test_length_mismatch(self):
        with pytest.raises(EvalError):
            run_eval(GOLD_SAMPLES, ["[Await]"])

    def test_no_overlap_gold_leaves_utterance_metrics_absent(self):
        golds = [sample("[Await]"), sample("[Await]")]
        report = run_eval(golds, ["[Await]", "[Await]"])
        assert report.acts is None and report.bleu is None and report.rouge_l is None
        assert report.timing.accuracy == 1.0

    def test_pred_await_contributes_empty_candidate(self):
        golds = [sample("[Overlap] [Understanding] yeah yeah yeah")] * 2
        outputs = ["[Overlap] [Understanding] yeah yeah yeah", "[Await]"]
        report = run_eval(golds, outputs)
        assert 0.0 < report.bleu < 1.0
        assert report.rouge_l == pytest.approx(0.5, abs=1e-9)

    def test_report_serializes(self):
        outputs = [s.target for s in GOLD_SAMPLES]
        d = run_eval(GOLD_SAMPLES, outputs).to_dict()
        assert set(d) == {"timing", "acts", "bleu", "rouge_l"}
        assert set(d["timing"]) == {"accuracy", "precision", "recall", "f1"}
