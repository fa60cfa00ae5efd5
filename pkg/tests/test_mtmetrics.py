import math

import numpy as np
import pytest

from cqajoint.mtmetrics import (
    NistScorer,
    bleu_with_components,
    meteor_lite,
    ter,
    unigram_pr,
)


class TestBleu:
    def test_identical_sentences_score_one(self):
        tokens = "the quick brown fox jumps".split()
        score, comp = bleu_with_components(tokens, tokens)
        assert score == pytest.approx(1.0)
        assert comp.brevity_penalty == pytest.approx(1.0)

    def test_partial_overlap_zero_bigram(self):
        # hyp "the cat" vs ref "the dog": p1 = 1/2, p2 = 0 -> bleu 0
        score, comp = bleu_with_components("the cat".split(), "the dog".split())
        assert comp.precisions[0] == pytest.approx(0.5)
        assert comp.precisions[1] == 0.0
        assert score == 0.0

    def test_brevity_penalty_half_length(self):
        # hyp_len 2, ref_len 4 -> BP = e^{-1}
        _, comp = bleu_with_components("a b".split(), "a b c d".split())
        assert comp.brevity_penalty == pytest.approx(math.exp(-1.0))

    def test_empty_hypothesis_all_zero(self):
        score, comp = bleu_with_components([], "a b".split())
        assert score == 0.0
        assert comp.brevity_penalty == 0.0
        assert comp.matches == (0, 0, 0, 0)
        assert comp.totals == (0, 0, 0, 0)

    def test_component_vector_layout(self):
        _, comp = bleu_with_components("a b c".split(), "a b c".split())
        vec = comp.as_vector()
        assert len(vec) == 16
        # p1..p4, m1..m4, t1..t4, hyp_len, ref_len, ratio, bp
        assert vec[12] == 3.0 and vec[13] == 3.0
        assert vec[14] == pytest.approx(1.0)

    def test_clipping(self):
        # hyp "the the the" vs ref "the cat": clipped match = 1 of 3
        _, comp = bleu_with_components("the the the".split(), "the cat".split())
        assert comp.matches[0] == 1
        assert comp.precisions[0] == pytest.approx(1.0 / 3.0)

    def test_scores_bounded(self):
        rng = np.random.default_rng(0)
        vocab = list("abcdef")
        for _ in range(200):
            hyp = [vocab[i] for i in rng.integers(0, 6, rng.integers(0, 9))]
            ref = [vocab[i] for i in rng.integers(0, 6, rng.integers(0, 9))]
            score, _ = bleu_with_components(hyp, ref)
            assert 0.0 <= score <= 1.0


class TestNist:
    def test_empty_hypothesis_zero(self):
        scorer = NistScorer().fit(["a b c".split()])
        assert scorer.score([], "a b".split()) == 0.0

    def test_identity_is_maximal_among_same_length(self):
        ref = "the cat sat on the mat".split()
        scorer = NistScorer().fit([ref])
        full = scorer.score(ref, ref)
        rng = np.random.default_rng(3)
        for _ in range(50):
            other = [ref[i] for i in rng.integers(0, len(ref), len(ref))]
            assert scorer.score(other, ref) <= full + 1e-12

    def test_fixed_pair_frozen_value(self):
        # Hand-derived from the NIST definition (info weights fitted on
        # the single reference) before this module was written.
        ref = "the cat sat on the mat".split()
        scorer = NistScorer().fit([ref])
        value = scorer.score("the cat sat".split(), ref)
        assert value == pytest.approx(0.36295364208037834, rel=1e-12)

    def test_state_round_trip(self):
        ref = "the cat sat on the mat".split()
        scorer = NistScorer().fit([ref])
        clone = NistScorer.from_state(scorer.to_state())
        hyp = "the cat sat".split()
        assert clone.score(hyp, ref) == scorer.score(hyp, ref)


class TestTer:
    def test_identical_zero(self):
        assert ter("a b c".split(), "a b c".split()) == 0.0

    def test_single_substitution(self):
        assert ter("a b c".split(), "a x c".split()) == pytest.approx(1.0 / 3.0)

    def test_shift_counts_one_edit(self):
        # "c a b" -> shift "c" to the end -> "a b c", 1 shift, 0 edits
        assert ter("c a b".split(), "a b c".split()) == pytest.approx(1.0 / 3.0)

    def test_empty_conventions(self):
        assert ter([], []) == 0.0
        assert ter("a b".split(), []) == 2.0
        assert ter([], "a b c".split()) == 1.0

    def test_never_negative_and_bounded_by_levenshtein(self):
        # independent DP oracle for the no-shift upper bound
        def lev(a, b):
            prev = list(range(len(b) + 1))
            for i, x in enumerate(a, 1):
                cur = [i]
                for j, y in enumerate(b, 1):
                    cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
                prev = cur
            return prev[-1]

        rng = np.random.default_rng(7)
        vocab = list("abcd")
        for _ in range(100):
            hyp = [vocab[i] for i in rng.integers(0, 4, rng.integers(1, 7))]
            ref = [vocab[i] for i in rng.integers(0, 4, rng.integers(1, 7))]
            score = ter(hyp, ref)
            assert score >= 0.0
            # each shift must strictly reduce the remaining edit distance,
            # so the total can never exceed the shift-free distance
            assert score <= lev(hyp, ref) / len(ref) + 1e-12


class TestMeteorLite:
    def test_zero_overlap(self):
        assert meteor_lite("a b".split(), "c d".split()) == 0.0

    def test_identical_two_tokens(self):
        # P=R=1, chunks=1, matches=2 -> 1 - 0.5 * (1/2)^3 = 0.9375
        assert meteor_lite("the cat".split(), "the cat".split()) == pytest.approx(0.9375)

    def test_single_shared_token(self):
        # P=R=0.5, chunks=matches=1 -> F=0.5, penalty=0.5 -> 0.25
        assert meteor_lite("the cat".split(), "the dog".split()) == pytest.approx(0.25)

    def test_bounded(self):
        rng = np.random.default_rng(11)
        vocab = list("abcde")
        for _ in range(200):
            hyp = [vocab[i] for i in rng.integers(0, 5, rng.integers(0, 8))]
            ref = [vocab[i] for i in rng.integers(0, 5, rng.integers(0, 8))]
            assert 0.0 <= meteor_lite(hyp, ref) <= 1.0


class TestUnigramPR:
    def test_identical(self):
        assert unigram_pr("a b".split(), "a b".split()) == (1.0, 1.0)

    def test_two_of_three(self):
        p, r = unigram_pr("a b c".split(), "a b d".split())
        assert p == pytest.approx(2.0 / 3.0)
        assert r == pytest.approx(2.0 / 3.0)

    def test_disjoint(self):
        assert unigram_pr("a b".split(), "c d".split()) == (0.0, 0.0)

    def test_empty(self):
        assert unigram_pr([], "a".split()) == (0.0, 0.0)
        assert unigram_pr("a".split(), []) == (0.0, 0.0)

    def test_recall_monotone_under_hyp_removal(self):
        # dropping a matched hypothesis token never increases recall
        rng = np.random.default_rng(5)
        vocab = list("abc")
        for _ in range(100):
            hyp = [vocab[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            ref = [vocab[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            _, recall = unigram_pr(hyp, ref)
            for drop in range(len(hyp)):
                _, reduced = unigram_pr(hyp[:drop] + hyp[drop + 1:], ref)
                assert reduced <= recall + 1e-12
