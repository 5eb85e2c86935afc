import math

import numpy as np
import pytest

from asrcascade import metrics
from asrcascade.errors import CascadeError


def oracle_edit_distance(ref, hyp):
    """Exhaustive recursion straight off the edit-distance definition."""

    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        best = go(i + 1, j + 1) + (ref[i] != hyp[j])
        skip_ref = go(i + 1, j) + 1
        if skip_ref < best:
            best = skip_ref
        skip_hyp = go(i, j + 1) + 1
        if skip_hyp < best:
            best = skip_hyp
        return best

    return go(0, 0)


class TestTokenize:
    def test_strips_punctuation(self):
        assert metrics.tokenize("The cat, sat.") == ["the", "cat", "sat"]

    def test_keeps_intraword_apostrophe(self):
        assert metrics.tokenize("don't stop") == ["don't", "stop"]

    def test_whitespace_only(self):
        assert metrics.tokenize("  ") == []

    def test_edge_apostrophes_dropped(self):
        assert metrics.tokenize("'tis the 'word'") == ["tis", "the", "word"]


class TestEditDistance:
    def test_identity(self):
        assert metrics.edit_distance(["the", "cat", "sat"], ["the", "cat", "sat"]) == (0, 0, 0)

    def test_single_deletion(self):
        s, i, d = metrics.edit_distance(["the", "cat", "sat"], ["the", "cat"])
        assert (s, i, d) == (0, 0, 1)

    def test_empty_ref_rejected(self):
        with pytest.raises(CascadeError):
            metrics.edit_distance([], ["a"])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1234)
        alphabet = list("abcde")
        for _ in range(500):
            m = int(rng.integers(1, 9))
            n = int(rng.integers(0, 9))
            ref = [alphabet[k] for k in rng.integers(0, len(alphabet), m)]
            hyp = [alphabet[k] for k in rng.integers(0, len(alphabet), n)]
            s, i, d = metrics.edit_distance(ref, hyp)
            assert s + i + d == oracle_edit_distance(ref, hyp)

    def test_metric_properties_on_random_triples(self):
        # distance symmetry (S and I swap roles), identity of indiscernibles,
        # triangle inequality
        rng = np.random.default_rng(77)
        alphabet = list("abc")

        def dist(x, y):
            s, i, d = metrics.edit_distance(x, y)
            return s + i + d

        for _ in range(200):
            lens = rng.integers(1, 7, size=3)
            a, b, c = (
                [alphabet[k] for k in rng.integers(0, len(alphabet), L)] for L in lens
            )
            assert dist(a, b) == dist(b, a)
            assert (dist(a, b) == 0) == (a == b)
            assert dist(a, c) <= dist(a, b) + dist(b, c)


class TestWer:
    def test_one_substitution(self):
        out = metrics.wer("a b c", "a x c")
        assert out.substitutions == 1 and out.wer == 1 / 3

    def test_empty_hypothesis_is_all_deletions(self):
        out = metrics.wer("a b", "")
        assert out.deletions == 2 and out.wer == 1.0

    def test_wer_above_one(self):
        out = metrics.wer("a", "a b c")
        assert out.insertions == 2 and out.wer == 2.0

    def test_empty_reference_rejected(self):
        with pytest.raises(CascadeError):
            metrics.wer("...", "a b")


class TestRouteLabel:
    @pytest.mark.parametrize(
        "cheap,expensive,expected",
        [(0.5, 0.2, 1), (0.2, 0.2, 0), (0.1, 0.3, 0)],
    )
    def test_examples(self, cheap, expensive, expected):
        assert metrics.route_label(cheap, expensive) == expected

    def test_monotone_in_cheap_wer(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            we = float(rng.uniform(0, 2))
            wc = float(rng.uniform(0, 2))
            if metrics.route_label(wc, we) == 1:
                assert metrics.route_label(wc + float(rng.uniform(0, 1)), we) == 1


class TestRelativePerfMatrix:
    def test_diagonal_is_100(self, toy_corpus):
        m = metrics.relative_perf_matrix(toy_corpus, ["tiny", "small"])
        assert m[0][0] == 100.0 and m[1][1] == 100.0

    def test_two_record_enumeration(self, tmp_path):
        # WER pairs (0.0, 0.5) and (0.4, 0.2) for (m1, m2): each model wins once
        from conftest import write_manifest

        records = [
            {
                "utt_id": "r1",
                "ref_text": "a b",
                "enc_frames": 4,
                "models": {"m1": {"hyp": "a b"}, "m2": {"hyp": "a x"}},
            },
            {
                "utt_id": "r2",
                "ref_text": "a b c d e",
                "enc_frames": 4,
                "models": {"m1": {"hyp": "a b c x y"}, "m2": {"hyp": "a b c d x"}},
            },
        ]
        from asrcascade.corpus import load_manifest

        corpus = load_manifest(write_manifest(tmp_path / "m.jsonl", records))
        m = metrics.relative_perf_matrix(corpus, ["m1", "m2"])
        assert m[0][1] == 50.0 and m[1][0] == 50.0

    def test_complement_bound_on_random_corpora(self, tmp_path):
        from conftest import write_manifest
        from asrcascade.corpus import load_manifest

        rng = np.random.default_rng(9)
        for trial in range(20):
            records = []
            for i in range(int(rng.integers(2, 12))):
                n = int(rng.integers(1, 6))
                ref = " ".join(f"w{k}" for k in range(n))
                hyps = {}
                for mid in ("m1", "m2"):
                    errs = int(rng.integers(0, n + 1))
                    toks = [f"z{j}" if j < errs else f"w{j}" for j in range(n)]
                    hyps[mid] = {"hyp": " ".join(toks)}
                records.append(
                    {"utt_id": f"u{i}", "ref_text": ref, "enc_frames": 4, "models": hyps}
                )
            corpus = load_manifest(
                write_manifest(tmp_path / f"rand{trial}.jsonl", records)
            )
            m = metrics.relative_perf_matrix(corpus, ["m1", "m2"])
            assert m[0][1] + m[1][0] >= 100.0 - 1e-9

    def test_missing_hypothesis_names_everything(self, tmp_path):
        from conftest import write_manifest
        from asrcascade.corpus import load_manifest

        records = [
            {"utt_id": "u0", "ref_text": "a", "enc_frames": 4, "models": {"m1": {"hyp": "a"}}}
        ]
        corpus = load_manifest(write_manifest(tmp_path / "m.jsonl", records))
        with pytest.raises(CascadeError, match="u0.*m2"):
            metrics.relative_perf_matrix(corpus, ["m1", "m2"])


class TestDecisionAccuracy:
    def test_all_match(self):
        assert metrics.decision_accuracy([1, 0, 1], [1, 0, 1]) == 100.0

    def test_none_match(self):
        assert metrics.decision_accuracy([1, 0], [0, 1]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(CascadeError):
            metrics.decision_accuracy([1], [1, 0])


class TestPearson:
    def test_linear_is_one(self):
        xs = [0.5, 1.0, 2.5, 4.0]
        ys = [2 * x + 1 for x in xs]
        assert abs(metrics.pearson(xs, ys) - 1.0) < 1e-12

    def test_reversed_is_minus_one(self):
        assert abs(metrics.pearson([1, 2, 3], [3, 2, 1]) + 1.0) < 1e-12

    def test_hand_computed_value(self):
        # deviations x: [-1.5,-.5,.5,1.5], y: [-1.5,.5,-.5,1.5]
        # sum xy = 4, ss_x = ss_y = 5 -> r = 4/5
        assert abs(metrics.pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12

    def test_zero_variance_rejected(self):
        with pytest.raises(CascadeError):
            metrics.pearson([1, 1, 1], [1, 2, 3])

    def test_bounded_on_random_input(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 30))
            xs = rng.normal(size=n).tolist()
            ys = rng.normal(size=n).tolist()
            assert abs(metrics.pearson(xs, ys)) <= 1.0 + 1e-12


class TestSpearman:
    def test_monotone_transform_is_one(self):
        xs = [0.1, 0.7, 1.9, 5.0, 9.1]
        ys = [math.exp(x) for x in xs]
        assert abs(metrics.spearman(xs, ys) - 1.0) < 1e-12

    def test_reversed_is_minus_one(self):
        assert abs(metrics.spearman([1, 2, 3], [9, 4, 1]) + 1.0) < 1e-12

    def test_tie_uses_average_ranks(self):
        # ranks of ys = [1, 2.5, 2.5, 4]; pearson([1,2,3,4], ranks) = sqrt(0.9)
        got = metrics.spearman([1, 2, 3, 4], [10, 20, 20, 30])
        assert abs(got - math.sqrt(0.9)) < 1e-12

    def test_invariant_under_strictly_increasing_transform(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(3, 20))
            xs = rng.normal(size=n).tolist()
            ys = rng.normal(size=n).tolist()
            base = metrics.spearman(xs, ys)
            warped = [math.atan(3 * y) + y**3 for y in ys]
            assert abs(metrics.spearman(xs, warped) - base) < 1e-12
