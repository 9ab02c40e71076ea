import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpusforge.evaluation import (
    NormalizedText,
    aggregate,
    clean_reference,
    domain_bars,
    get_profile,
    normalize,
    render_table,
    scaling_curve,
    wer,
)

from .oracles import edit_distance_recursive

PROFILE = get_profile("greek-basic-v1")


class TestNormalize:
    def test_greek_greeting(self):
        assert normalize("Καλημέρα, κόσμε!", PROFILE).tokens == ("καλημερα", "κοσμε")

    def test_empty_string(self):
        assert normalize("", PROFILE).tokens == ()

    def test_final_sigma_folds(self):
        assert normalize("ο κόσμος", PROFILE).tokens == ("ο", "κοσμοσ")

    def test_diacritics_and_dialytika_stripped(self):
        assert normalize("προϋπόθεση", PROFILE).tokens == ("προυποθεση",)

    def test_punctuation_becomes_separator(self):
        assert normalize("ναι—όχι/ίσως", PROFILE).tokens == ("ναι", "οχι", "ισωσ")

    def test_digits_survive(self):
        assert normalize("το 2024 ήταν", PROFILE).tokens == ("το", "2024", "ηταν")

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=60))
    def test_idempotent(self, text):
        once = normalize(text, PROFILE)
        again = normalize(once.text(), PROFILE)
        assert once.tokens == again.tokens

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=60))
    def test_no_empty_or_punctuation_tokens(self, text):
        for token in normalize(text, PROFILE).tokens:
            assert token
            assert any(ch.isalpha() or ch.isdigit() for ch in token)

    def test_unknown_profile_rejected(self):
        with pytest.raises(ValueError):
            get_profile("does-not-exist")


class TestCleanReference:
    def test_marker_removed(self):
        assert clean_reference("ναι <cough> ναι", PROFILE) == "ναι  ναι"

    def test_marker_free_text_unchanged(self):
        assert clean_reference("τίποτα εδώ", PROFILE) == "τίποτα εδώ"

    def test_unclosed_bracket_untouched(self):
        assert clean_reference("a <b c", PROFILE) == "a <b c"

    def test_cleaning_then_normalizing(self):
        tokens = normalize(clean_reference("ναι <cough> ναι", PROFILE), PROFILE).tokens
        assert tokens == ("ναι", "ναι")


def nt(*tokens):
    return NormalizedText(tuple(tokens))


class TestWer:
    def test_identical(self):
        b = wer(nt("a", "b", "c"), nt("a", "b", "c"))
        assert (b.substitutions, b.deletions, b.insertions, b.wer) == (0, 0, 0, 0.0)

    def test_sub_plus_insert(self):
        b = wer(nt("a", "b", "c"), nt("a", "x", "c", "d"))
        assert (b.substitutions, b.insertions, b.deletions) == (1, 1, 0)
        assert b.wer == pytest.approx(2 / 3)

    def test_empty_reference_empty_hypothesis(self):
        b = wer(nt(), nt())
        assert b.wer == 0.0 and not b.undefined

    def test_empty_reference_nonempty_hypothesis_undefined(self):
        b = wer(nt(), nt("a"))
        assert math.isinf(b.wer) and b.undefined

    def test_all_deleted(self):
        b = wer(nt("a", "b"), nt())
        assert (b.substitutions, b.deletions, b.insertions) == (0, 2, 0)

    def test_total_matches_recursive_oracle(self):
        rng = random.Random(42)
        alphabet = ["α", "β", "γ", "δ", "ε"]
        for _ in range(300):
            ref = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            hyp = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
            b = wer(NormalizedText(ref), NormalizedText(hyp))
            assert b.errors == edit_distance_recursive(ref, hyp), (ref, hyp)

    def test_subs_plus_dels_bounded_by_reference(self):
        rng = random.Random(9)
        alphabet = ["x", "y", "z"]
        for _ in range(200):
            ref = tuple(rng.choice(alphabet) for _ in range(rng.randint(1, 10)))
            hyp = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 10)))
            b = wer(NormalizedText(ref), NormalizedText(hyp))
            assert b.substitutions + b.deletions <= b.reference_len
            assert b.wer == pytest.approx(b.errors / b.reference_len)

    def test_wer_bounded_by_trivial_strategy(self):
        rng = random.Random(17)
        alphabet = ["π", "ρ"]
        for _ in range(100):
            ref = tuple(rng.choice(alphabet) for _ in range(rng.randint(1, 8)))
            hyp = tuple(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))
            b = wer(NormalizedText(ref), NormalizedText(hyp))
            assert b.wer <= (len(ref) + len(hyp)) / len(ref)


class TestAggregate:
    def test_all_perfect(self):
        per_segment = [("Arts", wer(nt("a", "b"), nt("a", "b"))), ("News", wer(nt("x"), nt("x")))]
        report = aggregate(per_segment, dataset="GPC-50", model="small", finetune_corpus="-")
        assert report.rows == [("GPC-50", "small", "-", 0.0)]
        assert report.per_domain == {"Arts": 0.0, "News": 0.0}

    def test_pooled_counts_across_domains(self):
        seg_a = make_breakdown(errors=10, n=100)
        seg_b = make_breakdown(errors=30, n=100)
        report = aggregate([("A", seg_a), ("B", seg_b)])
        assert report.pooled.wer_percent == pytest.approx(20.0)
        assert report.per_domain["A"] == pytest.approx(10.0)
        assert report.per_domain["B"] == pytest.approx(30.0)

    def test_pooled_not_segment_mean(self):
        # one fully-wrong one-word segment, one perfect 99-word segment:
        # segment-mean WER would be 50 %, pooled is 1 %.
        bad = wer(nt("a"), nt("b"))
        good = wer(NormalizedText(("x",) * 99), NormalizedText(("x",) * 99))
        report = aggregate([("D", bad), ("D", good)])
        assert report.pooled.wer_percent == pytest.approx(1.0)

    def test_undefined_segments_excluded_with_warning(self, caplog):
        undefined = wer(nt(), nt("ghost"))
        ok = wer(nt("a"), nt("a"))
        with caplog.at_level("WARNING"):
            report = aggregate([("D", undefined), ("D", ok)])
        assert report.undefined_segments == 1
        assert report.pooled.reference_len == 1
        assert any("undefined" in rec.message for rec in caplog.records)


def make_breakdown(errors: int, n: int):
    ref = tuple(f"w{i}" for i in range(n))
    hyp = tuple((f"x{i}" if i < errors else f"w{i}") for i in range(n))
    return wer(NormalizedText(ref), NormalizedText(hyp))


class TestScalingCurve:
    def test_points_plus_baseline(self):
        reports = [aggregate([("D", make_breakdown(e, 100))]) for e in (40, 30, 20, 15, 12)]
        results = list(zip([32.0, 80.0, 160.0, 320.0, 623.0], reports))
        records = scaling_curve(results, series="small", baseline=("large-v2", 17.27))
        assert len(records) == 6
        assert [r["baseline"] for r in records] == [False] * 5 + [True]
        assert [r["x"] for r in records[:-1]] == [32.0, 80.0, 160.0, 320.0, 623.0]

    def test_empty_input(self):
        assert scaling_curve([]) == []

    def test_hours_must_increase(self):
        rep = aggregate([("D", make_breakdown(1, 10))])
        with pytest.raises(ValueError):
            scaling_curve([(20.0, rep), (10.0, rep)])


class TestRenderTable:
    def test_column_structure(self):
        text = render_table([("GPC-50", "small", "-", 42.87), ("GPC-50", "small", "GPC-50", 12.16)])
        lines = text.splitlines()
        assert lines[0].split() == ["Dataset", "Model", "Finetuning", "corpus", "WER"]
        assert "42.87" in lines[1]
        assert "12.16" in lines[2]

    def test_two_decimal_formatting(self):
        text = render_table([("d", "m", "c", 9.954999)])
        assert "9.95" in text

    def test_domain_bars_shape(self):
        report = aggregate([("Arts", make_breakdown(5, 50)), ("News", make_breakdown(1, 50))])
        bars = domain_bars(report, series="medium/GPC-50")
        assert bars == [
            {"x": "Arts", "y": 10.0, "series": "medium/GPC-50"},
            {"x": "News", "y": 2.0, "series": "medium/GPC-50"},
        ]
