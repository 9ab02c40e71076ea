import random
import unicodedata

import pytest

from corpusforge.filtering import (
    CodeSwitchPolicy,
    FilterReport,
    TranscribedSegment,
    apply_filters,
    filter_codeswitch,
    filter_hallucinations,
    load_segments,
    save_segments,
)
from corpusforge.segment import Provenance, SegmentSpan

from .fixture_segments import (
    CODESWITCH,
    EMPTY,
    HALLUCINATION,
    KEEP,
    build_labeled_segments,
)


def seg(text, i=0, category="Arts", duration=30.0):
    return TranscribedSegment(
        episode_id=f"{i:04d}" + "0" * 28,
        span=SegmentSpan(0.0, duration, Provenance.PASSTHROUGH),
        transcript=text,
        category=category,
    )


class TestHallucinationFilter:
    def test_exemplar_caption_dropped(self):
        kept, dropped = filter_hallucinations([seg("Υπότιτλοι AUTHORWAVE")])
        assert kept == [] and len(dropped) == 1

    def test_ordinary_greek_kept(self):
        kept, dropped = filter_hallucinations([seg("καλημέρα κόσμε")])
        assert len(kept) == 1 and dropped == []

    def test_pattern_mid_transcript_dropped(self):
        kept, dropped = filter_hallucinations([seg("αρχή Υπότιτλοι AUTHORWAVE τέλος")])
        assert kept == [] and len(dropped) == 1

    def test_match_is_case_sensitive(self):
        kept, _ = filter_hallucinations([seg("υπότιτλοι authorwave")])
        assert len(kept) == 1

    def test_nfd_input_still_matches(self):
        decomposed = unicodedata.normalize("NFD", "Υπότιτλοι AUTHORWAVE")
        assert decomposed != "Υπότιτλοι AUTHORWAVE"  # really decomposed
        kept, dropped = filter_hallucinations([seg(decomposed)])
        assert kept == [] and len(dropped) == 1

    def test_empty_pattern_list_rejected(self):
        with pytest.raises(ValueError):
            filter_hallucinations([seg("x")], patterns=())


class TestCodeSwitchFilter:
    def test_exemplar_instagram_dropped(self):
        kept, dropped = filter_codeswitch([seg("ακολουθήστε με στο Instagram")])
        assert kept == [] and len(dropped) == 1

    def test_all_greek_kept(self):
        kept, dropped = filter_codeswitch([seg("όλα στα ελληνικά εδώ")])
        assert len(kept) == 1 and dropped == []

    def test_short_latin_run_kept(self):
        kept, _ = filter_codeswitch([seg("ναι εντάξει ok")])
        assert len(kept) == 1

    def test_latin_outside_boundary_window_kept(self):
        text = "ο φίλος μου μου έδειξε το Facebook προφίλ του αδερφού του χθες το απόγευμα"
        kept, _ = filter_codeswitch([seg(text)])
        assert len(kept) == 1

    def test_policy_window_is_configurable(self):
        text = "ο φίλος μου μου έδειξε το Facebook προφίλ του αδερφού του χθες το απόγευμα"
        wide = CodeSwitchPolicy(boundary_window_words=7)
        kept, dropped = filter_codeswitch([seg(text)], wide)
        assert kept == [] and len(dropped) == 1

    def test_run_threshold_is_configurable(self):
        strict = CodeSwitchPolicy(latin_run_min_chars=2)
        kept, dropped = filter_codeswitch([seg("ναι εντάξει ok")], strict)
        assert kept == [] and len(dropped) == 1

    def test_greek_letters_never_count_as_latin(self):
        kept, _ = filter_codeswitch([seg("ΑΒΓΔΕΖ αβγδεζ")])  # Greek capitals look Latin
        assert len(kept) == 1


class TestApplyFilters:
    def test_ten_segment_fixture(self):
        segments = (
            [seg("Υπότιτλοι AUTHORWAVE", i) for i in range(2)]
            + [seg("ακολουθήστε με στο Instagram", 2)]
            + [seg(f"κείμενο νούμερο {i}", i + 3) for i in range(7)]
        )
        kept, report = apply_filters(segments)
        assert len(kept) == 7
        assert (
            report.dropped_hallucination,
            report.dropped_codeswitch,
            report.dropped_empty,
        ) == (2, 1, 0)
        assert report.input_count == 10 and report.kept_count == 7

    def test_empty_input(self):
        kept, report = apply_filters([])
        assert kept == []
        assert report.input_count == 0 and report.kept_count == 0
        assert report.input_hours == 0.0

    def test_idempotent_on_kept(self):
        segments, _ = apply_filters([s for s, _ in build_labeled_segments()])
        again, report = apply_filters(segments)
        assert again == segments
        assert (
            report.dropped_hallucination,
            report.dropped_codeswitch,
            report.dropped_empty,
        ) == (0, 0, 0)

    def test_drop_counts_invariant_under_permutation(self):
        segments = [s for s, _ in build_labeled_segments()]
        _, report_a = apply_filters(segments)
        shuffled = segments[:]
        random.Random(99).shuffle(shuffled)
        _, report_b = apply_filters(shuffled)
        assert (
            report_a.dropped_hallucination + report_a.dropped_codeswitch
            == report_b.dropped_hallucination + report_b.dropped_codeswitch
        )
        assert report_a.kept_count == report_b.kept_count

    def test_transcripts_never_mutated(self):
        segments = [s for s, _ in build_labeled_segments()]
        originals = {s.episode_id: s.transcript for s in segments}
        kept, _ = apply_filters(segments)
        for s in kept:
            assert s.transcript == originals[s.episode_id]

    def test_kept_hours_accounting(self):
        segments = [s for s, _ in build_labeled_segments()]
        kept, report = apply_filters(segments)
        assert report.input_hours == pytest.approx(50 * 30.0 / 3600.0, abs=1e-6)
        assert report.kept_hours == pytest.approx(sum(s.duration_s for s in kept) / 3600.0, abs=1e-6)
        assert report.kept_hours < report.input_hours

    def test_labeled_fixture_perfect_precision_recall(self):
        labeled = build_labeled_segments()
        kept, report = apply_filters([s for s, _ in labeled])
        kept_ids = {s.episode_id for s in kept}
        for segment, label in labeled:
            if label == KEEP:
                assert segment.episode_id in kept_ids, segment.transcript
            else:
                assert segment.episode_id not in kept_ids, segment.transcript
        expected = {
            HALLUCINATION: sum(1 for _, l in labeled if l == HALLUCINATION),
            CODESWITCH: sum(1 for _, l in labeled if l == CODESWITCH),
            EMPTY: sum(1 for _, l in labeled if l == EMPTY),
        }
        assert report.dropped_hallucination == expected[HALLUCINATION]
        assert report.dropped_codeswitch == expected[CODESWITCH]
        assert report.dropped_empty == expected[EMPTY]
        report.validate()

    def test_report_identity_guard(self):
        broken = FilterReport(input_count=5, kept_count=5, dropped_empty=1)
        with pytest.raises(ValueError):
            broken.validate()


class TestSegmentIO:
    def test_roundtrip(self, tmp_path):
        segments = [s for s, _ in build_labeled_segments()][:5]
        path = tmp_path / "segments.jsonl"
        save_segments(segments, path)
        assert load_segments(path) == segments
