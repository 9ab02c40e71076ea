"""Post-processing of transcribed segments: hallucinated-caption and code-switch removal.

Filters only ever drop segments, never edit transcript text. The code-switch
rule is a boundary-window heuristic: Whisper-style hallucinations and
foreign-language sign-offs cluster at the start or end of a transcript, and a
monolingual forced aligner produces unreliable timestamps for them.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

from .backend.protocol import WordTiming
from .records import read_records, write_records
from .segment import Provenance, SegmentSpan

DEFAULT_HALLUCINATION_PATTERNS = ("Υπότιτλοι AUTHORWAVE",)


@dataclass(frozen=True)
class TranscribedSegment:
    episode_id: str
    span: SegmentSpan
    transcript: str
    category: str
    word_timings: tuple[WordTiming, ...] | None = None

    @property
    def duration_s(self) -> float:
        return self.span.duration_s

    def to_record(self) -> dict:
        rec = {
            "episode_id": self.episode_id,
            "start_s": self.span.start_s,
            "end_s": self.span.end_s,
            "provenance": self.span.provenance.value,
            "category": self.category,
            "transcript": self.transcript,
            "words": None,
        }
        if self.word_timings is not None:
            rec["words"] = [
                {"word": w.word, "start_s": w.start_s, "end_s": w.end_s, "confidence": w.confidence}
                for w in self.word_timings
            ]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TranscribedSegment":
        words = rec.get("words")
        timings = None
        if words is not None:
            timings = tuple(
                WordTiming(w["word"], w["start_s"], w["end_s"], w["confidence"]) for w in words
            )
        return cls(
            episode_id=rec["episode_id"],
            span=SegmentSpan(rec["start_s"], rec["end_s"], Provenance(rec["provenance"])),
            transcript=rec["transcript"],
            category=rec["category"],
            word_timings=timings,
        )


def save_segments(segments: list[TranscribedSegment], path) -> int:
    return write_records(path, (s.to_record() for s in segments))


def load_segments(path) -> list[TranscribedSegment]:
    return [TranscribedSegment.from_record(rec) for rec in read_records(path)]


@dataclass(frozen=True)
class CodeSwitchPolicy:
    latin_run_min_chars: int = 4
    boundary_window_words: int = 5


@dataclass(frozen=True)
class FilterConfig:
    hallucination_patterns: tuple[str, ...] = DEFAULT_HALLUCINATION_PATTERNS
    codeswitch: CodeSwitchPolicy = CodeSwitchPolicy()
    drop_empty: bool = True


@dataclass
class FilterReport:
    input_count: int = 0
    kept_count: int = 0
    dropped_hallucination: int = 0
    dropped_codeswitch: int = 0
    dropped_empty: int = 0
    input_hours: float = 0.0
    kept_hours: float = 0.0

    def validate(self) -> None:
        drops = self.dropped_hallucination + self.dropped_codeswitch + self.dropped_empty
        if self.input_count != self.kept_count + drops:
            raise ValueError(
                f"count identity violated: {self.input_count} != {self.kept_count} + {drops}"
            )

    def to_record(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "dropped_hallucination": self.dropped_hallucination,
            "dropped_codeswitch": self.dropped_codeswitch,
            "dropped_empty": self.dropped_empty,
            "input_hours": self.input_hours,
            "kept_hours": self.kept_hours,
        }


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def filter_hallucinations(
    segments: list[TranscribedSegment],
    patterns: tuple[str, ...] = DEFAULT_HALLUCINATION_PATTERNS,
) -> tuple[list[TranscribedSegment], list[TranscribedSegment]]:
    """Drop segments whose transcript contains any pattern as a substring.

    Matching is case-sensitive after NFC normalization of both sides.
    """
    if not patterns:
        raise ValueError("hallucination filter needs at least one pattern")
    normalized = [_nfc(p) for p in patterns]
    kept, dropped = [], []
    for seg in segments:
        text = _nfc(seg.transcript)
        (dropped if any(p in text for p in normalized) else kept).append(seg)
    return kept, dropped


def _is_latin_letter(ch: str) -> bool:
    return ch.isalpha() and unicodedata.name(ch, "").startswith("LATIN")


def _max_latin_run(token: str) -> int:
    longest = run = 0
    for ch in token:
        if _is_latin_letter(ch):
            run += 1
            longest = max(longest, run)
        else:
            run = 0
    return longest


def filter_codeswitch(
    segments: list[TranscribedSegment],
    policy: CodeSwitchPolicy = CodeSwitchPolicy(),
) -> tuple[list[TranscribedSegment], list[TranscribedSegment]]:
    """Drop segments with a long Latin-script run near either transcript boundary.

    A segment is dropped iff a maximal run of Latin-script letters of length
    >= latin_run_min_chars occurs within the first or last
    boundary_window_words tokens.
    """
    kept, dropped = [], []
    for seg in segments:
        tokens = _nfc(seg.transcript).split()
        w = policy.boundary_window_words
        window = tokens[:w] + tokens[max(w, len(tokens) - w):]
        hit = any(_max_latin_run(tok) >= policy.latin_run_min_chars for tok in window)
        (dropped if hit else kept).append(seg)
    return kept, dropped


def apply_filters(
    segments: list[TranscribedSegment],
    config: FilterConfig | None = None,
) -> tuple[list[TranscribedSegment], FilterReport]:
    """Hallucination filter, then code-switch filter, then empty-transcript drop.

    Kept segments come back in deterministic (episode_id, start_s) order.
    """
    config = config or FilterConfig()
    report = FilterReport(
        input_count=len(segments),
        input_hours=sum(s.duration_s for s in segments) / 3600.0,
    )

    kept, dropped_h = filter_hallucinations(segments, config.hallucination_patterns)
    report.dropped_hallucination = len(dropped_h)

    kept, dropped_c = filter_codeswitch(kept, config.codeswitch)
    report.dropped_codeswitch = len(dropped_c)

    if config.drop_empty:
        nonempty = [s for s in kept if s.transcript.strip()]
        report.dropped_empty = len(kept) - len(nonempty)
        kept = nonempty

    kept = sorted(kept, key=lambda s: (s.episode_id, s.span.start_s))
    report.kept_count = len(kept)
    report.kept_hours = sum(s.duration_s for s in kept) / 3600.0
    report.validate()
    return kept, report
