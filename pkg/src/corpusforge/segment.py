"""Cut-and-merge segmentation: turn VAD score traces into speech spans of bounded length.

Long active regions are split at the frames with the lowest VAD score, short
neighbouring spans are merged back together, and no emitted span ever exceeds
the configured maximum duration (30 s by default, the window a Whisper-style
model can consume in one shot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

DEFAULT_T0_S = 30.0

# Slack for float comparisons against the hard duration cap.
_CAP_EPS = 1e-9


class Provenance(str, Enum):
    CUT = "CUT"
    MERGED = "MERGED"
    PASSTHROUGH = "PASSTHROUGH"


class UncuttableRegion(Exception):
    """An over-long region admits no cut satisfying the minimum-piece constraint."""


def frame_count(audio_duration_s: float, frame_hop_s: float) -> int:
    """Number of frames covering a duration: ceil(duration / hop), float-tolerant."""
    return math.ceil(audio_duration_s / frame_hop_s - 1e-9)


@dataclass(frozen=True)
class VadTrace:
    """Frame-level speech scores in [0, 1] at a fixed hop."""

    scores: tuple[float, ...]
    frame_hop_s: float
    audio_duration_s: float

    def __post_init__(self):
        if self.frame_hop_s <= 0:
            raise ValueError("frame_hop_s must be positive")
        if self.audio_duration_s < 0:
            raise ValueError("audio_duration_s must be nonnegative")
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        expected = frame_count(self.audio_duration_s, self.frame_hop_s)
        if len(self.scores) != expected:
            raise ValueError(
                f"trace has {len(self.scores)} frames, expected {expected} "
                f"for {self.audio_duration_s} s at hop {self.frame_hop_s} s"
            )
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"VAD score {s} outside [0, 1]")


@dataclass(frozen=True)
class ActiveRegion:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0.0 <= self.start_s < self.end_s):
            raise ValueError(f"invalid active region [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SegmentSpan:
    start_s: float
    end_s: float
    provenance: Provenance

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise ValueError(f"empty span [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SegmenterConfig:
    t0_s: float = DEFAULT_T0_S
    onset_threshold: float = 0.5
    offset_threshold: float = 0.363
    min_region_s: float = 0.25
    max_merge_gap_s: float = 0.5
    min_cut_piece_s: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.min_cut_piece_s < self.t0_s):
            raise ValueError("min_cut_piece_s must lie in (0, t0_s)")
        if self.offset_threshold > self.onset_threshold:
            raise ValueError("offset_threshold must be <= onset_threshold")
        for name in ("onset_threshold", "offset_threshold"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")


def binarize(trace: VadTrace, cfg: SegmenterConfig) -> list[ActiveRegion]:
    """Hysteresis thresholding of a VAD trace into active regions.

    A region opens at the first frame with score >= onset_threshold and closes
    at the first later frame with score < offset_threshold. Regions shorter
    than min_region_s are discarded.
    """
    hop = trace.frame_hop_s
    regions: list[ActiveRegion] = []
    open_frame: int | None = None

    def close(end_frame: int) -> None:
        start_s = open_frame * hop
        end_s = min(end_frame * hop, trace.audio_duration_s)
        if end_s - start_s >= cfg.min_region_s - 1e-12 and end_s > start_s:
            regions.append(ActiveRegion(start_s, end_s))

    for i, score in enumerate(trace.scores):
        if open_frame is None:
            if score >= cfg.onset_threshold:
                open_frame = i
        elif score < cfg.offset_threshold:
            close(i)
            open_frame = None
    if open_frame is not None:
        close(len(trace.scores))
    return regions


def _frame_range(region_start_s: float, region_end_s: float, trace: VadTrace) -> tuple[int, int]:
    """Half-open frame index range intersecting a time interval."""
    hop = trace.frame_hop_s
    lo = int(math.floor(region_start_s / hop + 1e-9))
    hi = int(math.ceil(region_end_s / hop - 1e-9))
    return max(lo, 0), min(hi, len(trace.scores))


def cut_region(region: ActiveRegion, trace: VadTrace, cfg: SegmenterConfig) -> list[SegmentSpan]:
    """Split an over-long region at low-score frames until every piece fits t0_s.

    Recursive bisection: among frames whose boundary leaves both pieces at
    least min_cut_piece_s long, pick the one with the globally minimal VAD
    score; ties go to the frame closest to the current piece's midpoint, then
    to the earlier frame. Regions already within t0_s pass through untouched.
    """
    if region.duration_s <= cfg.t0_s + _CAP_EPS:
        return [SegmentSpan(region.start_s, region.end_s, Provenance.PASSTHROUGH)]
    pieces = _bisect(region.start_s, region.end_s, trace, cfg)
    return [SegmentSpan(s, e, Provenance.CUT) for s, e in pieces]


def _bisect(start_s: float, end_s: float, trace: VadTrace, cfg: SegmenterConfig) -> list[tuple[float, float]]:
    if end_s - start_s <= cfg.t0_s + _CAP_EPS:
        return [(start_s, end_s)]
    hop = trace.frame_hop_s
    mid = (start_s + end_s) / 2.0
    lo, hi = _frame_range(start_s, end_s, trace)

    best_key: tuple[float, float, int] | None = None
    best_frame = -1
    for f in range(lo, hi):
        t = f * hop
        if t - start_s < cfg.min_cut_piece_s - 1e-9:
            continue
        if end_s - t < cfg.min_cut_piece_s - 1e-9:
            continue
        key = (trace.scores[f], abs(t - mid), f)
        if best_key is None or key < best_key:
            best_key = key
            best_frame = f
    if best_key is None:
        raise UncuttableRegion(
            f"region [{start_s}, {end_s}] exceeds t0={cfg.t0_s}s but no cut leaves "
            f"both pieces >= {cfg.min_cut_piece_s}s"
        )
    cut_t = best_frame * hop
    return _bisect(start_s, cut_t, trace, cfg) + _bisect(cut_t, end_s, trace, cfg)


def merge_spans(spans: list[SegmentSpan], cfg: SegmenterConfig) -> list[SegmentSpan]:
    """Greedy left-to-right merge of adjacent spans.

    Two neighbours merge (absorbing the gap between them) when the gap is at
    most max_merge_gap_s and the combined span stays within t0_s. Merged spans
    are tagged MERGED; untouched spans keep their provenance.
    """
    if not spans:
        return []
    out: list[SegmentSpan] = []
    cur = spans[0]
    for nxt in spans[1:]:
        gap = nxt.start_s - cur.end_s
        if gap <= cfg.max_merge_gap_s and nxt.end_s - cur.start_s <= cfg.t0_s + _CAP_EPS:
            cur = SegmentSpan(cur.start_s, nxt.end_s, Provenance.MERGED)
        else:
            out.append(cur)
            cur = nxt
    out.append(cur)
    return out


def segment_audio(trace: VadTrace, cfg: SegmenterConfig | None = None) -> list[SegmentSpan]:
    """Full cut-and-merge pass: binarize, cut over-long regions, merge short ones."""
    cfg = cfg or SegmenterConfig()
    spans: list[SegmentSpan] = []
    for region in binarize(trace, cfg):
        spans.extend(cut_region(region, trace, cfg))
    return merge_spans(spans, cfg)


def validate_spans(spans: list[SegmentSpan], cfg: SegmenterConfig) -> None:
    """Raise ValueError if spans violate ordering, overlap, or the duration cap."""
    prev_end = -math.inf
    for span in spans:
        if span.duration_s > cfg.t0_s + _CAP_EPS:
            raise ValueError(f"span [{span.start_s}, {span.end_s}] exceeds cap {cfg.t0_s}s")
        if span.start_s < prev_end:
            raise ValueError(f"span starting at {span.start_s} overlaps previous end {prev_end}")
        prev_end = span.end_s


# ---------------------------------------------------------------------------
# Trace interchange files: one header line "frame_hop_s<TAB>audio_duration_s",
# then one decimal score per line.


def write_trace(path, trace: VadTrace) -> None:
    from .records import write_text_atomic

    lines = [f"{trace.frame_hop_s!r}\t{trace.audio_duration_s!r}"]
    lines.extend(repr(s) for s in trace.scores)
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_trace(path) -> VadTrace:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            hop_str, dur_str = header.split("\t")
            hop, dur = float(hop_str), float(dur_str)
        except ValueError as exc:
            raise ValueError(f"{path}: bad trace header {header!r}") from exc
        scores = [float(line) for line in fh if line.strip()]
    return VadTrace(tuple(scores), hop, dur)
