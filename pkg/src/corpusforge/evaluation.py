"""Transcript normalization, WER computation, and multi-domain report emission."""

from __future__ import annotations

import logging
import math
import re
import unicodedata
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# Well-formed non-speech event markers, e.g. "<cough>". Nested or unclosed
# brackets are left alone.
_EVENT_MARKER_RE = re.compile(r"<[^<>]*>")

WER_UNDEFINED = math.inf


@dataclass(frozen=True)
class NormalizationProfile:
    """A named, frozen normalization rule chain; its id is embedded in reports."""

    profile_id: str = "greek-basic-v1"


PROFILES = {
    "greek-basic-v1": NormalizationProfile("greek-basic-v1"),
}


def get_profile(profile_id: str) -> NormalizationProfile:
    try:
        return PROFILES[profile_id]
    except KeyError:
        raise ValueError(f"unknown normalization profile {profile_id!r}") from None


@dataclass(frozen=True)
class NormalizedText:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


def _strip_combining_marks(text: str) -> str:
    decomposed = unicodedata.normalize("NFD", text)
    kept = "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn")
    return unicodedata.normalize("NFC", kept)


def normalize(text: str, rules: NormalizationProfile | None = None) -> NormalizedText:
    """Normalize to comparable word tokens.

    Rule chain: Unicode NFC, locale-independent lowercasing (final sigma folds
    to plain sigma), combining-mark removal (drops Greek tonos/dialytika),
    every non-letter non-digit codepoint becomes a space, whitespace collapses,
    and the result splits into tokens. Idempotent: normalizing a rejoined
    normalized text is the identity.
    """
    del rules  # single rule chain today; the profile id names it in reports
    text = unicodedata.normalize("NFC", text)
    text = text.casefold()  # case folding maps final sigma to sigma
    text = _strip_combining_marks(text)
    text = "".join(ch if ch.isalpha() or ch.isdigit() else " " for ch in text)
    return NormalizedText(tuple(text.split()))


def clean_reference(text: str, rules: NormalizationProfile | None = None) -> str:
    """Remove well-formed angle-bracketed non-speech markers before normalization."""
    del rules
    return _EVENT_MARKER_RE.sub("", text)


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    reference_len: int
    wer: float

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def undefined(self) -> bool:
        return math.isinf(self.wer)


def wer(reference: NormalizedText, hypothesis: NormalizedText) -> WerBreakdown:
    """Token-level Levenshtein alignment with unit costs.

    The S/D/I split comes from one optimal alignment; when predecessor costs
    tie, substitution is preferred over insertion over deletion, which makes
    the split deterministic (the S+D+I total is the same for any optimal
    alignment). An empty reference yields WER 0 for an empty hypothesis and an
    undefined (infinite) WER otherwise.
    """
    ref, hyp = reference.tokens, hypothesis.tokens
    n, m = len(ref), len(hyp)
    if n == 0:
        ins = m
        return WerBreakdown(0, 0, ins, 0, 0.0 if m == 0 else WER_UNDEFINED)

    # dist[i][j] = edit distance between ref[:i] and hyp[:j]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dist[i][0] = i
    for j in range(m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            row[j] = min(prev[j - 1] + (0 if same else 1), row[j - 1] + 1, prev[j] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and here == dist[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and here == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerBreakdown(subs, dels, ins, n, (subs + dels + ins) / n)


@dataclass
class PooledCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_len: int = 0

    def add(self, b: WerBreakdown) -> None:
        self.substitutions += b.substitutions
        self.deletions += b.deletions
        self.insertions += b.insertions
        self.reference_len += b.reference_len

    @property
    def wer_percent(self) -> float:
        if self.reference_len == 0:
            return 0.0
        errors = self.substitutions + self.deletions + self.insertions
        return 100.0 * errors / self.reference_len


@dataclass
class EvalReport:
    """Per-domain and aggregate WER in the shape of the published result tables."""

    rows: list[tuple[str, str, str, float]] = field(default_factory=list)
    per_domain: dict[str, float] = field(default_factory=dict)
    scaling_curve: list[dict] = field(default_factory=list)
    profile_id: str = "greek-basic-v1"
    pooled: PooledCounts = field(default_factory=PooledCounts)
    per_domain_counts: dict[str, PooledCounts] = field(default_factory=dict)
    undefined_segments: int = 0


def aggregate(
    per_segment: list[tuple[str, WerBreakdown]],
    dataset: str = "GPC-50",
    model: str = "unknown",
    finetune_corpus: str = "-",
    profile_id: str = "greek-basic-v1",
) -> EvalReport:
    """Pool error counts per domain and overall.

    Aggregate WER is pooled (sum of errors over sum of reference lengths),
    never a mean of per-segment WERs. Segments with an undefined WER (empty
    reference, non-empty hypothesis) are excluded with a warning.
    """
    report = EvalReport(profile_id=profile_id)
    for category, breakdown in per_segment:
        if breakdown.undefined:
            report.undefined_segments += 1
            continue
        report.pooled.add(breakdown)
        report.per_domain_counts.setdefault(category, PooledCounts()).add(breakdown)
    if report.undefined_segments:
        logger.warning(
            "excluded %d segment(s) with undefined WER (empty reference) from pooled counts",
            report.undefined_segments,
        )
    report.per_domain = {
        cat: counts.wer_percent for cat, counts in sorted(report.per_domain_counts.items())
    }
    report.rows = [(dataset, model, finetune_corpus, report.pooled.wer_percent)]
    return report


def scaling_curve(
    results: list[tuple[float, EvalReport]],
    series: str = "fine-tuned",
    baseline: tuple[str, float] | None = None,
) -> list[dict]:
    """Plot-data records for an hours-vs-WER curve, plus an optional flagged baseline."""
    hours = [h for h, _ in results]
    if any(b >= a for a, b in zip(hours[1:], hours)):
        raise ValueError("train_hours must be strictly increasing")
    records = [
        {"x": h, "y": round(rep.pooled.wer_percent, 2), "series": series, "baseline": False}
        for h, rep in results
    ]
    if baseline is not None:
        label, wer_pct = baseline
        records.append({"x": None, "y": round(wer_pct, 2), "series": label, "baseline": True})
    return records


def domain_bars(report: EvalReport, series: str) -> list[dict]:
    """Plot-data records for per-domain WER bars."""
    return [
        {"x": category, "y": round(wer_pct, 2), "series": series}
        for category, wer_pct in report.per_domain.items()
    ]


_TABLE_COLUMNS = ("Dataset", "Model", "Finetuning corpus", "WER")


def render_table(rows: list[tuple[str, str, str, float]]) -> str:
    """Aligned-column text table with the published column structure."""
    cells = [_TABLE_COLUMNS] + [
        (dataset, model, corpus, f"{wer_pct:.2f}") for dataset, model, corpus, wer_pct in rows
    ]
    widths = [max(len(row[c]) for row in cells) for c in range(4)]
    lines = []
    for row in cells:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir, series: str | None = None) -> dict[str, str]:
    """Emit the table, machine-readable rows, and plot data under out_dir.

    Returns a map of artifact name to path. Plot-data files begin with a
    header record naming the plot kind and normalization profile.
    """
    from pathlib import Path

    from .records import write_records, write_text_atomic

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if series is None:
        series = " / ".join(report.rows[0][1:3]) if report.rows else "unknown"

    paths = {
        "table": out_dir / "report_table.txt",
        "rows": out_dir / "report_rows.jsonl",
        "domain_bars": out_dir / "plot_domain_bars.jsonl",
        "scaling_curve": out_dir / "plot_scaling_curve.jsonl",
    }
    write_text_atomic(paths["table"], render_table(report.rows))
    write_records(
        paths["rows"],
        [
            {
                "dataset": d,
                "model": m,
                "finetune_corpus": c,
                "wer_percent": round(w, 2),
                "profile": report.profile_id,
            }
            for d, m, c, w in report.rows
        ],
    )
    bars_header = {"type": "plot-data", "kind": "domain-bars", "profile": report.profile_id}
    write_records(paths["domain_bars"], [bars_header] + domain_bars(report, series))
    curve_header = {"type": "plot-data", "kind": "scaling-curve", "profile": report.profile_id}
    write_records(paths["scaling_curve"], [curve_header] + report.scaling_curve)
    return {name: str(p) for name, p in paths.items()}
