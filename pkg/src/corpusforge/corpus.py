"""Stratified corpus assembly: per-category duration budgets, splits, nested subsets.

All sampling is episode-granular (a recording never straddles two splits, so
near-duplicate content cannot leak between train and test) and driven by a
keyed-hash shuffle: episodes are ordered by SHA-256(seed:salt:episode_id),
which is reproducible bit-exactly across runs, machines, and languages. The
algorithm name is recorded in every manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .filtering import TranscribedSegment
from .records import dumps_record, read_records, write_text_atomic

SHUFFLE_ALGORITHM = "sha256-keyed-order-v1"


class SplitKind(str, Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    TEST = "TEST"


class InsufficientCategoryData(Exception):
    """Raised when categories cannot meet a duration budget; lists the deficits."""

    def __init__(self, deficits: dict[str, float], budget_h: float):
        self.deficits = deficits
        self.budget_h = budget_h
        detail = ", ".join(f"{cat}: {hours:.3f} h" for cat, hours in sorted(deficits.items()))
        super().__init__(f"categories below the {budget_h:.3f} h budget: {detail}")


@dataclass(frozen=True)
class SplitSpec:
    name: str
    per_category_budget_s: float
    kind: SplitKind

    def __post_init__(self):
        if self.per_category_budget_s <= 0:
            raise ValueError("per-category budget must be positive")


@dataclass(frozen=True)
class SegmentRef:
    episode_id: str
    start_s: float
    end_s: float
    transcript_ref: str
    category: str
    split: str

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def segment_ref_key(episode_id: str, start_s: float, end_s: float) -> str:
    """Canonical segment reference: id plus millisecond-resolution span."""
    return f"{episode_id}:{round(start_s * 1000)}-{round(end_s * 1000)}"


@dataclass
class CorpusManifest:
    corpus_name: str
    splits: dict[str, list[SegmentRef]] = field(default_factory=dict)
    sampling_seed: int = 0
    parent_corpus: str | None = None
    shuffle_algorithm: str = SHUFFLE_ALGORITHM
    segments_file: str | None = None  # where transcript_refs resolve
    budgets_s: dict[str, float] = field(default_factory=dict)  # split -> per-category seconds

    def per_category_actual_s(self) -> dict[tuple[str, str], float]:
        totals: dict[tuple[str, str], float] = {}
        for split, refs in self.splits.items():
            for ref in refs:
                key = (split, ref.category)
                totals[key] = totals.get(key, 0.0) + ref.duration_s
        return totals

    def episode_ids(self, split: str) -> set[str]:
        return {ref.episode_id for ref in self.splits.get(split, [])}

    def validate(self) -> None:
        seen: dict[str, str] = {}
        for split, refs in self.splits.items():
            for ref in refs:
                key = segment_ref_key(ref.episode_id, ref.start_s, ref.end_s)
                if key in seen and seen[key] != split:
                    raise ValueError(f"segment {key} appears in splits {seen[key]} and {split}")
                seen[key] = split


@dataclass(frozen=True)
class _EpisodeBucket:
    episode_id: str
    category: str
    duration_s: float
    segments: tuple[TranscribedSegment, ...]


def _group_episodes(segments: list[TranscribedSegment]) -> dict[str, list[_EpisodeBucket]]:
    by_episode: dict[str, list[TranscribedSegment]] = {}
    for seg in segments:
        by_episode.setdefault(seg.episode_id, []).append(seg)
    buckets: dict[str, list[_EpisodeBucket]] = {}
    for episode_id, segs in by_episode.items():
        segs = sorted(segs, key=lambda s: s.span.start_s)
        bucket = _EpisodeBucket(
            episode_id=episode_id,
            category=segs[0].category,
            duration_s=sum(s.duration_s for s in segs),
            segments=tuple(segs),
        )
        buckets.setdefault(bucket.category, []).append(bucket)
    return buckets


def _shuffle_key(seed: int, salt: str, episode_id: str) -> str:
    return hashlib.sha256(f"{seed}:{salt}:{episode_id}".encode("utf-8")).hexdigest()


def _ordered(buckets: list[_EpisodeBucket], seed: int, salt: str) -> list[_EpisodeBucket]:
    return sorted(buckets, key=lambda b: _shuffle_key(seed, salt, b.episode_id))


def _take_until(buckets: list[_EpisodeBucket], budget_s: float) -> tuple[list[_EpisodeBucket], float]:
    """Whole episodes in order until the running total first reaches the budget."""
    taken: list[_EpisodeBucket] = []
    total = 0.0
    for bucket in buckets:
        if total >= budget_s:
            break
        taken.append(bucket)
        total += bucket.duration_s
    return taken, total


def _refs(buckets: list[_EpisodeBucket], split: str) -> list[SegmentRef]:
    refs = []
    for bucket in sorted(buckets, key=lambda b: b.episode_id):
        for seg in bucket.segments:
            refs.append(
                SegmentRef(
                    episode_id=seg.episode_id,
                    start_s=seg.span.start_s,
                    end_s=seg.span.end_s,
                    transcript_ref=segment_ref_key(seg.episode_id, seg.span.start_s, seg.span.end_s),
                    category=seg.category,
                    split=split,
                )
            )
    return refs


def build_stratified(
    segments: list[TranscribedSegment],
    categories: list[str],
    hours_per_category: float,
    seed: int,
    name: str | None = None,
) -> CorpusManifest:
    """Randomly draw whole episodes per category until each reaches the hour budget.

    Overshoot is bounded by one episode's duration. Deterministic given seed.
    """
    budget_s = hours_per_category * 3600.0
    buckets = _group_episodes(segments)
    deficits: dict[str, float] = {}
    chosen: dict[str, list[_EpisodeBucket]] = {}
    for category in sorted(categories):
        available = buckets.get(category, [])
        available_s = sum(b.duration_s for b in available)
        if available_s < budget_s:
            deficits[category] = available_s / 3600.0
            continue
        ordered = _ordered(available, seed, "stratify")
        taken, _ = _take_until(ordered, budget_s)
        chosen[category] = taken
    if deficits:
        raise InsufficientCategoryData(deficits, hours_per_category)

    manifest = CorpusManifest(
        corpus_name=name or f"stratified-{hours_per_category:g}h",
        sampling_seed=seed,
        budgets_s={"all": budget_s},
    )
    all_buckets = [b for cat in sorted(chosen) for b in chosen[cat]]
    manifest.splits["all"] = _refs(all_buckets, "all")
    return manifest


def carve_splits(
    manifest: CorpusManifest,
    segments: list[TranscribedSegment],
    test_s_per_cat: float,
    val_s_per_cat: float,
    seed: int,
) -> CorpusManifest:
    """Carve TEST and VALIDATION out of a stratified corpus at episode granularity.

    Per category, episodes are drawn by seeded order until the test budget is
    first reached, then (from the remainder) until the validation budget is
    reached; everything left becomes TRAIN. No episode straddles splits.
    """
    member_ids = set()
    for refs in manifest.splits.values():
        member_ids.update(ref.episode_id for ref in refs)
    pool = [s for s in segments if s.episode_id in member_ids]
    buckets = _group_episodes(pool)

    budgets = {"test": test_s_per_cat}
    if val_s_per_cat > 0:
        budgets["validation"] = val_s_per_cat
    out = CorpusManifest(
        corpus_name=manifest.corpus_name,
        sampling_seed=seed,
        parent_corpus=manifest.parent_corpus,
        segments_file=manifest.segments_file,
        budgets_s=budgets,
    )
    splits: dict[str, list[_EpisodeBucket]] = {"test": [], "validation": [], "train": []}
    deficits: dict[str, float] = {}
    for category in sorted(buckets):
        remaining = _ordered(buckets[category], seed, "carve")
        available_s = sum(b.duration_s for b in remaining)
        test_take, test_total = _take_until(remaining, test_s_per_cat)
        remaining = remaining[len(test_take):]
        val_take: list[_EpisodeBucket] = []
        val_total = 0.0
        if val_s_per_cat > 0:
            val_take, val_total = _take_until(remaining, val_s_per_cat)
            remaining = remaining[len(val_take):]
        # Whole-episode carving can starve the later budget even when the raw
        # sum would fit, so check the achieved totals rather than availability.
        if test_total < test_s_per_cat or val_total < val_s_per_cat:
            deficits[category] = available_s / 3600.0
            continue
        splits["test"].extend(test_take)
        splits["validation"].extend(val_take)
        splits["train"].extend(remaining)
    if deficits:
        raise InsufficientCategoryData(deficits, (test_s_per_cat + val_s_per_cat) / 3600.0)

    out.splits["test"] = _refs(splits["test"], "test")
    if val_s_per_cat > 0:
        out.splits["validation"] = _refs(splits["validation"], "validation")
    out.splits["train"] = _refs(splits["train"], "train")
    out.validate()
    return out


def nest_subsets(
    manifest: CorpusManifest,
    segments: list[TranscribedSegment],
    budgets_h: list[float],
    seed: int,
    train_split: str = "train",
    name_prefix: str | None = None,
) -> list[CorpusManifest]:
    """Nested training subsets: each budget is sampled from within the next larger one.

    Budgets must be strictly decreasing, so the resulting manifests form an
    inclusion chain under the training split.
    """
    if any(b >= a for a, b in zip(budgets_h, budgets_h[1:])):
        raise ValueError("budgets must be strictly decreasing")
    prefix = name_prefix or manifest.corpus_name

    train_ids = manifest.episode_ids(train_split)
    pool = [s for s in segments if s.episode_id in train_ids]
    buckets = _group_episodes(pool)
    # One keyed order per category, shared by every nesting level: a smaller
    # budget takes a shorter prefix of the same sequence, so inclusion is exact.
    ordered = {cat: _ordered(bs, seed, "subset") for cat, bs in buckets.items()}

    manifests: list[CorpusManifest] = []
    parent_name = manifest.corpus_name
    current = ordered
    for budget_h in budgets_h:
        budget_s = budget_h * 3600.0
        deficits: dict[str, float] = {}
        chosen: dict[str, list[_EpisodeBucket]] = {}
        for category in sorted(current):
            available_s = sum(b.duration_s for b in current[category])
            if available_s < budget_s:
                deficits[category] = available_s / 3600.0
                continue
            taken, _ = _take_until(current[category], budget_s)
            chosen[category] = taken
        if deficits:
            raise InsufficientCategoryData(deficits, budget_h)

        sub = CorpusManifest(
            corpus_name=f"{prefix}-{budget_h:g}",
            sampling_seed=seed,
            parent_corpus=parent_name,
            segments_file=manifest.segments_file,
            budgets_s={train_split: budget_s},
        )
        sub.splits[train_split] = _refs(
            [b for cat in sorted(chosen) for b in chosen[cat]], train_split
        )
        manifests.append(sub)
        parent_name = sub.corpus_name
        current = chosen
    return manifests


@dataclass(frozen=True)
class ManifestStatsRow:
    split: str
    category: str
    hours: float
    episode_count: int
    segment_count: int


def manifest_stats(manifest: CorpusManifest) -> list[ManifestStatsRow]:
    """Exact per-split, per-category duration table recomputed from segment spans."""
    rows: list[ManifestStatsRow] = []
    for split in sorted(manifest.splits):
        per_cat: dict[str, list[SegmentRef]] = {}
        for ref in manifest.splits[split]:
            per_cat.setdefault(ref.category, []).append(ref)
        for category in sorted(per_cat):
            refs = per_cat[category]
            rows.append(
                ManifestStatsRow(
                    split=split,
                    category=category,
                    hours=sum(r.duration_s for r in refs) / 3600.0,
                    episode_count=len({r.episode_id for r in refs}),
                    segment_count=len(refs),
                )
            )
    return rows


def render_manifest_stats(rows: list[ManifestStatsRow]) -> str:
    header = ("Split", "Category", "Hours", "#episodes", "#segments")
    cells = [header] + [
        (r.split, r.category, f"{r.hours:.3f}", str(r.episode_count), str(r.segment_count))
        for r in rows
    ]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells
    ) + "\n"


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """One header record, then line-delimited segment references."""
    manifest.validate()
    header = {
        "type": "corpus-manifest",
        "name": manifest.corpus_name,
        "seed": manifest.sampling_seed,
        "parent": manifest.parent_corpus,
        "budgets_s": manifest.budgets_s,
        "shuffle": manifest.shuffle_algorithm,
        "segments_file": manifest.segments_file,
    }
    lines = [dumps_record(header)]
    for split in sorted(manifest.splits):
        for ref in manifest.splits[split]:
            lines.append(
                dumps_record(
                    {
                        "episode_id": ref.episode_id,
                        "start_s": ref.start_s,
                        "end_s": ref.end_s,
                        "transcript_ref": ref.transcript_ref,
                        "category": ref.category,
                        "split": ref.split,
                    }
                )
            )
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> CorpusManifest:
    records = list(read_records(path))
    if not records or records[0].get("type") != "corpus-manifest":
        raise ValueError(f"{path}: missing corpus-manifest header")
    header = records[0]
    manifest = CorpusManifest(
        corpus_name=header["name"],
        sampling_seed=header["seed"],
        parent_corpus=header.get("parent"),
        shuffle_algorithm=header.get("shuffle", SHUFFLE_ALGORITHM),
        segments_file=header.get("segments_file"),
        budgets_s=header.get("budgets_s", {}),
    )
    for rec in records[1:]:
        ref = SegmentRef(
            episode_id=rec["episode_id"],
            start_s=rec["start_s"],
            end_s=rec["end_s"],
            transcript_ref=rec["transcript_ref"],
            category=rec["category"],
            split=rec["split"],
        )
        manifest.splits.setdefault(ref.split, []).append(ref)
    return manifest


def manifest_fingerprint(manifest: CorpusManifest) -> str:
    """Digest over the canonical serialized form; equal manifests hash equal."""
    payload = {
        "name": manifest.corpus_name,
        "seed": manifest.sampling_seed,
        "parent": manifest.parent_corpus,
        "splits": {
            split: [
                (r.episode_id, r.start_s, r.end_s, r.category)
                for r in manifest.splits[split]
            ]
            for split in sorted(manifest.splits)
        },
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
