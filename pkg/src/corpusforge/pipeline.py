"""Pipeline configuration and stage orchestration with resumable checkpoints.

Each stage writes its outputs atomically, then drops a completion marker
holding a digest of its inputs; a rerun skips any stage whose inputs are
unchanged. Killing the pipeline between stages and rerunning converges on the
same final outputs as an uninterrupted run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, feeds, filtering, ingest, segment
from .backend.adapter import SubprocessBackend, call
from .backend.protocol import BackendRequest, Op
from .records import read_records, write_records, write_text_atomic

logger = logging.getLogger(__name__)

STAGES = ("crawl", "fetch", "segment", "transcribe", "filter", "sample", "evaluate")


class ConfigInvalid(Exception):
    pass


class StageFailed(Exception):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


# section -> key -> (type, default); None default means required-if-stage-runs
# or genuinely optional, checked by the stage itself.
_SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "workspace": {"root": (str, ".")},
    "crawl": {
        "feeds": (str, None),
        "max_inflight": (int, 8),
        "per_host_delay_ms": (int, 0),
        "max_retries": (int, 2),
        "timeout_s": (float, 20.0),
    },
    "fetch": {
        "cap_hours_per_category": (float, None),
        "decoder": (str, None),
        "max_retries": (int, 3),
        "timeout_s": (float, 30.0),
    },
    "backend": {
        "command": (str, None),
        "request_timeout_s": (float, 120.0),
        "handshake_timeout_s": (float, 30.0),
    },
    "segment": {
        "t0_s": (float, 30.0),
        "onset_threshold": (float, 0.5),
        "offset_threshold": (float, 0.363),
        "min_region_s": (float, 0.25),
        "max_merge_gap_s": (float, 0.5),
        "min_cut_piece_s": (float, 1.0),
    },
    "transcribe": {"language_tag": (str, "el")},
    "filter": {
        "patterns": (str, "Υπότιτλοι AUTHORWAVE"),
        "latin_run_min_chars": (int, 4),
        "boundary_window_words": (int, 5),
    },
    "sample": {
        "hours_per_category": (float, 50.0),
        "test_s_per_cat": (float, 3600.0),
        "val_s_per_cat": (float, 900.0),
        "subsets_h": (str, ""),
        "seed": (int, 0),
        "name": (str, "GPC-50"),
        "categories": (str, ""),
    },
    "evaluate": {
        "hyps": (str, "self"),
        "split": (str, "test"),
        "profile": (str, "greek-basic-v1"),
        "model_label": (str, "reference"),
        "finetune_label": (str, "self"),
        "dataset_label": (str, ""),
    },
}

_ENV_PREFIX = "CORPUSFORGE"


@dataclass
class PipelineConfig:
    sections: dict[str, dict[str, object]]
    config_dir: Path

    def get(self, section: str, key: str):
        return self.sections[section][key]

    @property
    def root(self) -> Path:
        root = Path(str(self.get("workspace", "root")))
        return root if root.is_absolute() else (self.config_dir / root).resolve()

    def resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.root / p


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file; unknown keys are rejected.

    Scalar fields may be overridden by CORPUSFORGE_<SECTION>_<KEY> environment
    variables.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc

    sections: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigInvalid(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigInvalid(f"{path}: unknown key {key!r} in [{section}]")

    for section, keys in _SCHEMA.items():
        sections[section] = {}
        for key, (typ, default) in keys.items():
            raw = None
            env_name = f"{_ENV_PREFIX}_{section.upper()}_{key.upper()}"
            if env_name in os.environ:
                raw = os.environ[env_name]
            elif parser.has_option(section, key):
                raw = parser.get(section, key)
            if raw is None:
                sections[section][key] = default
                continue
            try:
                if typ is int:
                    sections[section][key] = int(raw)
                elif typ is float:
                    sections[section][key] = float(raw)
                else:
                    sections[section][key] = raw
            except ValueError as exc:
                raise ConfigInvalid(f"{path}: [{section}] {key} = {raw!r}: {exc}") from exc

    return PipelineConfig(sections, path.parent.resolve())


@dataclass
class Workspace:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def catalog(self) -> Path:
        return self.root / "catalog.jsonl"

    @property
    def asset_index(self) -> Path:
        return self.root / "assets" / "assets.jsonl"

    @property
    def traces_dir(self) -> Path:
        return self.root / "traces"

    @property
    def spans_file(self) -> Path:
        return self.root / "spans.jsonl"

    @property
    def segments_file(self) -> Path:
        return self.root / "segments.jsonl"

    @property
    def filtered_file(self) -> Path:
        return self.root / "filtered.jsonl"

    @property
    def filter_report(self) -> Path:
        return self.root / "filter_report.json"

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def main_manifest(self) -> Path:
        return self.corpus_dir / "main.manifest.jsonl"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"

    @property
    def markers_dir(self) -> Path:
        return self.root / ".corpusforge"

    def marker(self, stage: str) -> Path:
        return self.markers_dir / f"{stage}.done.json"


@dataclass
class StageResult:
    stage: str
    skipped: bool
    duration_s: float
    records: int
    outputs: list[str] = field(default_factory=list)


@dataclass
class RunSummary:
    results: list[StageResult] = field(default_factory=list)

    def render(self) -> str:
        lines = ["stage       status    records  duration"]
        for r in self.results:
            status = "skipped" if r.skipped else "done"
            lines.append(f"{r.stage:<11} {status:<9} {r.records:>7}  {r.duration_s:7.2f}s")
        return "\n".join(lines) + "\n"


def _file_digest(path: Path) -> str:
    if not path.exists():
        return "absent"
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _stage_digest(config: PipelineConfig, sections: list[str], inputs: list[Path]) -> str:
    material = {
        "sections": {s: {k: config.get(s, k) for k in sorted(config.sections[s])} for s in sections},
        "inputs": {str(p): _file_digest(p) for p in sorted(inputs)},
    }
    return hashlib.sha256(json.dumps(material, sort_keys=True).encode("utf-8")).hexdigest()


def _segmenter_config(config: PipelineConfig) -> segment.SegmenterConfig:
    return segment.SegmenterConfig(
        t0_s=config.get("segment", "t0_s"),
        onset_threshold=config.get("segment", "onset_threshold"),
        offset_threshold=config.get("segment", "offset_threshold"),
        min_region_s=config.get("segment", "min_region_s"),
        max_merge_gap_s=config.get("segment", "max_merge_gap_s"),
        min_cut_piece_s=config.get("segment", "min_cut_piece_s"),
    )


def _open_backend(config: PipelineConfig) -> SubprocessBackend:
    command = config.get("backend", "command")
    if not command:
        raise ConfigInvalid("[backend] command is required for this stage")
    return SubprocessBackend(
        command,
        handshake_timeout_s=config.get("backend", "handshake_timeout_s"),
        request_timeout_s=config.get("backend", "request_timeout_s"),
    )


# --- stage implementations -------------------------------------------------


def _stage_crawl(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    feeds_path = config.get("crawl", "feeds")
    if not feeds_path:
        raise ConfigInvalid("[crawl] feeds is required")
    sources = feeds.load_feed_list(config.resolve(feeds_path))
    policy = feeds.CrawlPolicy(
        per_host_delay_s=config.get("crawl", "per_host_delay_ms") / 1000.0,
        max_retries=config.get("crawl", "max_retries"),
        max_inflight=config.get("crawl", "max_inflight"),
        timeout_s=config.get("crawl", "timeout_s"),
    )
    result = feeds.crawl(sources, policy)
    for url, reason in result.failures:
        logger.warning("crawl failure: %s: %s", url, reason)
    count = feeds.save_catalog(result.catalog, ws.catalog)
    return count, [ws.catalog]


def _stage_fetch(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    catalog = feeds.load_catalog(ws.catalog)
    decoder_cmd = config.get("fetch", "decoder")
    decoder = ingest.Decoder.from_command(decoder_cmd) if decoder_cmd else None
    policy = ingest.RetryPolicy(
        max_retries=config.get("fetch", "max_retries"),
        timeout_s=config.get("fetch", "timeout_s"),
    )
    result = ingest.ingest_catalog(
        catalog,
        ws.root,
        policy=policy,
        cap_hours_per_category=config.get("fetch", "cap_hours_per_category"),
        decoder=decoder,
    )
    for episode_id, reason in result.failures:
        logger.warning("fetch failure: %s: %s", episode_id, reason)
    return len(result.assets), [ws.asset_index]


def _stage_segment(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    assets = ingest.load_asset_index(ws.asset_index)
    cfg = _segmenter_config(config)
    ws.traces_dir.mkdir(parents=True, exist_ok=True)
    span_records = []
    backend = _open_backend(config)
    try:
        for episode_id in sorted(assets):
            asset = assets[episode_id]
            response = call(
                BackendRequest(op=Op.VAD, audio_path=asset.path, request_id=f"vad-{episode_id}"),
                backend,
            )
            trace = response.payload
            segment.write_trace(ws.traces_dir / f"{episode_id}.vad", trace)
            for span in segment.segment_audio(trace, cfg):
                span_records.append(
                    {
                        "episode_id": episode_id,
                        "start_s": span.start_s,
                        "end_s": span.end_s,
                        "provenance": span.provenance.value,
                    }
                )
    finally:
        backend.close()
    count = write_records(ws.spans_file, span_records)
    return count, [ws.spans_file]


def _stage_transcribe(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    assets = ingest.load_asset_index(ws.asset_index)
    categories = {}
    if ws.catalog.exists():
        categories = {ep.episode_id: ep.category for ep in feeds.load_catalog(ws.catalog).episodes}
    language = config.get("transcribe", "language_tag")
    segments: list[filtering.TranscribedSegment] = []
    backend = _open_backend(config)
    try:
        for i, rec in enumerate(read_records(ws.spans_file)):
            episode_id = rec["episode_id"]
            asset = assets.get(episode_id)
            if asset is None:
                logger.warning("span for unknown asset %s, skipping", episode_id)
                continue
            span = (rec["start_s"], rec["end_s"])
            tr = call(
                BackendRequest(
                    op=Op.TRANSCRIBE,
                    audio_path=asset.path,
                    request_id=f"asr-{i}",
                    language_tag=language,
                    span=span,
                ),
                backend,
            ).payload
            words = None
            if tr.transcript.strip():
                words = call(
                    BackendRequest(
                        op=Op.ALIGN,
                        audio_path=asset.path,
                        request_id=f"align-{i}",
                        language_tag=language,
                        span=span,
                        transcript=tr.transcript,
                    ),
                    backend,
                ).payload.words
            segments.append(
                filtering.TranscribedSegment(
                    episode_id=episode_id,
                    span=segment.SegmentSpan(
                        rec["start_s"], rec["end_s"], segment.Provenance(rec["provenance"])
                    ),
                    transcript=tr.transcript,
                    category=categories.get(episode_id, "unknown"),
                    word_timings=words,
                )
            )
    finally:
        backend.close()
    count = filtering.save_segments(segments, ws.segments_file)
    return count, [ws.segments_file]


def _stage_filter(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    segments = filtering.load_segments(ws.segments_file)
    patterns = tuple(p.strip() for p in str(config.get("filter", "patterns")).splitlines() if p.strip())
    fconfig = filtering.FilterConfig(
        hallucination_patterns=patterns or filtering.DEFAULT_HALLUCINATION_PATTERNS,
        codeswitch=filtering.CodeSwitchPolicy(
            latin_run_min_chars=config.get("filter", "latin_run_min_chars"),
            boundary_window_words=config.get("filter", "boundary_window_words"),
        ),
    )
    kept, report = filtering.apply_filters(segments, fconfig)
    filtering.save_segments(kept, ws.filtered_file)
    write_text_atomic(ws.filter_report, json.dumps(report.to_record(), indent=2) + "\n")
    return len(kept), [ws.filtered_file, ws.filter_report]


def _stage_sample(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    segments = filtering.load_segments(ws.filtered_file)
    cat_value = str(config.get("sample", "categories")).strip()
    categories = (
        [c.strip() for c in cat_value.split(",") if c.strip()]
        if cat_value
        else sorted({s.category for s in segments})
    )
    seed = config.get("sample", "seed")
    name = config.get("sample", "name")

    stratified = corpus_mod.build_stratified(
        segments, categories, config.get("sample", "hours_per_category"), seed, name=name
    )
    carved = corpus_mod.carve_splits(
        stratified,
        segments,
        config.get("sample", "test_s_per_cat"),
        config.get("sample", "val_s_per_cat"),
        seed,
    )
    carved.segments_file = str(ws.filtered_file)
    ws.corpus_dir.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_manifest(carved, ws.main_manifest)
    outputs = [ws.main_manifest]

    subsets_value = str(config.get("sample", "subsets_h")).strip()
    if subsets_value:
        budgets = [float(b) for b in subsets_value.split(",") if b.strip()]
        for sub in corpus_mod.nest_subsets(carved, segments, budgets, seed, name_prefix=name.split("-")[0]):
            path = ws.corpus_dir / f"{sub.corpus_name}.manifest.jsonl"
            corpus_mod.save_manifest(sub, path)
            outputs.append(path)
    total = sum(len(refs) for refs in carved.splits.values())
    return total, outputs


def _stage_evaluate(config: PipelineConfig, ws: Workspace) -> tuple[int, list[Path]]:
    manifest = corpus_mod.load_manifest(ws.main_manifest)
    split = config.get("evaluate", "split")
    refs = manifest.splits.get(split)
    if refs is None:
        raise ValueError(f"manifest {manifest.corpus_name} has no split {split!r}")
    transcripts = {
        corpus_mod.segment_ref_key(s.episode_id, s.span.start_s, s.span.end_s): s
        for s in filtering.load_segments(ws.filtered_file)
    }
    profile = evaluation.get_profile(config.get("evaluate", "profile"))
    hyps_value = str(config.get("evaluate", "hyps"))
    dataset = config.get("evaluate", "dataset_label") or manifest.corpus_name

    if hyps_value == "self":
        # Pipeline smoke mode: score the references against themselves.
        hyp_map = {
            ref.transcript_ref: transcripts[ref.transcript_ref].transcript
            for ref in refs
            if ref.transcript_ref in transcripts
        }
        model = config.get("evaluate", "model_label")
        finetune = config.get("evaluate", "finetune_label")
    else:
        hyp_records = list(read_records(config.resolve(hyps_value)))
        hyp_map = {rec["segment_ref"]: rec["hypothesis"] for rec in hyp_records}
        labels = {(r.get("model", "unknown"), r.get("finetune_corpus", "-")) for r in hyp_records}
        if len(labels) > 1:
            logger.warning("hypothesis file mixes %d model labels; pooling them all", len(labels))
        model = hyp_records[0].get("model", "unknown") if hyp_records else "unknown"
        finetune = hyp_records[0].get("finetune_corpus", "-") if hyp_records else "-"

    per_segment = []
    for ref in refs:
        seg = transcripts.get(ref.transcript_ref)
        if seg is None:
            logger.warning("manifest references unknown segment %s", ref.transcript_ref)
            continue
        reference = evaluation.normalize(evaluation.clean_reference(seg.transcript, profile), profile)
        hypothesis = evaluation.normalize(hyp_map.get(ref.transcript_ref, ""), profile)
        per_segment.append((ref.category, evaluation.wer(reference, hypothesis)))

    report = evaluation.aggregate(
        per_segment,
        dataset=dataset,
        model=model,
        finetune_corpus=finetune,
        profile_id=profile.profile_id,
    )
    paths = evaluation.write_report(report, ws.eval_dir, series=f"{model}/{finetune}")
    return len(per_segment), [Path(p) for p in paths.values()]


_STAGE_IMPL = {
    "crawl": (_stage_crawl, ["crawl"], lambda c, w: [c.resolve(c.get("crawl", "feeds") or "feeds.tsv")]),
    "fetch": (_stage_fetch, ["fetch"], lambda c, w: [w.catalog]),
    "segment": (_stage_segment, ["segment", "backend"], lambda c, w: [w.asset_index]),
    "transcribe": (_stage_transcribe, ["transcribe", "backend"], lambda c, w: [w.spans_file, w.asset_index]),
    "filter": (_stage_filter, ["filter"], lambda c, w: [w.segments_file]),
    "sample": (_stage_sample, ["sample"], lambda c, w: [w.filtered_file]),
    "evaluate": (
        _stage_evaluate,
        ["evaluate"],
        lambda c, w: [w.main_manifest, w.filtered_file]
        + ([c.resolve(str(c.get("evaluate", "hyps")))] if str(c.get("evaluate", "hyps")) != "self" else []),
    ),
}


def run_pipeline(config: PipelineConfig, stages: list[str] | None = None) -> RunSummary:
    """Run the requested stages in canonical order, skipping unchanged ones."""
    requested = list(stages) if stages else list(STAGES)
    for name in requested:
        if name not in STAGES:
            raise ConfigInvalid(f"unknown stage {name!r} (valid: {', '.join(STAGES)})")
    ordered = [s for s in STAGES if s in requested]

    ws = Workspace(config.root)
    ws.root.mkdir(parents=True, exist_ok=True)
    ws.markers_dir.mkdir(parents=True, exist_ok=True)

    summary = RunSummary()
    for name in ordered:
        impl, sections, inputs_fn = _STAGE_IMPL[name]
        started = time.monotonic()
        digest = _stage_digest(config, sections, inputs_fn(config, ws))
        marker_path = ws.marker(name)
        if marker_path.exists():
            try:
                marker = json.loads(marker_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                marker = {}
            if marker.get("input_digest") == digest and all(
                Path(p).exists() for p in marker.get("outputs", [])
            ):
                summary.results.append(
                    StageResult(name, True, 0.0, marker.get("records", 0), marker.get("outputs", []))
                )
                logger.info("stage %s: inputs unchanged, skipping", name)
                continue
        logger.info("stage %s: running", name)
        try:
            records, outputs = impl(config, ws)
        except ConfigInvalid:
            raise
        except Exception as exc:
            raise StageFailed(name, exc) from exc
        duration = time.monotonic() - started
        marker = {
            "stage": name,
            "input_digest": digest,
            "records": records,
            "outputs": [str(p) for p in outputs],
            "duration_s": duration,
        }
        write_text_atomic(marker_path, json.dumps(marker, indent=2) + "\n")
        summary.results.append(StageResult(name, False, duration, records, [str(p) for p in outputs]))
    return summary
