"""corpusforge command line: stage commands plus `run` for full pipeline runs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, feeds, filtering, ingest, segment
from .backend.adapter import SubprocessBackend, call
from .backend.protocol import BackendRequest, Op
from .pipeline import ConfigInvalid, StageFailed, load_config, run_pipeline
from .records import read_records, write_records, write_text_atomic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _cmd_crawl(args) -> int:
    sources = feeds.load_feed_list(args.feeds)
    policy = feeds.CrawlPolicy(
        per_host_delay_s=args.per_host_delay_ms / 1000.0,
        max_inflight=args.max_inflight,
    )
    result = feeds.crawl(sources, policy)
    for url, reason in result.failures:
        logger.warning("failed: %s: %s", url, reason)
    count = feeds.save_catalog(result.catalog, args.out)
    print(feeds.render_catalog_stats(feeds.catalog_stats(result.catalog)), end="")
    logger.info("wrote %d episodes to %s (%d feed failures)", count, args.out, len(result.failures))
    return EXIT_OK


def _cmd_fetch(args) -> int:
    catalog = feeds.load_catalog(args.catalog)
    decoder = ingest.Decoder.from_command(args.decoder) if args.decoder else None
    result = ingest.ingest_catalog(
        catalog,
        args.out,
        cap_hours_per_category=args.cap_hours_per_category,
        decoder=decoder,
    )
    for episode_id, reason in result.failures:
        logger.warning("failed: %s: %s", episode_id, reason)
    logger.info("normalized %d assets into %s", len(result.assets), args.out)
    return EXIT_OK


def _cmd_segment(args) -> int:
    cfg = segment.SegmenterConfig(
        t0_s=args.t0,
        onset_threshold=args.onset,
        offset_threshold=args.offset,
        min_region_s=args.min_region,
        max_merge_gap_s=args.max_merge_gap,
        min_cut_piece_s=args.min_cut_piece,
    )
    records = []
    traces = sorted(Path(args.traces).glob("*.vad"))
    for trace_path in traces:
        episode_id = trace_path.stem
        trace = segment.read_trace(trace_path)
        for span in segment.segment_audio(trace, cfg):
            records.append(
                {
                    "episode_id": episode_id,
                    "start_s": span.start_s,
                    "end_s": span.end_s,
                    "provenance": span.provenance.value,
                }
            )
    count = write_records(args.out, records)
    logger.info("segmented %d traces into %d spans", len(traces), count)
    return EXIT_OK


def _cmd_transcribe(args) -> int:
    assets_dir = Path(args.assets)
    index = assets_dir / "assets.jsonl"
    assets = ingest.load_asset_index(index) if index.exists() else {}
    categories = {}
    if args.catalog:
        categories = {ep.episode_id: ep.category for ep in feeds.load_catalog(args.catalog).episodes}

    segments: list[filtering.TranscribedSegment] = []
    backend = SubprocessBackend(args.backend_cmd)
    try:
        for i, rec in enumerate(read_records(args.spans)):
            episode_id = rec["episode_id"]
            if episode_id in assets:
                audio_path = assets[episode_id].path
            else:
                audio_path = str(assets_dir / f"{episode_id}.wav")
            span = (rec["start_s"], rec["end_s"])
            tr = call(
                BackendRequest(
                    op=Op.TRANSCRIBE,
                    audio_path=audio_path,
                    request_id=f"asr-{i}",
                    language_tag=args.language,
                    span=span,
                ),
                backend,
            ).payload
            words = None
            if "ALIGN" in backend.capabilities and tr.transcript.strip():
                words = call(
                    BackendRequest(
                        op=Op.ALIGN,
                        audio_path=audio_path,
                        request_id=f"align-{i}",
                        language_tag=args.language,
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
    count = filtering.save_segments(segments, args.out)
    logger.info("transcribed %d segments to %s", count, args.out)
    return EXIT_OK


def _cmd_filter(args) -> int:
    segments = filtering.load_segments(args.infile)
    config = filtering.FilterConfig(
        hallucination_patterns=tuple(args.pattern) if args.pattern else filtering.DEFAULT_HALLUCINATION_PATTERNS,
        codeswitch=filtering.CodeSwitchPolicy(
            latin_run_min_chars=args.latin_run_min_chars,
            boundary_window_words=args.boundary_window_words,
        ),
    )
    kept, report = filtering.apply_filters(segments, config)
    filtering.save_segments(kept, args.out)
    write_text_atomic(args.report, json.dumps(report.to_record(), indent=2) + "\n")
    logger.info(
        "kept %d/%d segments (%d hallucination, %d code-switch, %d empty dropped)",
        report.kept_count,
        report.input_count,
        report.dropped_hallucination,
        report.dropped_codeswitch,
        report.dropped_empty,
    )
    return EXIT_OK


def _cmd_sample(args) -> int:
    segments = filtering.load_segments(args.infile)
    categories = (
        [c.strip() for c in args.categories.split(",") if c.strip()]
        if args.categories
        else sorted({s.category for s in segments})
    )
    stratified = corpus_mod.build_stratified(
        segments, categories, args.hours_per_cat, args.seed, name=args.name
    )
    carved = corpus_mod.carve_splits(stratified, segments, args.test_s, args.val_s, args.seed)
    carved.segments_file = str(Path(args.infile).resolve())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_manifest(carved, out_dir / "main.manifest.jsonl")
    manifests = [carved]
    if args.subsets:
        budgets = [float(b) for b in args.subsets.split(",") if b.strip()]
        for sub in corpus_mod.nest_subsets(
            carved, segments, budgets, args.seed, name_prefix=args.name.split("-")[0]
        ):
            corpus_mod.save_manifest(sub, out_dir / f"{sub.corpus_name}.manifest.jsonl")
            manifests.append(sub)
    for manifest in manifests:
        print(f"# {manifest.corpus_name}")
        print(corpus_mod.render_manifest_stats(corpus_mod.manifest_stats(manifest)), end="")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    manifest = corpus_mod.load_manifest(args.manifest)
    refs = manifest.splits.get(args.split)
    if refs is None:
        logger.error("manifest has no split %r", args.split)
        return EXIT_STAGE
    segments_path = args.segments or manifest.segments_file
    if not segments_path:
        logger.error("no segments file: pass --segments or record one in the manifest")
        return EXIT_STAGE
    transcripts = {
        corpus_mod.segment_ref_key(s.episode_id, s.span.start_s, s.span.end_s): s
        for s in filtering.load_segments(segments_path)
    }
    profile = evaluation.get_profile(args.profile)
    hyp_records = list(read_records(args.hyps))
    hyp_map = {rec["segment_ref"]: rec["hypothesis"] for rec in hyp_records}
    labels = {(rec.get("model", "unknown"), rec.get("finetune_corpus", "-")) for rec in hyp_records}
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
        dataset=manifest.corpus_name,
        model=model,
        finetune_corpus=finetune,
        profile_id=profile.profile_id,
    )
    paths = evaluation.write_report(report, args.out, series=f"{model}/{finetune}")
    print(evaluation.render_table(report.rows), end="")
    logger.info("report written to %s", paths["table"])
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()] if args.stages else None
    summary = run_pipeline(config, stages)
    print(summary.render(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corpusforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crawl", help="crawl RSS feeds into an episode catalog")
    p.add_argument("--feeds", required=True, help="feed list file: url<TAB>category per line")
    p.add_argument("--out", required=True, help="catalog output path")
    p.add_argument("--max-inflight", type=int, default=8)
    p.add_argument("--per-host-delay-ms", type=int, default=0)
    p.set_defaults(func=_cmd_crawl)

    p = sub.add_parser("fetch", help="download and normalize episode audio")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True, help="workspace directory for media/ and assets/")
    p.add_argument("--cap-hours-per-category", type=float, default=None)
    p.add_argument("--decoder", default=None, help="external decoder command with {input}/{output}")
    p.set_defaults(func=_cmd_fetch)

    p = sub.add_parser("segment", help="cut-and-merge VAD traces into speech spans")
    p.add_argument("--traces", required=True, help="directory of .vad trace files")
    p.add_argument("--out", required=True)
    p.add_argument("--t0", type=float, default=30.0)
    p.add_argument("--onset", type=float, default=0.5)
    p.add_argument("--offset", type=float, default=0.363)
    p.add_argument("--min-region", type=float, default=0.25)
    p.add_argument("--max-merge-gap", type=float, default=0.5)
    p.add_argument("--min-cut-piece", type=float, default=1.0)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("transcribe", help="transcribe and align spans through a backend")
    p.add_argument("--assets", required=True, help="assets directory (with assets.jsonl)")
    p.add_argument("--spans", required=True)
    p.add_argument("--backend-cmd", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--catalog", default=None, help="catalog for category labels")
    p.add_argument("--language", default="el")
    p.set_defaults(func=_cmd_transcribe)

    p = sub.add_parser("filter", help="drop hallucinated and code-switched segments")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--pattern", action="append", help="hallucination pattern (repeatable)")
    p.add_argument("--latin-run-min-chars", type=int, default=4)
    p.add_argument("--boundary-window-words", type=int, default=5)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("sample", help="stratified corpus, splits, and nested subsets")
    p.add_argument("--in", dest="infile", required=True, help="filtered segments file")
    p.add_argument("--out", required=True, help="manifest output directory")
    p.add_argument("--hours-per-cat", type=float, default=50.0)
    p.add_argument("--test-s", type=float, default=3600.0)
    p.add_argument("--val-s", type=float, default=900.0)
    p.add_argument("--subsets", default="", help="comma list of nested subset hours, e.g. 20,10,5,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="GPC-50")
    p.add_argument("--categories", default="", help="comma list; default: all present")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("evaluate", help="score hypothesis transcripts against a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hyps", required=True, help="hypothesis records (segment_ref, hypothesis, ...)")
    p.add_argument("--profile", default="greek-basic-v1")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--segments", default=None, help="segments file overriding the manifest header")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run", help="run pipeline stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", default="", help="comma list; default: all stages")
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except StageFailed as exc:
        logger.error("%s", exc)
        return EXIT_STAGE
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
