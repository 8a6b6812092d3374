"""
ad_pipeline.py

Command-line entry point of the sponsored-segment pipeline. One command per stage, plus `run` for all of
them in order and `report` to re-render the reports from persisted artifacts:

    ingest   parse the transcripts listed in a manifest into canonical caption JSON
    detect   find sponsored segments in every transcript with the LLM
    keywords extract ad and content keywords per video
    group    reduce keywords to categories and assign videos to them
    analyze  prevalence, cross-tab, alignment (and evaluation when gold labels are given)
    eval     precision/recall/F1 of the detections against gold labels
    run      all of the above
    report   re-render every report table and the run summary

Everything is persisted under the work directory; per-video stage status lives in `state/`, so `--resume`
skips videos already processed. Exit codes: 0 success, 1 some videos failed, 2 configuration or usage error.

Typical usage:
    python ad_pipeline.py run corpus/manifest.tsv --backend mock --gold corpus/gold.jsonl --verbose
    python ad_pipeline.py detect --resume --parallelism 8 --set requests_per_second=2

Dependencies:
- pandas
- utils.run_config.RunConfig
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed

import pandas as pd

from ad_detection.detector import AdDetector, DetectionConfig, load_detection, load_detections, save_detection, write_detections_jsonl
from keywords.category_grouper import group_corpus, load_assignment, save_grouping
from keywords.keyword_engine import ExtractionConfig, extract_section_keywords, load_all_keywords, save_keywords
from LLM_interaction.embeddings import EmbeddingProvider, build_embedder
from LLM_interaction.gpt_client import LLMGateway, LlmBackend, build_gateway
from text_extractor.captions import Transcript, parse_caption_json, serialize_caption_json
from text_extractor.manifest import CorpusManifest, load_manifest, load_transcript, save_manifest
from utils.analytics import alignment_table, cross_tab, prevalence_table
from utils.errors import ConfigError, ManifestError, PipelineError, StagePreconditionError, UnknownVideoId
from utils.evaluate_segments import evaluate_corpus, load_gold
from utils.reports import ReportSet, emit_reports
from utils.run_config import DEFAULT_CONFIG_PATH, RunConfig, parse_override
from utils.stage_state import CORPUS, STAGES, StageState, WorkLayout
from utils.utils import atomic_write_bytes, atomic_write_text, configure_logging, resolve_data_path

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
PER_VIDEO_ERRORS = (PipelineError, ValueError, KeyError, OSError)


class Pipeline:
    """Runs pipeline stages over the work directory of one configuration."""

    def __init__(self, config: RunConfig, backend: LlmBackend | None = None, embedder: EmbeddingProvider | None = None,
                 video_ids: list[str] | None = None, resume: bool = False):
        self.config = config
        self.layout = WorkLayout(config.work_dir)
        self.layout.create()
        self.state = StageState(self.layout.state)
        self.video_ids = video_ids
        self.resume = resume
        self._backend = backend
        self._embedder = embedder
        self._gateway: LLMGateway | None = None

    # Backends are built on first use so that ingest never needs an API key.
    @property
    def gateway(self) -> LLMGateway:
        if self._gateway is None:
            self._gateway = build_gateway(self.config, self._backend)
        return self._gateway

    @property
    def embedder(self) -> EmbeddingProvider:
        if self._embedder is None:
            self._embedder = build_embedder(self.config)
        return self._embedder

    def _in_scope(self, video_ids: list[str]) -> list[str]:
        if self.video_ids is None:
            return video_ids
        return [v for v in video_ids if v in self.video_ids]

    def manifest(self, stage: str) -> CorpusManifest:
        """The manifest saved by ingest; `stage` names the caller in the precondition error."""
        if not os.path.exists(self.layout.manifest):
            raise StagePreconditionError(stage, "ingest")
        return load_manifest(self.layout.manifest, check_files=False)

    def transcript(self, video_id: str, manifest: CorpusManifest) -> Transcript:
        record = manifest.get(video_id)
        if record is None:
            raise UnknownVideoId(f"Video {video_id} is not in the saved manifest; re-run ingest.")
        with open(self.layout.transcript_path(video_id), "rb") as f:
            entries = parse_caption_json(f.read())
        return Transcript(video_id, record.channel, record.kind, tuple(entries))

    def _process(self, stage: str, video_id: str, work) -> bool:
        try:
            work(video_id)
        except PER_VIDEO_ERRORS as e:
            self.state.mark_failed(stage, video_id, f"{type(e).__name__}: {e}")
            logger.error(f"{stage} failed for {video_id}: {type(e).__name__}: {e}")
            return False
        self.state.mark_done(stage, video_id)
        return True

    def _run_per_video(self, stage: str, video_ids: list[str], work, skip_done: bool) -> int:
        """Runs `work(video_id)` on a bounded worker pool. Returns the number of videos that failed."""
        todo = [v for v in video_ids if not (skip_done and self.state.is_done(stage, v))]
        if len(todo) < len(video_ids):
            logger.info(f"{stage}: skipping {len(video_ids) - len(todo)} videos already done.")
        failures = 0
        pool = ThreadPoolExecutor(max_workers=self.config.parallelism)
        try:
            futures = {pool.submit(self._process, stage, v, work): v for v in todo}
            for n, future in enumerate(as_completed(futures), start=1):
                if not future.result():
                    failures += 1
                logger.info(f"{stage}: video {n}/{len(todo)} processed ({futures[future]}).")
        except BaseException:
            pool.shutdown(wait=True, cancel_futures=True)
            raise
        pool.shutdown(wait=True)
        logger.info(f"{stage}: {len(todo) - failures} done, {failures} failed.")
        return failures

    # --------------- Stages ---------------- #
    def ingest(self, manifest_path: str) -> int:
        manifest = load_manifest(manifest_path)
        save_manifest(manifest, self.layout.manifest)
        records = {r.video_id: r for r in manifest.records}

        def work(video_id: str) -> None:
            transcript = load_transcript(records[video_id])
            atomic_write_bytes(self.layout.transcript_path(video_id), serialize_caption_json(transcript))

        failures = self._run_per_video("ingest", self._in_scope(list(records)), work, skip_done=True)
        print(manifest.summary().to_string())
        return failures

    def detect(self) -> int:
        self.state.require("detect")
        manifest = self.manifest("detect")
        detector = AdDetector(self.gateway, DetectionConfig.from_run_config(self.config))

        def work(video_id: str) -> None:
            save_detection(detector.detect(self.transcript(video_id, manifest)), self.layout.detections)

        failures = self._run_per_video("detect", self._in_scope(self.state.done_videos("ingest")), work, self.resume)
        write_detections_jsonl(self.layout.detections)
        return failures

    def keywords(self) -> int:
        self.state.require("keywords")
        manifest = self.manifest("keywords")
        cfg = ExtractionConfig.from_run_config(self.config)
        embedder = self.embedder

        def work(video_id: str) -> None:
            detection = load_detection(os.path.join(self.layout.detections, f"{video_id}.json"))
            keywords = extract_section_keywords(self.transcript(video_id, manifest), detection, cfg, embedder)
            save_keywords(video_id, keywords, self.layout.keywords)

        return self._run_per_video("keywords", self._in_scope(self.state.done_videos("detect")), work, self.resume)

    def _corpus_stage(self, stage: str, work) -> int:
        if self.resume and self.state.is_done(stage, CORPUS):
            logger.info(f"{stage}: already done; skipping.")
            return 0
        return 0 if self._process(stage, CORPUS, lambda _: work()) else 1

    def group(self) -> int:
        self.state.require("group")

        def work() -> None:
            video_ids = self.state.done_videos("keywords")
            detections = load_detections(self.layout.detections, video_ids)
            frame = load_all_keywords(self.layout.keywords, video_ids)
            has_ad = {v: detections[v].has_ad for v in video_ids if v in detections}
            outcome = group_corpus(frame, has_ad, self.gateway, self.embedder, self.config)
            save_grouping(outcome, self.layout.groups)

        return self._corpus_stage("group", work)

    def _evaluation(self, detections: dict, manifest: CorpusManifest, gold_path: str) -> pd.DataFrame:
        gold = load_gold(gold_path)
        predicted, durations = {}, {}
        for video_id, result in detections.items():
            predicted[video_id] = [(s.start, s.end) for s in result.accepted_spans()]
            durations[video_id] = self.transcript(video_id, manifest).end
        return evaluate_corpus(predicted, gold, durations, self.config.iou_threshold)

    def _reports(self, stage: str) -> ReportSet:
        manifest = self.manifest(stage)
        detections = load_detections(self.layout.detections, self.state.done_videos("detect"))
        assignment = load_assignment(self.layout.groups)
        keywords = load_all_keywords(self.layout.keywords, self.state.done_videos("keywords"))
        reports = ReportSet(prevalence_table(detections, manifest), cross_tab(assignment, detections),
                            alignment_table(keywords, assignment, self.embedder))
        if self.config.gold_path:
            reports.evaluation = self._evaluation(detections, manifest, self.config.gold_path)
        return reports

    def summary(self) -> dict:
        detections = load_detections(self.layout.detections, self.state.done_videos("detect"))
        return {
            "config": self.config.as_dict(),
            "config_digest": self.config.digest(),
            "model_id": self.config.model_id,
            "stage_counts": {stage: self.state.counts(stage) for stage in STAGES},
            "videos_with_ads": sum(d.has_ad for d in detections.values()),
            "videos_detected": len(detections),
            "layout": self.layout.describe(),
        }

    def analyze(self) -> int:
        self.state.require("analyze")
        return self._corpus_stage(
            "analyze", lambda: emit_reports(self._reports("analyze"), self.layout.reports, summary=self.summary()))

    def evaluate(self) -> int:
        self.state.require("eval")
        if not self.config.gold_path:
            raise ConfigError("eval needs gold labels: pass --gold or set gold_path.")
        if not os.path.exists(self.config.gold_path):
            raise ConfigError(f"Gold labels file {self.config.gold_path} not found.")

        def work() -> None:
            manifest = self.manifest("eval")
            detections = load_detections(self.layout.detections, self.state.done_videos("detect"))
            table = self._evaluation(detections, manifest, self.config.gold_path)
            atomic_write_text(os.path.join(self.layout.reports, "eval.csv"), table.to_csv(index=False, float_format="%.6f"))
            atomic_write_text(os.path.join(self.layout.reports, "eval.md"), table.to_markdown(index=False, floatfmt=".4f") + "\n")
            overall = table[table["video_id"] == "ALL"]
            if not overall.empty:
                row = overall.iloc[0]
                logger.info(f"Time-level P/R/F1 {row.time_precision:.3f}/{row.time_recall:.3f}/{row.time_f1:.3f}; "
                            f"segment-level P/R/F1 {row.segment_precision:.3f}/{row.segment_recall:.3f}/{row.segment_f1:.3f}.")

        return self._corpus_stage("eval", work)

    def report(self) -> int:
        self.state.require("analyze")
        emit_reports(self._reports("report"), self.layout.reports, summary=self.summary())
        return 0

    def run(self, manifest_path: str) -> int:
        failures = self.ingest(manifest_path)
        failures += self.detect()
        failures += self.keywords()
        failures += self.group()
        failures += self.analyze()
        if self.config.gold_path:
            failures += self.evaluate()
        return failures


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"Run configuration (JSON or TOML). Default: {DEFAULT_CONFIG_PATH}.")
    common.add_argument("--work-dir", default=None, help="Work directory for all artifacts.")
    common.add_argument("--backend", choices=["remote", "mock"], default=None, help="LLM and embedding backend.")
    common.add_argument("--resume", action="store_true", help="Skip videos whose stage is already done.")
    common.add_argument("--video-id", action="append", default=None, help="Restrict to this video (repeatable).")
    common.add_argument("--parallelism", type=int, default=None, help="Number of videos processed at once.")
    common.add_argument("--gold", default=None, help="Gold labels JSONL for evaluation.")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override any config key.")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging.")

    parser = argparse.ArgumentParser(description="Detect and analyse sponsored ad segments in video transcripts.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("ingest", "Parse the transcripts listed in a manifest."),
                            ("run", "Run every stage in order.")]:
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("manifest", help="Corpus manifest (video_id, channel, kind, format, path).")
    for name, help_text in [("detect", "Detect sponsored segments."), ("keywords", "Extract ad and content keywords."),
                            ("group", "Group keywords into categories."), ("analyze", "Compute and write the reports."),
                            ("eval", "Evaluate detections against gold labels."), ("report", "Re-render the reports.")]:
        commands.add_parser(name, parents=[common], help=help_text)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    overrides = dict(parse_override(item) for item in args.set)
    for key, value in [("work_dir", args.work_dir), ("backend", args.backend), ("parallelism", args.parallelism),
                       ("gold_path", args.gold)]:
        if value is not None:
            overrides[key] = value
    if args.work_dir is not None and "cache_dir" not in overrides:
        overrides["cache_dir"] = os.path.join(args.work_dir, "cache")
    path = args.config
    if path is None and os.path.exists(resolve_data_path(DEFAULT_CONFIG_PATH)):
        path = resolve_data_path(DEFAULT_CONFIG_PATH)
    return RunConfig.from_file(path, overrides)


def main(argv: list[str] | None = None, backend: LlmBackend | None = None,
         embedder: EmbeddingProvider | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = load_run_config(args)
        pipeline = Pipeline(config, backend, embedder, args.video_id, args.resume)
        if args.command == "ingest":
            failures = pipeline.ingest(args.manifest)
        elif args.command == "run":
            failures = pipeline.run(args.manifest)
        else:
            failures = {"detect": pipeline.detect, "keywords": pipeline.keywords, "group": pipeline.group,
                        "analyze": pipeline.analyze, "eval": pipeline.evaluate, "report": pipeline.report}[args.command]()
    except (ConfigError, StagePreconditionError, ManifestError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    return EXIT_PARTIAL if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
