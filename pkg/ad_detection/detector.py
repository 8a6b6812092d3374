"""
detector.py

Sponsored-segment detection for one transcript at a time.

The `AdDetector` class sends the transcript (LightClean text, as caption records) with the ad prompt through
the LLM gateway, parses the reply into records and aligns each record back onto the transcript:

1. find the entry whose start is nearest the record's start
2. walk forward while adding entries keeps raising the token-level Jaccard similarity to the record text
3. grade the match: Validated (time and text agree), Unvalidated (time agrees, text only loosely) or
   Rejected (kept with the claimed times for audit)

Spans from overlapping windows are de-duplicated, then neighbouring spans closer than `merge_gap` seconds
are merged. Transcripts over the prompt budget are split into overlapping windows.

Results are persisted as one JSON document per video plus a corpus-level `detections.jsonl`.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum

from LLM_interaction.gpt_client import LLMGateway
from LLM_interaction.output_parser import NO_AD, AdRecord, parse_llm_record_list_lenient
from LLM_interaction.prompts import AD_PROMPT_PATH, DEFAULT_BUDGET_CHARS, ad_prompt_size, format_record, load_template, render_ad_prompt
from text_extractor.captions import CaptionEntry, Transcript
from text_extractor.preprocess import Lexicon, Profile, preprocess
from utils.errors import ContextTooLong, Unparseable
from utils.utils import atomic_write_json, atomic_write_text, natural_key, read_json

logger = logging.getLogger(__name__)

MIN_SPAN = 0.001
JSONL_NAME = "detections.jsonl"


class Validation(str, Enum):
    VALIDATED = "validated"
    UNVALIDATED = "unvalidated"
    REJECTED = "rejected"

    @property
    def strength(self) -> int:
        return {"validated": 2, "unvalidated": 1, "rejected": 0}[self.value]


@dataclass(frozen=True)
class AdSpan:
    start: float
    end: float
    text: str
    entry_indexes: tuple[int, ...] = ()
    validation: Validation = Validation.VALIDATED

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"AdSpan end {self.end} must be after start {self.start}.")
        if self.validation is Validation.VALIDATED:
            idx = self.entry_indexes
            if not idx or list(idx) != list(range(idx[0], idx[0] + len(idx))):
                raise ValueError(f"Validated span needs contiguous entry indexes, got {idx}.")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "text": self.text,
                "entry_indexes": list(self.entry_indexes), "validation": self.validation.value}

    @classmethod
    def from_dict(cls, d: dict) -> "AdSpan":
        return cls(float(d["start"]), float(d["end"]), d["text"], tuple(d.get("entry_indexes", ())),
                   Validation(d["validation"]))


@dataclass
class DetectionResult:
    video_id: str
    spans: list[AdSpan] = field(default_factory=list)
    raw_response: str = ""
    model_id: str = ""
    windows: int = 1

    @property
    def has_ad(self) -> bool:
        return any(s.validation is not Validation.REJECTED for s in self.spans)

    def accepted_spans(self) -> list[AdSpan]:
        return [s for s in self.spans if s.validation is not Validation.REJECTED]

    def ad_seconds(self) -> float:
        return sum(s.duration for s in self.accepted_spans())

    def to_dict(self) -> dict:
        return {"video_id": self.video_id, "model_id": self.model_id, "has_ad": self.has_ad,
                "spans": [s.to_dict() for s in self.spans], "raw_response": self.raw_response,
                "windows": self.windows}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionResult":
        return cls(d["video_id"], [AdSpan.from_dict(s) for s in d.get("spans", [])], d.get("raw_response", ""),
                   d.get("model_id", ""), int(d.get("windows", 1)))


@dataclass(frozen=True)
class DetectionConfig:
    time_tol: float = 5.0
    sim_tol: float = 0.8
    sim_floor: float = 0.5
    merge_gap: float = 3.0
    window_overlap: float = 60.0
    max_prompt_chars: int = DEFAULT_BUDGET_CHARS
    profile: Profile = Profile.LIGHT_CLEAN
    template_path: str = AD_PROMPT_PATH
    lexicon: Lexicon = Lexicon()

    @classmethod
    def from_run_config(cls, config) -> "DetectionConfig":
        return cls(config.time_tol, config.sim_tol, config.sim_floor, config.merge_gap, config.window_overlap,
                   config.max_prompt_chars, Profile(config.detect_profile), config.ad_prompt_path,
                   Lexicon.from_run_config(config))


# --------------- Alignment ---------------- #
def _token_set(text: str) -> frozenset[str]:
    return frozenset(preprocess(text, Profile.LIGHT_CLEAN).tokens)


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def _fit_span(start: float, end: float, limit: float) -> tuple[float, float]:
    """Gives [start, end) a positive length without passing `limit`, the transcript end, when it is long enough."""
    end = max(end, start + MIN_SPAN)
    if end > limit >= MIN_SPAN:
        end = limit
        start = min(start, limit - MIN_SPAN)
    return start, end


def align_span(record: AdRecord, transcript: Transcript, cfg: DetectionConfig = DetectionConfig(),
               entry_tokens: list[frozenset[str]] | None = None) -> AdSpan:
    """
    Aligns one LLM record onto the transcript and grades the match. Never raises; a failed match is a
    Rejected span carrying the record's own times.
    """
    entries = transcript.entries
    claimed_end = max(record.end, record.start + MIN_SPAN)
    rejected = AdSpan(record.start, claimed_end, record.text, (), Validation.REJECTED)
    if not entries:
        return rejected
    if entry_tokens is None:
        entry_tokens = [_token_set(e.text) for e in entries]

    target = _token_set(record.text)
    first = min(range(len(entries)), key=lambda i: (abs(entries[i].start - record.start), i))
    offset = abs(entries[first].start - record.start)

    accumulated = set(entry_tokens[first])
    best_sim = jaccard(accumulated, target)
    last = first
    for j in range(first + 1, len(entries)):
        grown = accumulated | entry_tokens[j]
        sim = jaccard(grown, target)
        if sim < best_sim:
            break
        accumulated = grown
        if sim > best_sim:
            best_sim, last = sim, j

    if offset > cfg.time_tol or best_sim < cfg.sim_floor:
        logger.debug(f"Rejected record at {record.start:.3f}s (offset {offset:.3f}s, similarity {best_sim:.3f}).")
        return rejected
    verdict = Validation.VALIDATED if best_sim >= cfg.sim_tol else Validation.UNVALIDATED
    start, end = _fit_span(entries[first].start, max(entries[i].end for i in range(first, last + 1)), transcript.end)
    return AdSpan(start, end, " ".join(e.text for e in entries[first:last + 1]),
                  tuple(range(first, last + 1)), verdict)


def _combine(a: AdSpan, b: AdSpan) -> AdSpan:
    indexes = set(a.entry_indexes) | set(b.entry_indexes)
    filled = tuple(range(min(indexes), max(indexes) + 1)) if indexes else ()
    weakest = min(a.validation, b.validation, key=lambda v: v.strength)
    return AdSpan(min(a.start, b.start), max(a.end, b.end), f"{a.text} {b.text}", filled, weakest)


def merge_spans(spans: list[AdSpan], merge_gap: float = 3.0) -> list[AdSpan]:
    """Merges spans whose gap (next.start - prev.end) is at most `merge_gap`. Expects spans sorted by start."""
    merged: list[AdSpan] = []
    for span in spans:
        if merged and span.start - merged[-1].end <= merge_gap:
            merged[-1] = _combine(merged[-1], span)
        else:
            merged.append(span)
    return merged


def dedupe_spans(spans: list[AdSpan]) -> list[AdSpan]:
    """Drops spans whose interval lies inside an already kept span (repeats from overlapping windows)."""
    kept: list[AdSpan] = []
    for span in sorted(spans, key=lambda s: (s.start, -s.end)):
        if any(k.start <= span.start and span.end <= k.end and k.validation.strength >= span.validation.strength
               for k in kept):
            continue
        kept.append(span)
    return kept


# --------------- Windowing ---------------- #
def window_transcript(entries: Transcript | list[CaptionEntry], budget: int = DEFAULT_BUDGET_CHARS,
                      overlap: float = 60.0, template_path: str = AD_PROMPT_PATH) -> list[list[CaptionEntry]]:
    """
    Splits entries into windows whose rendered ad prompt fits `budget` characters. Consecutive windows
    share at least `overlap` seconds when a window is long enough to allow it.
    """
    if isinstance(entries, Transcript):
        entries = entries.entries
    entries = list(entries)
    if not entries or ad_prompt_size(entries, template_path) <= budget:
        return [entries]

    base = len(load_template(template_path)) + 1 + 2
    sizes = [len(format_record(e.text, e.start, e.duration)) + 2 for e in entries]
    windows: list[list[CaptionEntry]] = []
    i = 0
    while i < len(entries):
        size = base + sizes[i]
        j = i + 1
        while j < len(entries) and size + sizes[j] <= budget:
            size += sizes[j]
            j += 1
        if j == i + 1 and size > budget:
            logger.warning(f"Caption at {entries[i].start:.3f}s alone exceeds the {budget}-character prompt budget.")
        windows.append(entries[i:j])
        if j >= len(entries):
            break
        window_end = max(e.end for e in entries[i:j])
        restart = max((k for k in range(i, j) if entries[k].start <= window_end - overlap), default=i)
        i = restart if restart > i else i + 1
    return windows


# --------------- Detection ---------------- #
class AdDetector:
    """Runs ad detection for transcripts through a shared gateway."""

    def __init__(self, gateway: LLMGateway, cfg: DetectionConfig = DetectionConfig()):
        self.gateway = gateway
        self.cfg = cfg

    def _prompt_entries(self, transcript: Transcript) -> list[CaptionEntry]:
        prompt_entries = []
        for entry in transcript.entries:
            text = preprocess(entry.text, self.cfg.profile, lexicon=self.cfg.lexicon).text()
            if text:
                prompt_entries.append(CaptionEntry(text, entry.start, entry.duration))
        return prompt_entries

    def _ask(self, video_id: str, window: list[CaptionEntry]) -> tuple[list[AdRecord], str]:
        prompt = render_ad_prompt(window, self.cfg.max_prompt_chars, self.cfg.template_path)
        request = self.gateway.request(prompt)
        response = self.gateway.complete(request)
        try:
            records, errors = parse_llm_record_list_lenient(response.content)
        except Unparseable as e:
            logger.warning(f"{video_id}: unparseable reply ({e}); asking once more.")
            response = self.gateway.complete(request, refresh=True)
            records, errors = parse_llm_record_list_lenient(response.content)
        for error in errors:
            logger.warning(f"{video_id}: dropped invalid record ({error}): {error.fragment}")
        return ([] if records is NO_AD else records), response.content or ""

    def _ask_windows(self, video_id: str, entries: list[CaptionEntry], budget: int) -> tuple[list[AdRecord], list[str], int]:
        records: list[AdRecord] = []
        raws: list[str] = []
        windows = window_transcript(entries, budget, self.cfg.window_overlap, self.cfg.template_path)
        count = 0
        for window in windows:
            try:
                window_records, raw = self._ask(video_id, window)
                records += window_records
                raws.append(raw)
                count += 1
            except ContextTooLong:
                if len(window) < 2:
                    raise
                logger.info(f"{video_id}: backend rejected a {len(window)}-caption window as too long; splitting it.")
                sub_records, sub_raws, sub_count = self._ask_windows(video_id, window, max(1, budget // 2))
                records += sub_records
                raws += sub_raws
                count += sub_count
        return records, raws, count

    def detect(self, transcript: Transcript) -> DetectionResult:
        if not transcript.entries:
            raise ValueError(f"Transcript {transcript.video_id} has no caption entries.")
        prompt_entries = self._prompt_entries(transcript)
        if not prompt_entries:
            return DetectionResult(transcript.video_id, [], "", self.gateway.model_id, 0)

        records, raws, windows = self._ask_windows(transcript.video_id, prompt_entries, self.cfg.max_prompt_chars)
        entry_tokens = [_token_set(e.text) for e in transcript.entries]
        aligned = [align_span(r, transcript, self.cfg, entry_tokens) for r in records]

        accepted = dedupe_spans([s for s in aligned if s.validation is not Validation.REJECTED])
        merged = [_rebuild_text(s, transcript) for s in merge_spans(accepted, self.cfg.merge_gap)]
        rejected = [s for s in aligned if s.validation is Validation.REJECTED]
        spans = sorted(merged + rejected, key=lambda s: (s.start, s.end))
        result = DetectionResult(transcript.video_id, spans, "\n\n".join(raws), self.gateway.model_id, windows)
        logger.debug(f"{transcript.video_id}: {len(records)} records, {len(merged)} spans, has_ad={result.has_ad}.")
        return result


def _rebuild_text(span: AdSpan, transcript: Transcript) -> AdSpan:
    if not span.entry_indexes:
        return span
    text = " ".join(transcript.entries[i].text for i in span.entry_indexes)
    return AdSpan(span.start, span.end, text, span.entry_indexes, span.validation)


def detect_ads(transcript: Transcript, gateway: LLMGateway, cfg: DetectionConfig = DetectionConfig()) -> DetectionResult:
    return AdDetector(gateway, cfg).detect(transcript)


def ad_entry_indexes(result: DetectionResult) -> set[int]:
    """Indexes of the transcript entries covered by non-Rejected spans."""
    return {i for span in result.accepted_spans() for i in span.entry_indexes}


# --------------- Persistence ---------------- #
def save_detection(result: DetectionResult, directory: str) -> str:
    path = os.path.join(directory, f"{result.video_id}.json")
    atomic_write_json(path, result.to_dict())
    return path


def load_detection(path: str) -> DetectionResult:
    return DetectionResult.from_dict(read_json(path))


def load_detections(directory: str, video_ids: list[str] | None = None) -> dict[str, DetectionResult]:
    if not os.path.isdir(directory):
        return {}
    results: dict[str, DetectionResult] = {}
    for filename in sorted(os.listdir(directory)):
        if not filename.endswith(".json"):
            continue
        video_id = filename[: -len(".json")]
        if video_ids is None or video_id in video_ids:
            results[video_id] = load_detection(os.path.join(directory, filename))
    return dict(sorted(results.items(), key=lambda kv: natural_key(kv[0])))


def write_detections_jsonl(directory: str) -> str:
    """Rebuilds the corpus-level JSONL from the per-video documents, ordered by video id."""
    lines = [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in load_detections(directory).values()]
    path = os.path.join(directory, JSONL_NAME)
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return path
