"""
captions.py

Canonical transcript data model and the parsers/serializers for the three supported caption formats:

- Caption JSON: an array of {"text", "start", "duration"} records (the shape the ad prompt asks for)
- SRT, read with `pysrt`
- WebVTT, read with `webvtt-py`

Caption text is stored verbatim; all cleaning happens in `text_extractor.preprocess`.
Times are seconds as floats and are written with at most 3 fractional digits.

Dependencies:
- pysrt
- webvtt-py
"""

import io
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from enum import Enum

import pysrt
import webvtt

from utils.errors import MalformedInput, MalformedTimestamp, MissingHeader, NegativeTime, OverlappingCueWarning

logger = logging.getLogger(__name__)

SRT_TIMING = re.compile(r"^\s*(\d{1,2}):(\d{2}):(\d{2})[,.](\d{3})\s*-->\s*(\d{1,2}):(\d{2}):(\d{2})[,.](\d{3})\s*$")
VTT_TIMING = re.compile(r"^\s*((?:\d{1,2}:)?\d{2}:\d{2}\.\d{3})\s*-->\s*((?:\d{1,2}:)?\d{2}:\d{2}\.\d{3})(?:\s+.*)?$")
VTT_TAG = re.compile(r"<[^>]+>")


class TranscriptKind(str, Enum):
    GENERATED = "generated"
    MANUAL = "manual"

    @property
    def label(self) -> str:
        return self.value.capitalize()


@dataclass(frozen=True)
class CaptionEntry:
    text: str
    start: float
    duration: float

    def __post_init__(self):
        if self.start < 0 or self.duration < 0:
            raise NegativeTime(f"Negative time in caption entry (start={self.start}, duration={self.duration}).")
        if not self.text.strip():
            raise MalformedInput("Caption entry text is empty.")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass(frozen=True)
class Transcript:
    video_id: str
    channel: str
    kind: TranscriptKind
    entries: tuple[CaptionEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sort_entries(self.entries)))

    @property
    def end(self) -> float:
        """Total duration: the latest end over all entries."""
        return max((e.end for e in self.entries), default=0.0)

    def text(self) -> str:
        return " ".join(e.text for e in self.entries)


def sort_entries(entries) -> list[CaptionEntry]:
    return sorted(entries, key=lambda e: e.start)


def _as_time(value, field_name: str, fragment) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedInput(f"Field '{field_name}' is not numeric in {fragment!r}.")
    value = float(value)
    if not math.isfinite(value):
        raise MalformedInput(f"Field '{field_name}' is not finite in {fragment!r}.")
    if value < 0:
        raise NegativeTime(f"Field '{field_name}' is negative in {fragment!r}.")
    return value


def _warn_overlaps(entries: list[CaptionEntry], source: str) -> None:
    for prev, curr in zip(entries, entries[1:]):
        if curr.start < prev.end:
            message = f"{source}: cue at {curr.start:.3f}s overlaps the previous cue ending at {prev.end:.3f}s."
            logger.warning(message)
            warnings.warn(message, OverlappingCueWarning, stacklevel=3)


# --------------- Caption JSON ---------------- #
def parse_caption_json(raw: bytes | str) -> list[CaptionEntry]:
    """
    Parses a caption JSON array into entries, stably sorted by start.
    Raises MalformedInput for anything that is not an array of complete records, NegativeTime for negative times.
    """
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedInput(f"Caption JSON could not be decoded: {e}") from e
    if not isinstance(data, list):
        raise MalformedInput("Caption JSON must be an array of records.")

    entries: list[CaptionEntry] = []
    for record in data:
        if not isinstance(record, dict):
            raise MalformedInput(f"Caption record is not an object: {record!r}")
        missing = [k for k in ("text", "start", "duration") if k not in record]
        if missing:
            raise MalformedInput(f"Caption record missing {missing}: {record!r}")
        if not isinstance(record["text"], str):
            raise MalformedInput(f"Caption text is not a string: {record!r}")
        start = _as_time(record["start"], "start", record)
        duration = _as_time(record["duration"], "duration", record)
        if not record["text"].strip():
            logger.debug(f"Dropping blank caption at {start}s.")
            continue
        entries.append(CaptionEntry(record["text"], start, duration))
    return sort_entries(entries)


def serialize_caption_json(transcript: Transcript | list[CaptionEntry]) -> bytes:
    entries = transcript.entries if isinstance(transcript, Transcript) else transcript
    records = [{"text": e.text, "start": round(e.start, 3), "duration": round(e.duration, 3)} for e in entries]
    return json.dumps(records, ensure_ascii=False).encode("utf-8")


# --------------- SRT ---------------- #
def _check_timing_lines(text: str, pattern: re.Pattern) -> None:
    for line in text.splitlines():
        if "-->" in line and not pattern.match(line):
            raise MalformedTimestamp(f"Malformed timestamp line: {line.strip()!r}")


def _entry_from_millis(text: str, start_ms: int, end_ms: int) -> CaptionEntry:
    if end_ms < start_ms:
        raise MalformedTimestamp(f"Cue ends before it starts ({start_ms} ms --> {end_ms} ms).")
    return CaptionEntry(text, start_ms / 1000, (end_ms - start_ms) / 1000)


def parse_srt(text: str) -> list[CaptionEntry]:
    """
    Parses an SRT document. Multi-line cue text is joined with single spaces.
    Overlapping cues are kept and flagged with an OverlappingCueWarning.
    """
    if not text.strip():
        return []
    _check_timing_lines(text, SRT_TIMING)
    try:
        items = pysrt.from_string(text, error_handling=pysrt.SubRipFile.ERROR_RAISE)
    except pysrt.Error as e:
        raise MalformedTimestamp(f"SRT could not be parsed: {e}") from e

    entries: list[CaptionEntry] = []
    for item in items:
        caption = " ".join(line.strip() for line in item.text.splitlines() if line.strip())
        if not caption:
            continue
        entries.append(_entry_from_millis(caption, item.start.ordinal, item.end.ordinal))
    entries = sort_entries(entries)
    _warn_overlaps(entries, "SRT")
    return entries


def _millis(seconds: float) -> int:
    return int(round(seconds * 1000))


def serialize_srt(transcript: Transcript | list[CaptionEntry]) -> str:
    entries = transcript.entries if isinstance(transcript, Transcript) else transcript
    items = pysrt.SubRipFile()
    for i, e in enumerate(entries, start=1):
        items.append(pysrt.SubRipItem(
            index=i,
            start=pysrt.SubRipTime.from_ordinal(_millis(e.start)),
            end=pysrt.SubRipTime.from_ordinal(_millis(e.start) + _millis(e.duration)),
            text=e.text,
        ))
    buffer = io.StringIO()
    items.write_into(buffer)
    return buffer.getvalue()


# --------------- WebVTT ---------------- #
def _vtt_millis(timestamp: str) -> int:
    parts = timestamp.strip().split(":")
    seconds, millis = parts[-1].split(".")
    minutes = int(parts[-2])
    hours = int(parts[-3]) if len(parts) == 3 else 0
    return ((hours * 60 + minutes) * 60 + int(seconds)) * 1000 + int(millis)


def parse_vtt(text: str) -> list[CaptionEntry]:
    """
    Parses a WebVTT document. NOTE blocks, cue settings and inline styling tags are discarded.
    """
    if not text.lstrip("\ufeff").startswith("WEBVTT"):
        raise MissingHeader("WebVTT document must begin with 'WEBVTT'.")
    _check_timing_lines(text, VTT_TIMING)
    try:
        captions = webvtt.read_buffer(io.StringIO(text))
    except Exception as e:  # the library signals structure errors with its own types
        raise MalformedTimestamp(f"WebVTT could not be parsed: {e}") from e

    entries: list[CaptionEntry] = []
    for caption in captions:
        lines = [VTT_TAG.sub("", line).strip() for line in caption.text.splitlines()]
        joined = " ".join(line for line in lines if line)
        if not joined:
            continue
        entries.append(_entry_from_millis(joined, _vtt_millis(caption.start), _vtt_millis(caption.end)))
    entries = sort_entries(entries)
    _warn_overlaps(entries, "WebVTT")
    return entries


def _vtt_timestamp(millis: int) -> str:
    hours, rest = divmod(millis, 3_600_000)
    minutes, rest = divmod(rest, 60_000)
    seconds, ms = divmod(rest, 1000)
    return f"{hours:02d}:{minutes:02d}:{seconds:02d}.{ms:03d}"


def serialize_vtt(transcript: Transcript | list[CaptionEntry]) -> str:
    entries = transcript.entries if isinstance(transcript, Transcript) else transcript
    document = webvtt.WebVTT()
    for e in entries:
        start = _millis(e.start)
        document.captions.append(webvtt.Caption(_vtt_timestamp(start), _vtt_timestamp(start + _millis(e.duration)), e.text))
    if not entries:
        return "WEBVTT\n"
    return document.content


PARSERS = {
    "json": parse_caption_json,
    "srt": parse_srt,
    "vtt": parse_vtt,
}
