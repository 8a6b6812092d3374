"""
manifest.py

Corpus manifest: one record per transcript file, `video_id, channel, kind, format, path`,
tab- or comma-separated, with '#' comment lines ignored. Relative paths resolve against the
manifest's own directory.

The manifest is read with pandas, and `CorpusManifest.summary()` gives the channel × kind
"Transcripts Collected" table with a Total row.
"""

import logging
import os
from dataclasses import dataclass, field

import pandas as pd

from text_extractor.captions import PARSERS, Transcript, TranscriptKind
from utils.errors import DuplicateVideoId, MalformedInput, ManifestError, MissingFile, UnknownFormatTag
from utils.utils import atomic_write_text

logger = logging.getLogger(__name__)

COLUMNS = ["video_id", "channel", "kind", "format", "path"]


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    channel: str
    kind: TranscriptKind
    format: str
    path: str


@dataclass
class CorpusManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        seen: set[str] = set()
        for record in self.records:
            if record.video_id in seen:
                raise DuplicateVideoId(f"Duplicate video_id '{record.video_id}' in manifest.")
            seen.add(record.video_id)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, video_id: str) -> ManifestRecord | None:
        return next((r for r in self.records if r.video_id == video_id), None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[r.video_id, r.channel, r.kind.value, r.format, r.path] for r in self.records],
            columns=COLUMNS,
        )

    def summary(self) -> pd.DataFrame:
        """Counts of collected transcripts per channel (rows) and kind (Generated/Manual columns), plus a Total row."""
        df = self.to_frame()
        labels = [k.label for k in TranscriptKind]
        if df.empty:
            table = pd.DataFrame(0, index=pd.Index([], name="Channel"), columns=labels)
        else:
            df["kind"] = df["kind"].map(lambda k: TranscriptKind(k).label)
            table = pd.crosstab(df["channel"], df["kind"]).reindex(columns=labels, fill_value=0)
            table.index.name = "Channel"
        table.columns.name = None
        table.loc["Total"] = table.sum(axis=0)
        return table.astype(int)


def _parse_kind(value: str, video_id: str) -> TranscriptKind:
    try:
        return TranscriptKind(value.strip().lower())
    except ValueError as e:
        raise ManifestError(f"Unknown transcript kind '{value}' for video '{video_id}'. Use 'generated' or 'manual'.") from e


def load_manifest(path: str, check_files: bool = True) -> CorpusManifest:
    """
    Loads and validates a corpus manifest.
    Raises DuplicateVideoId, MissingFile (unreadable transcript path) or UnknownFormatTag.
    """
    if not os.path.isfile(path):
        raise MissingFile(f"Manifest {path} not found.")
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        df = pd.read_csv(path, sep=r"\t|,", engine="python", comment="#", header=None,
                         names=COLUMNS, dtype=str, skip_blank_lines=True, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return CorpusManifest()

    records: list[ManifestRecord] = []
    for row in df.itertuples(index=False):
        values = [str(v).strip() for v in row]
        if values == COLUMNS:
            continue  # header line
        if any(v == "" for v in values):
            raise ManifestError(f"Incomplete manifest row: {values}")
        video_id, channel, kind, fmt, file_path = values
        fmt = fmt.lower()
        if fmt not in PARSERS:
            raise UnknownFormatTag(f"Unknown format tag '{fmt}' for video '{video_id}'. Use one of {sorted(PARSERS)}.")
        if not os.path.isabs(file_path):
            file_path = os.path.normpath(os.path.join(base_dir, file_path))
        if check_files and not (os.path.isfile(file_path) and os.access(file_path, os.R_OK)):
            raise MissingFile(f"Transcript file {file_path} for video '{video_id}' is not readable.")
        records.append(ManifestRecord(video_id, channel, _parse_kind(kind, video_id), fmt, file_path))
    return CorpusManifest(records)


def save_manifest(manifest: CorpusManifest, path: str) -> None:
    """Writes the manifest in its tab-separated file form (absolute paths)."""
    lines = ["\t".join(COLUMNS)]
    lines += ["\t".join([r.video_id, r.channel, r.kind.value, r.format, r.path]) for r in manifest.records]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_transcript(record: ManifestRecord) -> Transcript:
    """Reads and parses the transcript file of one manifest record."""
    parser = PARSERS[record.format]
    with open(record.path, "rb") as f:
        raw = f.read()
    if record.format == "json":
        entries = parser(raw)
    else:
        try:
            entries = parser(raw.decode("utf-8-sig"))
        except UnicodeDecodeError as e:
            raise MalformedInput(f"{record.path} is not valid UTF-8: {e}") from e
    return Transcript(record.video_id, record.channel, record.kind, tuple(entries))
