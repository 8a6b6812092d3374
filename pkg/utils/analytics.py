"""
analytics.py

Corpus-level analysis of detections and categories:

- prevalence of sponsored segments per channel and transcript kind (percent of collected transcripts
  with at least one detected ad, rounded half up)
- cross-tabulation of video content categories against ad categories
- alignment between the ad and content keywords of each video (phrase Jaccard and centroid cosine),
  averaged per (content category, ad category) pair
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ad_detection.detector import DetectionResult
from keywords.category_grouper import CategoryAssignment
from keywords.keyword_engine import cosine
from LLM_interaction.embeddings import EmbeddingProvider, mean_embedding
from text_extractor.captions import TranscriptKind
from text_extractor.manifest import CorpusManifest
from utils.errors import EmptyKeywordSet, UnknownVideoId
from utils.utils import natural_key

logger = logging.getLogger(__name__)

TOTAL = "Total"
ALIGNMENT_COLUMNS = ["level", "video_id", "content_category", "ad_category", "videos", "jaccard", "centroid_cosine"]


def percent(detected: int, collected: int) -> int | None:
    """round(100 * detected / collected), halves rounded up; None when nothing was collected."""
    if collected == 0:
        return None
    return (200 * detected + collected) // (2 * collected)


@dataclass(frozen=True)
class PrevalenceRow:
    channel: str
    kind: TranscriptKind
    detected: int
    collected: int
    ad_seconds: float = 0.0

    def __post_init__(self):
        if not 0 <= self.detected <= self.collected:
            raise ValueError(f"{self.channel}/{self.kind.value}: detected {self.detected} of {self.collected}.")

    @property
    def prevalence(self) -> int | None:
        return percent(self.detected, self.collected)


def prevalence_table(detections: dict[str, DetectionResult], manifest: CorpusManifest) -> list[PrevalenceRow]:
    """One row per (channel, kind) with collected transcripts, then one Total row per kind."""
    collected: dict[tuple[str, TranscriptKind], int] = {}
    for record in manifest.records:
        collected[(record.channel, record.kind)] = collected.get((record.channel, record.kind), 0) + 1

    detected: dict[tuple[str, TranscriptKind], int] = {}
    seconds: dict[tuple[str, TranscriptKind], float] = {}
    for video_id, result in detections.items():
        record = manifest.get(video_id)
        if record is None:
            raise UnknownVideoId(f"Detection for {video_id} has no manifest record.")
        key = (record.channel, record.kind)
        detected[key] = detected.get(key, 0) + int(result.has_ad)
        seconds[key] = seconds.get(key, 0.0) + result.ad_seconds()

    rows = [PrevalenceRow(channel, kind, detected.get((channel, kind), 0), n, round(seconds.get((channel, kind), 0.0), 3))
            for (channel, kind), n in sorted(collected.items(), key=lambda kv: (kv[0][0].casefold(), kv[0][1].label))]
    for kind in TranscriptKind:
        of_kind = [r for r in rows if r.kind is kind]
        rows.append(PrevalenceRow(TOTAL, kind, sum(r.detected for r in of_kind), sum(r.collected for r in of_kind),
                                  round(sum(r.ad_seconds for r in of_kind), 3)))
    return rows


def prevalence_frame(rows: list[PrevalenceRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.channel, r.kind.label, r.detected, r.collected, r.prevalence, r.ad_seconds] for r in rows],
        columns=["channel", "kind", "detected", "collected", "prevalence", "ad_seconds"],
    ).astype({"prevalence": "Int64"})


def prevalence_wide(rows: list[PrevalenceRow]) -> pd.DataFrame:
    """Channel rows with detected counts and prevalence per kind; '-' where there is nothing to show."""
    channels = list(dict.fromkeys(r.channel for r in rows))
    by_key = {(r.channel, r.kind): r for r in rows}
    table = []
    for channel in channels:
        detected_cells, prevalence_cells = [], []
        for kind in TranscriptKind:
            row = by_key.get((channel, kind))
            if row is None or row.collected == 0:
                detected_cells.append("-")
                prevalence_cells.append("-")
            else:
                detected_cells.append(str(row.detected) if row.detected else "-")
                prevalence_cells.append(f"{row.prevalence}%")
        table.append([channel, *detected_cells, *prevalence_cells])
    labels = [k.label for k in TranscriptKind]
    return pd.DataFrame(table, columns=["Channel"] + [f"Detected ({k})" for k in labels]
                        + [f"Prevalence ({k})" for k in labels])


# --------------- Cross-tab ---------------- #
@dataclass(frozen=True)
class CrossTabCell:
    content_category: str
    ad_category: str
    count: int


@dataclass
class CrossTab:
    cells: list[CrossTabCell] = field(default_factory=list)
    uncategorized: list[str] = field(default_factory=list)

    def total(self) -> int:
        return sum(c.count for c in self.cells)

    def frame(self) -> pd.DataFrame:
        """Content categories as rows, ad categories as columns, with Total margins."""
        if not self.cells:
            return pd.DataFrame()
        df = pd.DataFrame([[c.content_category, c.ad_category] for c in self.cells for _ in range(c.count)],
                          columns=["content_category", "ad_category"])
        table = pd.crosstab(df["content_category"], df["ad_category"], margins=True, margins_name=TOTAL)
        table.index.name = "Content category"
        table.columns.name = None
        return table


def cross_tab(assignment: CategoryAssignment, detections: dict[str, DetectionResult]) -> CrossTab:
    """Counts videos with ads per (content category, ad category). Videos missing either category are listed apart."""
    counts: dict[tuple[str, str], int] = {}
    uncategorized: list[str] = []
    for video_id in sorted(detections, key=natural_key):
        if not detections[video_id].has_ad:
            continue
        content = assignment.video_content.get(video_id)
        ad = assignment.video_ad.get(video_id)
        if content is None or ad is None:
            uncategorized.append(video_id)
            continue
        counts[(content, ad)] = counts.get((content, ad), 0) + 1
    cells = [CrossTabCell(c, a, n) for (c, a), n in sorted(counts.items(), key=lambda kv: (kv[0][0].casefold(), kv[0][1].casefold()))]
    return CrossTab(cells, uncategorized)


# --------------- Alignment ---------------- #
@dataclass(frozen=True)
class AlignmentScore:
    jaccard: float
    centroid_cosine: float


def alignment_score(ad_keywords: list[str], ad_vectors: np.ndarray, content_keywords: list[str],
                    content_vectors: np.ndarray) -> AlignmentScore:
    if not ad_keywords or not content_keywords:
        raise EmptyKeywordSet("Alignment needs non-empty ad and content keyword sets.")
    ad_set, content_set = set(ad_keywords), set(content_keywords)
    jaccard = len(ad_set & content_set) / len(ad_set | content_set)
    return AlignmentScore(jaccard, cosine(mean_embedding(ad_vectors), mean_embedding(content_vectors)))


def alignment_table(keywords: pd.DataFrame, assignment: CategoryAssignment, provider: EmbeddingProvider) -> pd.DataFrame:
    """
    Per-video alignment rows (level 'video') for videos with both ad and content keywords, followed by the
    mean per (content category, ad category) pair (level 'category_pair').
    """
    phrases = list(dict.fromkeys(keywords["phrase"]))
    vectors = dict(zip(phrases, provider.embed_batch(phrases))) if phrases else {}

    rows = []
    for video_id in sorted(set(keywords["video_id"]), key=natural_key):
        own = keywords[keywords["video_id"] == video_id]
        ad = list(own.loc[own["section"] == "ad", "phrase"])
        content = list(own.loc[own["section"] == "content", "phrase"])
        if not ad or not content:
            continue
        score = alignment_score(ad, np.vstack([vectors[p] for p in ad]), content, np.vstack([vectors[p] for p in content]))
        rows.append(["video", video_id, assignment.video_content.get(video_id, ""), assignment.video_ad.get(video_id, ""),
                     1, score.jaccard, score.centroid_cosine])
    videos = pd.DataFrame(rows, columns=ALIGNMENT_COLUMNS)

    categorized = videos[(videos["content_category"] != "") & (videos["ad_category"] != "")]
    if categorized.empty:
        return videos
    pairs = (categorized.groupby(["content_category", "ad_category"], sort=True)
             .agg(videos=("video_id", "count"), jaccard=("jaccard", "mean"), centroid_cosine=("centroid_cosine", "mean"))
             .reset_index())
    pairs.insert(0, "level", "category_pair")
    pairs.insert(1, "video_id", "")
    return pd.concat([videos, pairs[ALIGNMENT_COLUMNS]], ignore_index=True)
