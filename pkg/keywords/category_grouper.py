"""
category_grouper.py

Reduces keyword lists to a handful of categories with the grouping prompt, then maps keywords and videos
onto the final categories.

A round splits the keyword list into batches (default 300 keywords), sends each batch with the grouping
prompt and unions the returned group labels. A batch that does not shrink is asked once more with an
extra system instruction and otherwise passed through unchanged. The cascade repeats rounds until the list
is at most the target size, a round stops shrinking the list, or `max_rounds` is reached.

The grouping prompt returns labels only, so keywords are assigned to the label with the closest embedding
and a video takes the most frequent category among its keywords.
"""

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from LLM_interaction.embeddings import EmbeddingProvider
from LLM_interaction.gpt_client import LLMGateway
from LLM_interaction.output_parser import parse_llm_string_list
from LLM_interaction.prompts import DEFAULT_BUDGET_CHARS, GROUP_PROMPT_PATH, render_group_prompt
from keywords.keyword_engine import ScoredKeyword, cosine_matrix
from text_extractor.preprocess import clean_text
from utils.errors import BackendUnavailable, ContextTooLong, EmptyKeywordSet, Unparseable, VideoWithoutKeywords
from utils.utils import atomic_write_json, atomic_write_text, natural_key, read_json

logger = logging.getLogger(__name__)

REDUCE_HINT = ("Return fewer groups than the number of keywords you were given. "
               "Each group keyword must cover several of the input keywords.")
STAGES = ("content", "ad")


@dataclass
class GroupingRound:
    round_index: int
    input_keywords: list[str]
    output_groups: list[str]
    batch_count: int
    passthrough_batches: int = 0

    def to_dict(self) -> dict:
        return {"round": self.round_index, "input_count": len(self.input_keywords),
                "output_count": len(self.output_groups), "batch_count": self.batch_count,
                "passthrough_batches": self.passthrough_batches, "output_groups": self.output_groups}


@dataclass
class CategoryAssignment:
    content_keywords: dict[str, str] = field(default_factory=dict)
    ad_keywords: dict[str, str] = field(default_factory=dict)
    video_content: dict[str, str] = field(default_factory=dict)
    video_ad: dict[str, str] = field(default_factory=dict)
    uncategorized: list[str] = field(default_factory=list)
    content_categories: list[str] = field(default_factory=list)
    ad_categories: list[str] = field(default_factory=list)


def canonical_order(labels) -> list[str]:
    return sorted(set(labels), key=lambda s: (s.casefold(), s))


def _dedupe(items) -> list[str]:
    return list(dict.fromkeys(items))


class CategoryGrouper:
    """One grouping cascade for one stage ('content' or 'ad'); keeps the per-batch audit records."""

    def __init__(self, gateway: LLMGateway, stage: str = "content", batch_size: int = 300, max_rounds: int = 5,
                 budget: int = DEFAULT_BUDGET_CHARS, template_path: str = GROUP_PROMPT_PATH):
        self.gateway = gateway
        self.stage = stage
        self.batch_size = batch_size
        self.max_rounds = max_rounds
        self.budget = budget
        self.template_path = template_path
        self.audit: list[dict] = []

    def _record(self, round_index: int, batch_index: int, batch: list[str], groups: list[str], cache_key: str | None,
                retried: bool = False, passthrough: bool = False) -> None:
        self.audit.append({"stage": self.stage, "round": round_index, "batch": batch_index,
                           "input_count": len(batch), "output_count": len(groups), "cache_key": cache_key,
                           "retried": retried, "passthrough": passthrough})

    def _ask(self, prompt: str, system: str = "") -> tuple[list[str], str]:
        request = self.gateway.request(prompt, system=system)
        try:
            # labels with nothing left after cleaning cannot be embedded or assigned
            groups = [g for g in parse_llm_string_list(self.gateway.complete(request).content) if clean_text(g)]
        except Unparseable as e:
            logger.warning(f"Grouping reply could not be parsed: {e}")
            groups = []
        return groups, request.cache_key()

    def _group_batch(self, round_index: int, batch_index: int, batch: list[str]) -> tuple[list[str], bool]:
        """Returns (groups, passed_through)."""
        if len(batch) == 1:
            self._record(round_index, batch_index, batch, batch, None)
            return list(batch), False
        try:
            prompt = render_group_prompt(batch, self.budget, self.template_path)
        except ContextTooLong:
            half = len(batch) // 2
            logger.info(f"Grouping batch of {len(batch)} keywords is over budget; splitting it.")
            left, left_pass = self._group_batch(round_index, batch_index, batch[:half])
            right, right_pass = self._group_batch(round_index, batch_index, batch[half:])
            return _dedupe(left + right), left_pass or right_pass

        try:
            groups, key = self._ask(prompt)
            retried = False
            if not groups or len(groups) >= len(batch):
                retried = True
                groups, key = self._ask(prompt, system=REDUCE_HINT)
        except BackendUnavailable as e:
            logger.error(f"{self.stage} round {round_index} batch {batch_index}: {e}")
            groups, key, retried = [], None, True

        if not groups or len(groups) >= len(batch):
            logger.warning(f"{self.stage} round {round_index} batch {batch_index}: no reduction from "
                           f"{len(batch)} keywords; passing the batch through unchanged.")
            self._record(round_index, batch_index, batch, batch, key, retried, passthrough=True)
            return list(batch), True
        self._record(round_index, batch_index, batch, groups, key, retried)
        return groups, False

    def group_round(self, keywords: list[str], round_index: int = 1) -> GroupingRound:
        if not keywords:
            raise ValueError("group_round needs at least one keyword.")
        batches = [keywords[i:i + self.batch_size] for i in range(0, len(keywords), self.batch_size)]
        output: list[str] = []
        passthrough = 0
        for batch_index, batch in enumerate(batches, start=1):
            groups, passed = self._group_batch(round_index, batch_index, batch)
            output += groups
            passthrough += int(passed)
        result = GroupingRound(round_index, list(keywords), _dedupe(output), len(batches), passthrough)
        logger.info(f"{self.stage} round {round_index}: {len(keywords)} -> {len(result.output_groups)} "
                    f"keywords over {len(batches)} batches.")
        return result

    def group_cascade(self, keywords: list[str], target_count: int) -> list[GroupingRound]:
        if target_count < 1:
            raise ValueError("target_count must be >= 1.")
        rounds: list[GroupingRound] = []
        current = _dedupe(keywords)
        while len(current) > target_count and len(rounds) < self.max_rounds:
            result = self.group_round(current, len(rounds) + 1)
            rounds.append(result)
            if len(result.output_groups) >= len(current):
                break
            current = result.output_groups
        return rounds


def group_round(keywords: list[str], gateway: LLMGateway, batch_size: int = 300, round_index: int = 1,
                stage: str = "content") -> GroupingRound:
    return CategoryGrouper(gateway, stage, batch_size).group_round(keywords, round_index)


def group_cascade(keywords: list[str], gateway: LLMGateway, target_count: int, batch_size: int = 300,
                  max_rounds: int = 5, stage: str = "content") -> list[GroupingRound]:
    return CategoryGrouper(gateway, stage, batch_size, max_rounds).group_cascade(keywords, target_count)


def final_categories(keywords: list[str], rounds: list[GroupingRound]) -> list[str]:
    """Labels left after the cascade, in canonical order. Labels with nothing to embed are dropped."""
    labels = rounds[-1].output_groups if rounds else _dedupe(keywords)
    return [label for label in canonical_order(labels) if clean_text(label)]


# --------------- Assignment ---------------- #
def assign_keywords(keywords: list[str], categories: list[str], provider: EmbeddingProvider) -> dict[str, str]:
    """Maps every keyword to the category whose label embedding is closest; ties go to the earlier category."""
    if not categories:
        raise EmptyKeywordSet("assign_keywords needs at least one category.")
    unique = _dedupe(keywords)
    if not unique:
        return {}
    sims = cosine_matrix(provider.embed_batch(unique), provider.embed_batch(categories))
    best = np.argmax(sims, axis=1)
    return {kw: categories[int(b)] for kw, b in zip(unique, best)}


def assign_video_categories(per_video: dict[str, list[ScoredKeyword]], keyword_map: dict[str, str],
                            categories: list[str], strict: bool = False) -> tuple[dict[str, str], list[str]]:
    """
    A video's category is the most frequent category of its keywords; ties go to the higher summed keyword
    score, then to category order. Returns (video -> category, videos without keywords).
    With `strict`, a video without keywords raises VideoWithoutKeywords instead of being excluded.
    """
    order = {c: i for i, c in enumerate(categories)}
    assigned: dict[str, str] = {}
    excluded: list[str] = []
    for video_id, keywords in per_video.items():
        if not keywords:
            if strict:
                raise VideoWithoutKeywords(f"Video {video_id} has no keywords to categorize.")
            logger.info(f"{video_id} has no keywords; left out of the cross-tab.")
            excluded.append(video_id)
            continue
        counts: Counter = Counter()
        scores: dict[str, float] = defaultdict(float)
        for kw in keywords:
            category = keyword_map[kw.phrase]
            counts[category] += 1
            scores[category] += kw.score
        assigned[video_id] = min(counts, key=lambda c: (-counts[c], -scores[c], order.get(c, len(order)), c))
    return assigned, excluded


# --------------- Corpus-level run ---------------- #
@dataclass
class GroupingOutcome:
    rounds: dict[str, list[GroupingRound]]
    assignment: CategoryAssignment
    audit: list[dict]


def _per_video(frame: pd.DataFrame, section: str, video_ids: list[str]) -> dict[str, list]:
    per_video: dict[str, list] = {vid: [] for vid in video_ids}
    for row in frame[frame["section"] == section].itertuples():
        if row.video_id in per_video:
            per_video[row.video_id].append(ScoredKeyword(row.phrase, float(row.score)))
    return per_video


def group_corpus(keywords: pd.DataFrame, has_ad: dict[str, bool], gateway: LLMGateway, provider: EmbeddingProvider,
                 config) -> GroupingOutcome:
    """
    Runs the content and ad cascades over the corpus keyword frame (`video_id, section, phrase, score`) and
    assigns keywords and videos to the final categories. `has_ad` lists every video in scope.
    """
    video_ids = sorted(has_ad, key=natural_key)
    targets = {"content": config.content_target, "ad": config.ad_target}
    assignment = CategoryAssignment()
    rounds: dict[str, list[GroupingRound]] = {}
    audit: list[dict] = []
    for stage in STAGES:
        phrases = _dedupe(keywords.loc[keywords["section"] == stage, "phrase"])
        grouper = CategoryGrouper(gateway, stage, config.group_batch_size, config.max_rounds,
                                  config.max_prompt_chars, config.group_prompt_path)
        rounds[stage] = grouper.group_cascade(phrases, targets[stage]) if phrases else []
        audit += grouper.audit
        categories = final_categories(phrases, rounds[stage])
        if phrases and not categories:
            raise EmptyKeywordSet(f"The {stage} cascade left no usable category label for {len(phrases)} keywords.")
        keyword_map = assign_keywords(phrases, categories, provider) if phrases else {}
        stage_videos = video_ids if stage == "content" else [v for v in video_ids if has_ad[v]]
        videos, excluded = assign_video_categories(_per_video(keywords, stage, stage_videos), keyword_map, categories)
        if stage == "content":
            assignment.content_keywords, assignment.video_content = keyword_map, videos
            assignment.content_categories = categories
            assignment.uncategorized = excluded
        else:
            assignment.ad_keywords, assignment.video_ad = keyword_map, videos
            assignment.ad_categories = categories
            assignment.uncategorized = sorted(set(assignment.uncategorized) | set(excluded), key=natural_key)
    return GroupingOutcome(rounds, assignment, audit)


# --------------- Persistence ---------------- #
def _categories_csv(keyword_map: dict[str, str]) -> str:
    return pd.DataFrame(list(keyword_map.items()), columns=["keyword", "category"]).to_csv(index=False)


def save_grouping(outcome: GroupingOutcome, directory: str) -> None:
    a = outcome.assignment
    atomic_write_text(os.path.join(directory, "audit.jsonl"),
                      "".join(json.dumps(r, sort_keys=True) + "\n" for r in outcome.audit))
    atomic_write_text(os.path.join(directory, "content_categories.csv"), _categories_csv(a.content_keywords))
    atomic_write_text(os.path.join(directory, "ad_categories.csv"), _categories_csv(a.ad_keywords))
    videos = sorted(set(a.video_content) | set(a.video_ad) | set(a.uncategorized), key=natural_key)
    frame = pd.DataFrame([[v, a.video_content.get(v, ""), a.video_ad.get(v, "")] for v in videos],
                         columns=["video_id", "content_category", "ad_category"])
    atomic_write_text(os.path.join(directory, "video_categories.csv"), frame.to_csv(index=False))
    atomic_write_json(os.path.join(directory, "cascade.json"), {
        "content_categories": a.content_categories,
        "ad_categories": a.ad_categories,
        "uncategorized": a.uncategorized,
        "rounds": {stage: [r.to_dict() for r in rounds] for stage, rounds in outcome.rounds.items()},
    })


def _read_csv(directory: str, name: str) -> pd.DataFrame:
    return pd.read_csv(os.path.join(directory, name), dtype=str, keep_default_na=False)


def load_assignment(directory: str) -> CategoryAssignment:
    """Reads back the category maps written by save_grouping."""
    summary = read_json(os.path.join(directory, "cascade.json"))
    content = _read_csv(directory, "content_categories.csv")
    ad = _read_csv(directory, "ad_categories.csv")
    videos = _read_csv(directory, "video_categories.csv")
    return CategoryAssignment(
        content_keywords=dict(zip(content["keyword"], content["category"])),
        ad_keywords=dict(zip(ad["keyword"], ad["category"])),
        video_content={r.video_id: r.content_category for r in videos.itertuples() if r.content_category},
        video_ad={r.video_id: r.ad_category for r in videos.itertuples() if r.ad_category},
        uncategorized=list(summary["uncategorized"]),
        content_categories=list(summary["content_categories"]),
        ad_categories=list(summary["ad_categories"]),
    )
