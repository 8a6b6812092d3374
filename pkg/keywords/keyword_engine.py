"""
keyword_engine.py

Embedding-based keyphrase extraction.

Candidates are the distinct n-grams of the preprocessed (FullPipeline) document. Each candidate is scored by
cosine similarity between its embedding and the document embedding; the selection is either the plain
top-k, Maximal Marginal Relevance (diversity > 0) or MaxSum (least mutually similar k-subset of the best
`maxsum_pool` candidates).

Keywords are extracted separately for the ad and the content sections of each video and stored as one CSV
per video: `video_id, section, phrase, score`.

Dependencies:
- numpy
- pandas
"""

import itertools
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ad_detection.detector import DetectionResult, ad_entry_indexes
from LLM_interaction.embeddings import EmbeddingProvider, mean_embedding, normalize
from text_extractor.captions import Transcript
from text_extractor.preprocess import CleanDoc, Lexicon, Profile, preprocess
from utils.errors import CombinatorialLimit, DimensionMismatch, EmptyAfterPreprocess, ZeroVector
from utils.utils import atomic_write_text, natural_key

logger = logging.getLogger(__name__)

SECTIONS = ("ad", "content")
CSV_COLUMNS = ["video_id", "section", "phrase", "score"]
COMBINATION_CHUNK = 20_000


@dataclass(frozen=True)
class ScoredKeyword:
    phrase: str
    score: float


@dataclass(frozen=True)
class ExtractionConfig:
    ngram_min: int = 1
    ngram_max: int = 2
    top_k: int = 10
    diversity: float = 0.0
    use_maxsum: bool = False
    maxsum_pool: int = 20
    maxsum_cap: int = 200_000
    max_chars: int = 8_000  # document chunk size for embedding
    profile: Profile = Profile.FULL_PIPELINE
    lexicon: Lexicon = Lexicon()

    def __post_init__(self):
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ValueError("Expected 1 <= ngram_min <= ngram_max.")
        if self.top_k < 1 or self.maxsum_pool < self.top_k:
            raise ValueError("Expected top_k >= 1 and maxsum_pool >= top_k.")
        if not 0.0 <= self.diversity <= 1.0:
            raise ValueError("diversity must be in [0, 1].")

    @classmethod
    def from_run_config(cls, config) -> "ExtractionConfig":
        return cls(config.ngram_min, config.ngram_max, config.top_k, config.diversity, config.use_maxsum,
                   config.maxsum_pool, config.maxsum_cap, profile=Profile(config.keyword_profile),
                   lexicon=Lexicon.from_run_config(config))


def generate_candidates(doc: CleanDoc | list[str], cfg: ExtractionConfig = ExtractionConfig()) -> list[str]:
    """Distinct n-grams of lengths [ngram_min, ngram_max], in order of first occurrence (shorter first at a position)."""
    tokens = list(doc.tokens if isinstance(doc, CleanDoc) else doc)
    candidates: dict[str, None] = {}
    for i in range(len(tokens)):
        for n in range(cfg.ngram_min, cfg.ngram_max + 1):
            if i + n <= len(tokens):
                candidates.setdefault(" ".join(tokens[i:i + n]))
    return list(candidates)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionMismatch(f"Cannot compare vectors of shapes {u.shape} and {v.shape}.")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("Cosine is undefined for an all-zero vector.")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of `a` and the rows of `b`."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"Embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}.")
    return np.clip(normalize(a) @ normalize(b).T, -1.0, 1.0)


def top_k_indices(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k best scores, descending; equal scores keep their original order."""
    return [int(i) for i in np.argsort(-np.asarray(scores, dtype=float), kind="stable")[:k]]


# --------------- Diversification ---------------- #
def mmr_select_from_similarities(doc_sims: np.ndarray, cand_sims: np.ndarray, k: int, diversity: float) -> list[int]:
    """
    Greedy Maximal Marginal Relevance. The first pick is the candidate closest to the document; each next pick
    maximizes (1 - diversity) * sim(c, doc) - diversity * max_s sim(c, s) over the selected s.
    Ties go to the earlier candidate.
    """
    doc_sims = np.asarray(doc_sims, dtype=float)
    k = min(k, len(doc_sims))
    if k <= 0:
        return []
    selected = [int(np.argmax(doc_sims))]
    remaining = [i for i in range(len(doc_sims)) if i != selected[0]]
    while len(selected) < k:
        rest = np.asarray(remaining)
        redundancy = cand_sims[np.ix_(rest, selected)].max(axis=1)
        scores = (1 - diversity) * doc_sims[rest] - diversity * redundancy
        best = int(rest[int(np.argmax(scores))])
        selected.append(best)
        remaining.remove(best)
    return selected


def mmr_select(doc_vec: np.ndarray, cand_vecs: np.ndarray, k: int, diversity: float) -> list[int]:
    doc_sims = cosine_matrix(cand_vecs, doc_vec)[:, 0]
    return mmr_select_from_similarities(doc_sims, cosine_matrix(cand_vecs, cand_vecs), k, diversity)


def maxsum_select_from_similarities(doc_sims: np.ndarray, cand_sims: np.ndarray, k: int, pool: int,
                                    cap: int = 200_000) -> list[int]:
    """
    Among all k-subsets of the `pool` candidates closest to the document, returns the one with the smallest
    sum of pairwise similarities; ties go to the higher summed document similarity, then to the earlier subset.
    The result is ordered by document similarity.
    """
    doc_sims = np.asarray(doc_sims, dtype=float)
    pool_idx = np.asarray(top_k_indices(doc_sims, min(pool, len(doc_sims))), dtype=int)
    k = min(k, len(pool_idx))
    if k <= 0:
        return []
    subsets = math.comb(len(pool_idx), k)
    if subsets > cap:
        raise CombinatorialLimit(f"C({len(pool_idx)}, {k}) = {subsets} subsets exceeds the cap of {cap}.")

    sub = np.asarray(cand_sims, dtype=float)[np.ix_(pool_idx, pool_idx)]
    pool_doc = doc_sims[pool_idx]
    rows, cols = np.triu_indices(k, 1)
    best_key, best_combo = None, None
    combos = itertools.combinations(range(len(pool_idx)), k)
    offset = 0
    while True:
        chunk = np.asarray(list(itertools.islice(combos, COMBINATION_CHUNK)), dtype=int)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(-1, k)
        pair_sum = sub[chunk[:, rows], chunk[:, cols]].sum(axis=1)
        doc_sum = pool_doc[chunk].sum(axis=1)
        order = np.lexsort((np.arange(len(chunk)), -doc_sum, pair_sum))
        i = int(order[0])
        key = (float(pair_sum[i]), -float(doc_sum[i]), offset + i)
        if best_key is None or key < best_key:
            best_key, best_combo = key, chunk[i]
        offset += len(chunk)
    return [int(pool_idx[p]) for p in best_combo]


def maxsum_select(doc_vec: np.ndarray, cand_vecs: np.ndarray, k: int, pool: int, cap: int = 200_000) -> list[int]:
    doc_sims = cosine_matrix(cand_vecs, doc_vec)[:, 0]
    return maxsum_select_from_similarities(doc_sims, cosine_matrix(cand_vecs, cand_vecs), k, pool, cap)


# --------------- Extraction ---------------- #
def _chunks(tokens: tuple[str, ...], max_chars: int) -> list[str]:
    chunks, current, size = [], [], 0
    for token in tokens:
        if current and size + len(token) + 1 > max_chars:
            chunks.append(" ".join(current))
            current, size = [], 0
        current.append(token)
        size += len(token) + 1
    if current:
        chunks.append(" ".join(current))
    return chunks


def embed_document(doc: CleanDoc, provider: EmbeddingProvider, max_chars: int = 8_000) -> np.ndarray:
    """Embeds the document in chunks of at most `max_chars` characters and returns the normalized mean."""
    return mean_embedding(provider.embed_batch(_chunks(doc.tokens, max_chars)))


def extract_keywords(doc_text: str, cfg: ExtractionConfig, provider: EmbeddingProvider) -> list[ScoredKeyword]:
    doc = preprocess(doc_text, cfg.profile, lexicon=cfg.lexicon)
    if not doc.tokens:
        raise EmptyAfterPreprocess(f"Nothing left to extract from after preprocessing: {doc_text[:80]!r}")
    candidates = generate_candidates(doc, cfg)
    doc_vec = embed_document(doc, provider, cfg.max_chars)
    cand_vecs = provider.embed_batch(candidates)
    doc_sims = cosine_matrix(cand_vecs, doc_vec)[:, 0]

    if cfg.use_maxsum:
        selected = maxsum_select_from_similarities(doc_sims, cosine_matrix(cand_vecs, cand_vecs), cfg.top_k,
                                                   cfg.maxsum_pool, cfg.maxsum_cap)
    elif cfg.diversity > 0:
        selected = mmr_select_from_similarities(doc_sims, cosine_matrix(cand_vecs, cand_vecs), cfg.top_k, cfg.diversity)
    else:
        selected = top_k_indices(doc_sims, cfg.top_k)
    return [ScoredKeyword(candidates[i], float(doc_sims[i])) for i in selected]


def split_sections(transcript: Transcript, detection: DetectionResult | None) -> dict[str, str]:
    """Ad text (entries under non-Rejected spans) and content text (all other entries) of one video."""
    ad_idx = ad_entry_indexes(detection) if detection is not None else set()
    ad = [e.text for i, e in enumerate(transcript.entries) if i in ad_idx]
    content = [e.text for i, e in enumerate(transcript.entries) if i not in ad_idx]
    return {"ad": " ".join(ad), "content": " ".join(content)}


def extract_section_keywords(transcript: Transcript, detection: DetectionResult | None, cfg: ExtractionConfig,
                             provider: EmbeddingProvider) -> dict[str, list[ScoredKeyword]]:
    keywords: dict[str, list[ScoredKeyword]] = {}
    for section, text in split_sections(transcript, detection).items():
        keywords[section] = []
        if not text.strip():
            continue
        try:
            keywords[section] = extract_keywords(text, cfg, provider)
        except EmptyAfterPreprocess:
            logger.info(f"{transcript.video_id}: {section} text has no keywords after preprocessing.")
    return keywords


# --------------- Persistence ---------------- #
def keywords_frame(video_id: str, keywords: dict[str, list[ScoredKeyword]]) -> pd.DataFrame:
    rows = [[video_id, section, kw.phrase, kw.score] for section in SECTIONS for kw in keywords.get(section, [])]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def save_keywords(video_id: str, keywords: dict[str, list[ScoredKeyword]], directory: str) -> str:
    path = os.path.join(directory, f"{video_id}.csv")
    atomic_write_text(path, keywords_frame(video_id, keywords).to_csv(index=False, float_format="%.6f"))
    return path


def _read_keyword_csv(path: str) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"video_id": str, "section": str, "phrase": str}, keep_default_na=False)
    return df.reindex(columns=CSV_COLUMNS)


def load_keywords(path: str) -> dict[str, list[ScoredKeyword]]:
    df = _read_keyword_csv(path)
    return {section: [ScoredKeyword(r.phrase, float(r.score)) for r in df[df["section"] == section].itertuples()]
            for section in SECTIONS}


def load_all_keywords(directory: str, video_ids: list[str] | None = None) -> pd.DataFrame:
    """All per-video keyword CSVs in one frame, ordered by video id."""
    frames = []
    if os.path.isdir(directory):
        for filename in sorted(os.listdir(directory), key=natural_key):
            if filename.endswith(".csv") and (video_ids is None or filename[:-4] in video_ids):
                frames.append(_read_keyword_csv(os.path.join(directory, filename)))
    if not frames:
        return pd.DataFrame(columns=CSV_COLUMNS)
    return pd.concat(frames, ignore_index=True)
