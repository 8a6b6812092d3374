"""
embeddings.py

Embedding providers for keyword extraction and category assignment.

- `RemoteEmbedder` calls an OpenAI-compatible embeddings endpoint, batching requests and caching every
  vector on disk keyed by (model, text); retries and rate limiting follow the chat gateway.
- `HashEmbedder` is the deterministic offline provider: every token hashes to a pseudo-random unit vector
  and a text embeds to the normalized mean of its token vectors, so texts sharing tokens get higher cosine.

Both return a 2-D numpy array with one row per input text.

Dependencies:
- numpy
- openai
"""

import hashlib
import json
import logging
import os
import threading
from typing import Protocol

import numpy as np
import openai
from openai import OpenAI

from LLM_interaction.gpt_client import RetryPolicy, TokenBucket, call_with_retry, translate_openai_error
from text_extractor.preprocess import tokenize
from utils.errors import DimensionMismatch, ZeroVector
from utils.utils import atomic_write_json, read_json

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


class EmbeddingProvider(Protocol):
    dim: int | None

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        ...


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit-L2 rows (or vector). Raises ZeroVector on an all-zero input."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroVector("Cannot normalize an all-zero vector.")
    return v / norms


def mean_embedding(vectors: np.ndarray) -> np.ndarray:
    """Normalized mean of the rows of `vectors`."""
    return normalize(np.asarray(vectors, dtype=float).mean(axis=0))


class HashEmbedder:
    def __init__(self, dim: int = 256, seed: int = 1234):
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vector = self._token_cache.get(token)
        if vector is None:
            digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vector = normalize(rng.standard_normal(self.dim))
            self._token_cache[token] = vector
        return vector

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ZeroVector(f"Text {text!r} has no tokens to embed.")
        return mean_embedding(np.vstack([self.token_vector(t) for t in tokens]))

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


class RemoteEmbedder:
    """Embeddings endpoint client with a per-text disk cache under `cache_dir`."""

    def __init__(self, client: OpenAI, model: str, cache_dir: str, policy: RetryPolicy | None = None,
                 limiter: TokenBucket | None = None, batch_size: int = 256):
        self.client = client
        self.model = model
        self.cache_dir = cache_dir
        self.policy = policy or RetryPolicy()
        self.limiter = limiter
        self.batch_size = batch_size
        self.dim: int | None = None
        self._lock = threading.Lock()
        os.makedirs(cache_dir, exist_ok=True)

    def _path(self, text: str) -> str:
        key = hashlib.sha256(json.dumps([self.model, text], ensure_ascii=False).encode("utf-8")).hexdigest()
        return os.path.join(self.cache_dir, f"{key}.json")

    def _request(self, batch: list[str]) -> list[list[float]]:
        if self.limiter is not None:
            self.limiter.acquire()
        try:
            response = self.client.embeddings.create(model=self.model, input=batch)
        except openai.OpenAIError as e:
            raise translate_openai_error(e) from e
        return [d.embedding for d in sorted(response.data, key=lambda d: d.index)]

    def _check_dim(self, vector: list[float]) -> None:
        with self._lock:
            if self.dim is None:
                self.dim = len(vector)
            elif len(vector) != self.dim:
                raise DimensionMismatch(f"Embedding of size {len(vector)} from {self.model}; expected {self.dim}.")

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        vectors: dict[str, list[float]] = {}
        missing: list[str] = []
        for text in dict.fromkeys(texts):
            path = self._path(text)
            if os.path.exists(path):
                vectors[text] = read_json(path)["embedding"]
            else:
                missing.append(text)
        if missing:
            logger.debug(f"Embedding {len(missing)} new texts with {self.model} ({len(vectors)} cached).")
        for i in range(0, len(missing), self.batch_size):
            batch = missing[i:i + self.batch_size]
            for text, vector in zip(batch, call_with_retry(self.policy, self._request, batch)):
                atomic_write_json(self._path(text), {"model": self.model, "text": text, "embedding": vector})
                vectors[text] = vector
        for vector in vectors.values():
            self._check_dim(vector)
        if not texts:
            return np.zeros((0, self.dim or 0))
        return np.asarray([vectors[t] for t in texts], dtype=float)


def build_embedder(config) -> EmbeddingProvider:
    """Embedding provider matching `config.backend`: RemoteEmbedder for 'remote', HashEmbedder for 'mock'."""
    if config.backend == "mock":
        return HashEmbedder(config.embedding_dim, config.embedding_seed)
    client = OpenAI(base_url=config.api_base_url, api_key=config.api_key(), max_retries=0)
    return RemoteEmbedder(
        client, config.embedding_model, os.path.join(config.cache_dir, "embeddings"),
        policy=RetryPolicy(config.max_attempts, config.backoff_base, config.backoff_max),
        limiter=TokenBucket(config.requests_per_second) if config.requests_per_second > 0 else None,
    )
