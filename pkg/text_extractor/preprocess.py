"""
preprocess.py

Text preprocessing: special-character removal, stopword removal and lemmatization.

Two profiles:
- LightClean: clean_text + tokenize. Used before ad detection so the LLM still sees natural phrasing.
- FullPipeline: clean_text + tokenize + stopword removal + lemmatization. Used before keyword extraction.

The stopword list, lemma table and suffix rules are plain-text files under `config/`.
"""

import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from utils.utils import load_text_list, resolve_data_path

NON_TOKEN_CHARS = re.compile(r"[^a-z0-9'\s]+")
WHITESPACE = re.compile(r"\s+")
APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})
MIN_STEM = 3

DEFAULT_STOPWORDS = "config/stopwords.txt"
DEFAULT_LEMMAS = "config/lemmas.txt"
DEFAULT_SUFFIXES = "config/lemma_suffixes.txt"


class Profile(str, Enum):
    LIGHT_CLEAN = "light"
    FULL_PIPELINE = "full"


@dataclass(frozen=True)
class CleanDoc:
    original: str
    tokens: tuple[str, ...]
    profile: Profile

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class LemmaTable:
    """Inflected form → lemma lookups, then ordered suffix rules. Table entries win over rules."""
    table: dict[str, str] = field(default_factory=dict)
    suffix_rules: tuple[tuple[str, str], ...] = ()

    def lookup(self, token: str) -> str:
        if token in self.table:
            return self.table[token]
        for suffix, replacement in self.suffix_rules:
            if token.endswith(suffix) and len(token) - len(suffix) >= MIN_STEM:
                return token[: len(token) - len(suffix)] + replacement
        return token

    @classmethod
    def from_files(cls, table_path: str = DEFAULT_LEMMAS, suffix_path: str = DEFAULT_SUFFIXES) -> "LemmaTable":
        table: dict[str, str] = {}
        for line in load_text_list(resolve_data_path(table_path)):
            inflected, lemma = line.split("\t")
            table[inflected.strip().lower()] = lemma.strip().lower()
        rules: list[tuple[str, str]] = []
        for line in load_text_list(resolve_data_path(suffix_path)):
            suffix, _, replacement = line.partition("\t")
            rules.append((suffix.strip().lower(), replacement.strip().lower()))
        return cls(table, tuple(rules))


@lru_cache(maxsize=8)
def load_stopwords(path: str = DEFAULT_STOPWORDS) -> frozenset[str]:
    return frozenset(w.strip().lower() for w in load_text_list(resolve_data_path(path)))


@lru_cache(maxsize=8)
def load_lemma_table(table_path: str = DEFAULT_LEMMAS, suffix_path: str = DEFAULT_SUFFIXES) -> LemmaTable:
    return LemmaTable.from_files(table_path, suffix_path)


@dataclass(frozen=True)
class Lexicon:
    """Word-list files used by FullPipeline; relative paths resolve against the repo root."""
    stopwords_path: str = DEFAULT_STOPWORDS
    lemma_path: str = DEFAULT_LEMMAS
    suffix_path: str = DEFAULT_SUFFIXES

    @classmethod
    def from_run_config(cls, config) -> "Lexicon":
        return cls(config.stopwords_path, config.lemma_path, config.lemma_suffix_path)

    def stopwords(self) -> frozenset[str]:
        return load_stopwords(self.stopwords_path)

    def table(self) -> LemmaTable:
        return load_lemma_table(self.lemma_path, self.suffix_path)


def clean_text(s: str) -> str:
    """Lowercases, replaces anything but letters, digits, apostrophes and whitespace by a space, collapses whitespace."""
    s = unicodedata.normalize("NFKD", s.translate(APOSTROPHES))
    s = "".join(c for c in s if not unicodedata.combining(c)).lower()
    s = NON_TOKEN_CHARS.sub(" ", s)
    return WHITESPACE.sub(" ", s).strip()


def tokenize(s: str) -> list[str]:
    cleaned = clean_text(s)
    return cleaned.split(" ") if cleaned else []


def remove_stopwords(tokens: list[str], stopwords: frozenset[str] | None = None) -> list[str]:
    stopwords = load_stopwords() if stopwords is None else stopwords
    return [t for t in tokens if t not in stopwords]


def lemmatize(tokens: list[str], table: LemmaTable | None = None) -> list[str]:
    """Replaces each token by its lemma. Lookups are repeated until the token no longer changes."""
    table = load_lemma_table() if table is None else table
    lemmas: list[str] = []
    for token in tokens:
        seen = {token}
        lemma = table.lookup(token)
        while lemma not in seen:
            seen.add(lemma)
            lemma = table.lookup(lemma)
        lemmas.append(lemma)
    return lemmas


def preprocess(s: str, profile: Profile | str = Profile.FULL_PIPELINE,
               stopwords: frozenset[str] | None = None, table: LemmaTable | None = None,
               lexicon: Lexicon | None = None) -> CleanDoc:
    """Explicit `stopwords`/`table` win over `lexicon`; with neither, the bundled lists are used."""
    profile = Profile(profile)
    tokens = tokenize(s)
    if profile is Profile.FULL_PIPELINE:
        lexicon = lexicon or Lexicon()
        stopwords = lexicon.stopwords() if stopwords is None else stopwords
        table = lexicon.table() if table is None else table
        # lookups chain to a fixed point: meetings -> meeting -> meet
        tokens = lemmatize(remove_stopwords(tokens, stopwords), table)
        # a lemma can land on a stopword (e.g. an inflected auxiliary)
        tokens = remove_stopwords(tokens, stopwords)
    return CleanDoc(s, tuple(tokens), profile)
