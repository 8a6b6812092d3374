"""
run_config.py

Provides the `RunConfig` dataclass: every tunable of the pipeline in one flat key/value document.

Values come from `config/run_config.json` (or a flat `.toml` file), and any key can be overridden
from the command line. API keys are never stored here: `api_key_env` only names the environment
variable that holds the key, read at call time after `load_dotenv()`.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.utils import load_config, resolve_data_path

DEFAULT_CONFIG_PATH = "config/run_config.json"
PROFILES = ("light", "full")


@dataclass
class RunConfig:
    model_id: str = "gpt-4o-2024-08-06"
    api_base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    backend: str = "mock"
    work_dir: str = "work"
    cache_dir: str = "work/cache"
    ad_prompt_path: str = "config/ad_prompt.txt"
    group_prompt_path: str = "config/group_prompt.txt"
    stopwords_path: str = "config/stopwords.txt"
    lemma_path: str = "config/lemmas.txt"
    lemma_suffix_path: str = "config/lemma_suffixes.txt"
    # Preprocessing profile per stage
    detect_profile: str = "light"
    keyword_profile: str = "full"
    # Ad detection
    max_prompt_chars: int = 100_000
    window_overlap: float = 60.0
    time_tol: float = 5.0
    sim_tol: float = 0.8
    sim_floor: float = 0.5
    merge_gap: float = 3.0
    mock_markers: list[str] = field(default_factory=lambda: ["sponsored by", "use code", "check out our sponsor"])
    # Keyword extraction
    ngram_min: int = 1
    ngram_max: int = 2
    top_k: int = 10
    diversity: float = 0.5
    use_maxsum: bool = False
    maxsum_pool: int = 20
    maxsum_cap: int = 200_000
    embedding_model: str = "text-embedding-3-small"
    embedding_dim: int = 256
    embedding_seed: int = 1234
    # Grouping
    content_target: int = 9
    ad_target: int = 4
    group_batch_size: int = 300
    max_rounds: int = 5
    # Execution
    parallelism: int = 4
    max_in_flight: int = 4
    requests_per_second: float = 5.0
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_max: float = 60.0
    # Evaluation
    iou_threshold: float = 0.5
    gold_path: str | None = None

    @classmethod
    def from_file(cls, path: str | None = None, overrides: dict | None = None) -> "RunConfig":
        """Loads the config file (if any), applies overrides and validates the result."""
        values: dict = {}
        if path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"Config file {path} not found.")
            values.update(load_config(path))
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        config = cls(**values)
        config.validate()
        return config

    def validate(self) -> None:
        if self.parallelism < 1 or self.max_in_flight < 1:
            raise ConfigError("parallelism and max_in_flight must be >= 1.")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError("temperature must be in [0, 2].")
        if not 0.0 <= self.sim_floor <= self.sim_tol <= 1.0:
            raise ConfigError("Expected 0 <= sim_floor <= sim_tol <= 1.")
        if self.backend not in ("remote", "mock"):
            raise ConfigError(f"Unknown backend '{self.backend}'. Use 'remote' or 'mock'.")
        if self.detect_profile not in PROFILES or self.keyword_profile not in PROFILES:
            raise ConfigError(f"Profiles must be one of {PROFILES}.")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ConfigError("Expected 1 <= ngram_min <= ngram_max.")
        if self.top_k < 1 or self.maxsum_pool < self.top_k:
            raise ConfigError("Expected top_k >= 1 and maxsum_pool >= top_k.")
        if not 0.0 <= self.diversity <= 1.0:
            raise ConfigError("diversity must be in [0, 1].")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError("iou_threshold must be in (0, 1].")
        if self.content_target < 1 or self.ad_target < 1 or self.group_batch_size < 1:
            raise ConfigError("Grouping targets and batch size must be >= 1.")
        for path in (self.ad_prompt_path, self.group_prompt_path, self.stopwords_path, self.lemma_path,
                     self.lemma_suffix_path):
            if not os.path.isfile(resolve_data_path(path)):
                raise ConfigError(f"Data file {path} not found.")
        for directory in (self.work_dir, self.cache_dir):
            try:
                os.makedirs(directory, exist_ok=True)
            except OSError as e:
                raise ConfigError(f"Cannot create directory {directory}: {e}") from e

    def api_key(self) -> str:
        """Reads the API key from the environment. Only needed for the remote backend."""
        load_dotenv()
        key = os.getenv(self.api_key_env)
        if not key:
            raise ConfigError(f"{self.api_key_env} not set in environment variables.")
        return key

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_override(assignment: str) -> tuple[str, object]:
    """Parses a `key=value` command-line override. Values are read as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"Override '{assignment}' must look like key=value.")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
