import json
import logging
import os
import re
import sys
import tempfile

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def resolve_data_path(path: str) -> str:
    """Resolves a bundled data path (e.g. 'config/stopwords.txt') against the repo root if it is not found as given."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    return os.path.join(REPO_ROOT, path)


def load_config(file_path: str) -> dict:
    """Load a JSON (or flat TOML) file and return its contents as a dictionary."""
    if file_path.lower().endswith(".toml"):
        with open(file_path, "rb") as f:
            return tomllib.load(f)
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)


def load_text_list(file_path: str) -> list[str]:
    """
    Load a plain-text data file with one entry per line.
    Blank lines and lines starting with '#' are skipped.
    """
    entries: list[str] = []
    with open(file_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            entries.append(line)
    return entries


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def atomic_write_bytes(path: str, data: bytes) -> None:
    """
    Writes `data` to `path` through a temporary file in the same directory and an atomic rename,
    so readers never observe a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def extract_numeric(name: str):
    """
    Extract the first numeric run from a name (e.g., 'vid12' → 12).
    Used for natural sorting of video ids.
    """
    match = re.search(r'\d+', name)
    return int(match.group()) if match else float('inf')


def natural_key(name: str) -> tuple:
    return (re.sub(r'\d+', '', name), extract_numeric(name), name)
