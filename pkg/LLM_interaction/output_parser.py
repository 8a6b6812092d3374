"""
output_parser.py

Tolerant parsing of LLM replies.

The ad prompt asks for a list of Python-style dictionaries ({'text': ..., 'start': ..., 'duration': ...})
or the literal None; the grouping prompt asks for a bare bracketed list. Replies in the wild wrap the
list in Markdown fences or prose, mix quote styles, leave trailing commas or get cut off, so parsing is:

1. strip code fences
2. locate the first well-formed bracketed list (quote-aware)
3. read it as JSON, then as a Python literal, then after light repairs
4. validate each record
"""

import ast
import json
import logging
import math
import re
from dataclasses import dataclass

from utils.errors import RecordInvalid, Unparseable

logger = logging.getLogger(__name__)

FENCE = re.compile(r"```[\w-]*[ \t]*\n?(.*?)```", re.DOTALL)
OPEN_FENCE = re.compile(r"```[\w-]*[ \t]*\n?(.*)$", re.DOTALL)
NONE_TOKEN = re.compile(r"(?<!\w)(None|null|NONE)(?!\w)")
RECORD_LIST_START = re.compile(r"\[\s*[\{\]]")
TRAILING_COMMA = re.compile(r",\s*([\]}])")
UNQUOTED_KEY = re.compile(r"([{,]\s*)([A-Za-z_][A-Za-z0-9_]*)(\s*:)")
JSON_LITERALS = {"null": "None", "true": "True", "false": "False"}
QUOTES = ("'", "\"")
QUOTE_OPENERS = "[{,:"
QUOTE_CLOSERS = ",]}:\n"


class NoAdType:
    """Sentinel for a reply saying there is no ad."""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoAd"

    def __bool__(self) -> bool:
        return False


NO_AD = NoAdType()


@dataclass(frozen=True)
class AdRecord:
    text: str
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


def strip_fences(content: str) -> str:
    match = FENCE.search(content)
    if match:
        return match.group(1).strip()
    match = OPEN_FENCE.search(content)  # fence opened but never closed (truncated reply)
    if match:
        return match.group(1).strip()
    return content.strip()


def _next_significant(text: str, i: int) -> str:
    """First character after `text[i]` that is not a space or tab; '' at the end."""
    for c in text[i + 1:]:
        if c not in " \t":
            return c
    return ""


def _closes_quote(text: str, i: int, quote: str) -> bool:
    # an apostrophe inside a word (children's) is text, not the end of the string
    return text[i] == quote and _next_significant(text, i) in QUOTE_CLOSERS


def _scan_brackets(text: str, start: int) -> tuple[int | None, int | None]:
    """
    Scans from `text[start]` (an opener) and returns (end_index, last_complete_child_end).
    end_index is None when the outer bracket is never closed. A quote opens only where a value can
    start (after a bracket, brace, comma or colon) and closes only before a separator.
    """
    depth = 0
    quote = None
    escape = False
    previous = ""
    last_child_end = None
    for i in range(start, len(text)):
        c = text[i]
        if quote:
            if escape:
                escape = False
            elif c == "\\":
                escape = True
            elif _closes_quote(text, i, quote):
                quote, previous = None, c
            continue
        if c in QUOTES and previous in QUOTE_OPENERS:
            quote = c
        elif c in "[{":
            depth += 1
        elif c in "]}":
            depth -= 1
            if depth == 1 and c == "}":
                last_child_end = i
            if depth == 0:
                return i, last_child_end
        if not c.isspace():
            previous = c
    return None, last_child_end


def _repair(text: str) -> str:
    text = TRAILING_COMMA.sub(r"\1", text)
    text = UNQUOTED_KEY.sub(r'\1"\2"\3', text)
    return re.sub(r"\b(null|true|false)\b", lambda m: JSON_LITERALS[m.group(1)], text)


def load_literal(text: str):
    """Reads `text` as JSON, then as a Python literal, then after repairs. Raises Unparseable."""
    for candidate in (text, TRAILING_COMMA.sub(r"\1", text)):
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            pass
    for candidate in (text, _repair(text)):
        try:
            return ast.literal_eval(candidate)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            pass
    raise Unparseable(f"Could not read list: {text[:200]!r}")


def _as_seconds(value, field_name: str, fragment: str) -> float:
    if isinstance(value, bool):
        raise RecordInvalid(f"'{field_name}' is not numeric.", fragment)
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise RecordInvalid(f"'{field_name}' is not numeric.", fragment)
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise RecordInvalid(f"'{field_name}' is not numeric.", fragment)
    if value < 0:
        raise RecordInvalid(f"'{field_name}' is negative.", fragment)
    return float(value)


def _validate_record(item) -> AdRecord:
    fragment = repr(item)[:200]
    if not isinstance(item, dict):
        raise RecordInvalid("Record is not a dictionary.", fragment)
    for key in ("text", "start", "duration"):
        if key not in item:
            raise RecordInvalid(f"Record missing '{key}'.", fragment)
    text = item["text"]
    if not isinstance(text, str) or not text.strip():
        raise RecordInvalid("Record text is empty.", fragment)
    return AdRecord(text, _as_seconds(item["start"], "start", fragment), _as_seconds(item["duration"], "duration", fragment))


def _locate_record_list(text: str) -> str | None:
    match = RECORD_LIST_START.search(text)
    if match:
        start = match.start()
        end, last_child = _scan_brackets(text, start)
        if end is not None:
            return text[start:end + 1]
        if last_child is not None:
            logger.warning("Reply list was truncated; keeping the complete records before the cut.")
            return text[start:last_child + 1] + "]"
        raise Unparseable(f"Reply list was truncated before the first complete record: {text[start:start + 200]!r}")
    brace = text.find("{")
    if brace != -1:
        end, _ = _scan_brackets(text, brace)
        if end is not None:
            return "[" + text[brace:end + 1] + "]"
    return None


def parse_llm_record_list_lenient(content: str) -> tuple[list[AdRecord] | NoAdType, list[RecordInvalid]]:
    """
    Like parse_llm_record_list, but invalid records are returned as errors instead of raised.
    Raises Unparseable when the reply holds neither a list nor a None literal.
    """
    text = strip_fences(content or "")
    list_text = _locate_record_list(text)
    if list_text is None:
        if NONE_TOKEN.search(text):
            return NO_AD, []
        raise Unparseable(f"No record list and no None in reply: {text[:200]!r}")

    data = load_literal(list_text)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise Unparseable(f"Reply is not a list: {list_text[:200]!r}")
    if not data:
        return NO_AD, []

    records: list[AdRecord] = []
    errors: list[RecordInvalid] = []
    for item in data:
        try:
            records.append(_validate_record(item))
        except RecordInvalid as e:
            errors.append(e)
    return records, errors


def parse_llm_record_list(content: str) -> list[AdRecord] | NoAdType:
    """
    Parses an ad-detection reply into records or NO_AD.
    Raises Unparseable (no list and no None) or RecordInvalid (first invalid record, with its fragment).
    """
    records, errors = parse_llm_record_list_lenient(content)
    if errors:
        raise errors[0]
    return records


def _split_items(inner: str) -> list[str]:
    """Splits on commas and newlines outside quotes; a quote opens only as the first character of an item."""
    items: list[str] = []
    current: list[str] = []
    quote = None
    for i, c in enumerate(inner):
        if quote:
            current.append(c)
            if _closes_quote(inner, i, quote):
                quote = None
            continue
        if c in QUOTES and not "".join(current).strip():
            quote = c
            current.append(c)
        elif c in ",\n":
            items.append("".join(current))
            current = []
        else:
            current.append(c)
    if quote:
        return re.split(r"[,\n]", inner.rstrip(" \t]"))
    items.append("".join(current))
    return items


def parse_llm_string_list(content: str) -> list[str]:
    """
    Parses a grouping reply like `[science, media, product]` into trimmed, de-duplicated strings.
    Quotes are optional. Raises Unparseable if the reply holds no bracketed list.
    """
    text = strip_fences(content or "")
    start = text.find("[")
    if start == -1:
        raise Unparseable(f"No bracketed list in reply: {text[:200]!r}")
    end, _ = _scan_brackets(text, start)
    list_text = text[start:end + 1] if end is not None else text[start:] + "]"

    raw_items: list[str]
    try:
        data = load_literal(list_text)
        if not isinstance(data, list) or any(isinstance(x, (list, dict)) for x in data):
            raise Unparseable("not a flat list")
        raw_items = [str(x) for x in data if x is not None]
    except Unparseable:
        inner = list_text[1:-1]
        raw_items = [item.strip().strip("'\"") for item in _split_items(inner)]

    result: list[str] = []
    seen: set[str] = set()
    for item in raw_items:
        item = item.strip()
        if item and item not in seen:
            seen.add(item)
            result.append(item)
    return result
