"""
prompts.py

Renders the two user messages the pipeline sends:
- the ad-detection prompt followed by the transcript as a list of {'text', 'start', 'duration'} records
- the keyword-grouping prompt followed by the keywords, one per line

Templates live verbatim in `config/ad_prompt.txt` and `config/group_prompt.txt`. A request larger than the
character budget raises ContextTooLong so the caller can window (ad detection) or batch (grouping).
Token counts are estimated at 4 characters per token.
"""

from functools import lru_cache

from LLM_interaction.output_parser import AdRecord
from text_extractor.captions import CaptionEntry
from utils.errors import ContextTooLong
from utils.utils import resolve_data_path

AD_PROMPT_PATH = "config/ad_prompt.txt"
GROUP_PROMPT_PATH = "config/group_prompt.txt"
DEFAULT_BUDGET_CHARS = 100_000
CHARS_PER_TOKEN = 4


@lru_cache(maxsize=8)
def load_template(path: str) -> str:
    with open(resolve_data_path(path), "r", encoding="utf-8") as f:
        return f.read().rstrip("\n")


def estimate_tokens(text: str) -> int:
    return -(-len(text) // CHARS_PER_TOKEN)


def format_record(text: str, start: float, duration: float) -> str:
    return "  {" + f"'text': {text!r}, 'start': {float(start)!r}, 'duration': {float(duration)!r}" + "}"


def format_record_list(records: list[AdRecord] | list[CaptionEntry]) -> str:
    """Serializes records in the single-quoted dictionary shape the ad prompt requests."""
    if not records:
        return "[]"
    return "[\n" + ",\n".join(format_record(r.text, r.start, r.duration) for r in records) + "\n]"


def _check_budget(prompt: str, budget: int) -> str:
    if len(prompt) > budget:
        raise ContextTooLong(
            f"Prompt is {len(prompt)} characters (~{estimate_tokens(prompt)} tokens), over the {budget}-character budget.",
            size=len(prompt), budget=budget,
        )
    return prompt


def render_ad_prompt(entries: list[CaptionEntry], budget: int = DEFAULT_BUDGET_CHARS,
                     template_path: str = AD_PROMPT_PATH) -> str:
    if not entries:
        raise ValueError("render_ad_prompt needs at least one caption entry.")
    prompt = load_template(template_path) + "\n" + format_record_list(list(entries))
    return _check_budget(prompt, budget)


def ad_prompt_size(entries: list[CaptionEntry], template_path: str = AD_PROMPT_PATH) -> int:
    """Character size render_ad_prompt would produce, without the budget check."""
    header = len(load_template(template_path)) + 1
    if not entries:
        return header + 2
    body = sum(len(format_record(e.text, e.start, e.duration)) for e in entries)
    return header + body + 2 * len(entries) + 2  # "[\n", ",\n" separators, "\n]"


def render_group_prompt(keywords: list[str], budget: int = DEFAULT_BUDGET_CHARS,
                        template_path: str = GROUP_PROMPT_PATH) -> str:
    if not keywords:
        raise ValueError("render_group_prompt needs at least one keyword.")
    prompt = load_template(template_path) + "\n" + "\n".join(keywords)
    return _check_budget(prompt, budget)
