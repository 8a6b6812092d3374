import json
import os
import threading
import time

import pytest

from ad_detection.detector import window_transcript
from LLM_interaction.gpt_client import ChatRequest, ChatResponse, FinishReason, MockBackend
from text_extractor.captions import CaptionEntry, Transcript, TranscriptKind, serialize_caption_json, serialize_srt, serialize_vtt

STEP = 5.0
STRADDLE_BUDGET = 4000
AD_LINES = [
    "this video is sponsored by brilliant the best way to learn math",
    "use code learn for twenty percent off your first year",
    "check out our sponsor at the link in the description",
]
TOPICS = {
    "Cosmos Lab": ["black hole", "solar flare", "dark matter", "neutron star", "galaxy cluster"],
    "Build Studio": ["concrete tower", "steel bridge", "timber frame", "glass facade", "stone arch"],
    "Cell Stories": ["plant cell", "gene expression", "protein folding", "immune system", "bacterial colony"],
    "Number Line": ["prime number", "linear algebra", "group theory", "fourier series", "random walk"],
}
NO_AD_VIDEOS = {"vid4", "vid8", "vid12", "vid16", "vid20"}
STRADDLE_VIDEO = "vid1"


def make_entries(texts: list[str], step: float = STEP, offset: float = 0.0) -> list[CaptionEntry]:
    return [CaptionEntry(text, offset + i * step, step) for i, text in enumerate(texts)]


def make_transcript(texts: list[str], video_id: str = "vid1", channel: str = "Cosmos Lab",
                    kind: TranscriptKind = TranscriptKind.GENERATED, step: float = STEP) -> Transcript:
    return Transcript(video_id, channel, kind, tuple(make_entries(texts, step)))


def content_lines(channel: str, count: int, seed: int) -> list[str]:
    topics = TOPICS[channel]
    lines = []
    for i in range(count):
        first = topics[(seed + i) % len(topics)]
        second = topics[(seed + 2 * i + 1) % len(topics)]
        lines.append(f"in part {i} we study the {first} and how the {second} changes over time")
    return lines


def _straddle_texts(channel: str, count: int) -> tuple[list[str], int]:
    """Long transcript whose ad begins inside the first prompt window and ends after it."""
    base = content_lines(channel, count, seed=1)
    for p in range(5, count - 3):
        texts = base[:p] + AD_LINES + base[p:count - 3]
        windows = window_transcript(make_entries(texts), STRADDLE_BUDGET)
        first_window = len(windows[0])
        if len(windows) > 1 and p < first_window < p + len(AD_LINES):
            return texts, p
    raise AssertionError("No straddling ad position found for the fixture.")


def planted_video(index: int) -> dict:
    video_id = f"vid{index}"
    channel = list(TOPICS)[index % len(TOPICS)]
    kind = TranscriptKind.GENERATED if index % 2 else TranscriptKind.MANUAL
    fmt = ("json", "srt", "vtt")[index % 3]
    if video_id == STRADDLE_VIDEO:
        texts, position = _straddle_texts(channel, 90)
    elif video_id in NO_AD_VIDEOS:
        texts, position = content_lines(channel, 14, seed=index), None
    else:
        position = 3 + index % 6
        body = content_lines(channel, 11, seed=index)
        texts = body[:position] + AD_LINES + body[position:]
    gold = [] if position is None else [{"start": position * STEP, "end": (position + len(AD_LINES)) * STEP}]
    return {"video_id": video_id, "channel": channel, "kind": kind, "format": fmt, "texts": texts, "gold": gold}


def write_planted_corpus(root: str, count: int = 20) -> dict:
    """
    Writes `count` videos (captions in all three formats), `manifest.tsv` and `gold.jsonl` under `root`.
    Returns {"manifest", "gold", "videos"} with paths relative to the parent of `root`.
    """
    os.makedirs(root, exist_ok=True)
    videos = [planted_video(i) for i in range(1, count + 1)]
    writers = {"json": lambda t: serialize_caption_json(t).decode("utf-8"), "srt": serialize_srt, "vtt": serialize_vtt}
    lines = ["video_id\tchannel\tkind\tformat\tpath"]
    for video in videos:
        transcript = make_transcript(video["texts"], video["video_id"], video["channel"], video["kind"])
        filename = f"{video['video_id']}.{video['format']}"
        with open(os.path.join(root, filename), "w", encoding="utf-8") as f:
            f.write(writers[video["format"]](transcript))
        lines.append("\t".join([video["video_id"], video["channel"], video["kind"].value, video["format"], filename]))
    with open(os.path.join(root, "manifest.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(root, "gold.jsonl"), "w", encoding="utf-8") as f:
        for video in videos:
            f.write(json.dumps({"video_id": video["video_id"], "spans": video["gold"]}) + "\n")
    name = os.path.basename(os.path.normpath(root))
    return {"manifest": os.path.join(name, "manifest.tsv"), "gold": os.path.join(name, "gold.jsonl"), "videos": videos}


class ScriptedBackend:
    """Replies from a list of contents or exceptions, in order; the last item repeats."""
    remote = False

    def __init__(self, script):
        self.script = list(script)
        self.requests: list[ChatRequest] = []

    @property
    def calls(self) -> int:
        return len(self.requests)

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        item = self.script[min(len(self.requests), len(self.script)) - 1]
        if isinstance(item, BaseException):
            raise item
        return ChatResponse(item, FinishReason.STOP)


class InstrumentedBackend(MockBackend):
    """MockBackend that records the peak number of concurrent calls and can interrupt on a given call."""

    def __init__(self, delay: float = 0.0, interrupt_on: int | None = None):
        super().__init__()
        self.delay = delay
        self.interrupt_on = interrupt_on
        self.active = 0
        self.peak = 0
        self.completed = 0
        self._gauge = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._gauge:
            self.active += 1
            self.peak = max(self.peak, self.active)
            attempt = self.calls + 1
        try:
            if self.interrupt_on is not None and attempt == self.interrupt_on:
                raise KeyboardInterrupt
            if self.delay:
                time.sleep(self.delay)
            response = super().complete(request)
            with self._gauge:
                self.completed += 1
            return response
        finally:
            with self._gauge:
                self.active -= 1


@pytest.fixture
def scripted_backend():
    return ScriptedBackend


@pytest.fixture
def instrumented_backend():
    return InstrumentedBackend


@pytest.fixture
def transcript_factory():
    return make_transcript


@pytest.fixture
def planted_corpus(tmp_path, monkeypatch):
    """Synthetic 20-video corpus under `<tmp>/corpus`; the working directory is `<tmp>`."""
    monkeypatch.chdir(tmp_path)
    return write_planted_corpus(str(tmp_path / "corpus"))


@pytest.fixture
def corpus_writer():
    return write_planted_corpus


@pytest.fixture
def ad_lines():
    return list(AD_LINES)
