"""
stage_state.py

Work-directory layout and per-video stage status.

Every (stage, video) pair has a status of Pending (no file), Done or Failed(reason), stored as
`state/<stage>/<video_id>.json` and written atomically, so a killed run never leaves a status behind that
a resume would trust. Corpus-level stages (group, analyze, eval) use the pseudo video id `_corpus`.
"""

import os
from dataclasses import dataclass
from enum import Enum

from utils.errors import StagePreconditionError
from utils.utils import atomic_write_json, natural_key, read_json

STAGES = ("ingest", "detect", "keywords", "group", "analyze", "eval")
PREREQUISITES = {"detect": "ingest", "keywords": "detect", "group": "keywords", "analyze": "group", "eval": "detect"}
CORPUS = "_corpus"


@dataclass(frozen=True)
class WorkLayout:
    root: str

    @property
    def transcripts(self) -> str:
        return os.path.join(self.root, "transcripts")

    @property
    def detections(self) -> str:
        return os.path.join(self.root, "detections")

    @property
    def keywords(self) -> str:
        return os.path.join(self.root, "keywords")

    @property
    def groups(self) -> str:
        return os.path.join(self.root, "groups")

    @property
    def reports(self) -> str:
        return os.path.join(self.root, "reports")

    @property
    def state(self) -> str:
        return os.path.join(self.root, "state")

    @property
    def manifest(self) -> str:
        return os.path.join(self.root, "manifest.tsv")

    def transcript_path(self, video_id: str) -> str:
        return os.path.join(self.transcripts, f"{video_id}.json")

    def create(self) -> None:
        for directory in (self.transcripts, self.detections, self.keywords, self.groups, self.reports, self.state):
            os.makedirs(directory, exist_ok=True)

    def describe(self) -> dict:
        """Directory layout relative to the work directory, for the run summary."""
        return {
            "transcripts": "transcripts/<video_id>.json",
            "detections": "detections/<video_id>.json, detections/detections.jsonl",
            "keywords": "keywords/<video_id>.csv",
            "groups": "groups/audit.jsonl, groups/*_categories.csv, groups/video_categories.csv, groups/cascade.json",
            "reports": "reports/*.csv, reports/*.md, reports/summary.json",
            "state": "state/<stage>/<video_id>.json",
        }


class Status(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class StageStatus:
    status: Status = Status.PENDING
    reason: str = ""


class StageState:
    def __init__(self, state_dir: str):
        self.state_dir = state_dir

    def path(self, stage: str, video_id: str) -> str:
        return os.path.join(self.state_dir, stage, f"{video_id}.json")

    def get(self, stage: str, video_id: str) -> StageStatus:
        path = self.path(stage, video_id)
        if not os.path.exists(path):
            return StageStatus()
        doc = read_json(path)
        return StageStatus(Status(doc["status"]), doc.get("reason", ""))

    def is_done(self, stage: str, video_id: str) -> bool:
        return self.get(stage, video_id).status is Status.DONE

    def mark_done(self, stage: str, video_id: str) -> None:
        atomic_write_json(self.path(stage, video_id), {"status": Status.DONE.value})

    def mark_failed(self, stage: str, video_id: str, reason: str) -> None:
        atomic_write_json(self.path(stage, video_id), {"status": Status.FAILED.value, "reason": reason})

    def videos(self, stage: str, status: Status | None = None) -> list[str]:
        directory = os.path.join(self.state_dir, stage)
        if not os.path.isdir(directory):
            return []
        ids = [f[: -len(".json")] for f in os.listdir(directory) if f.endswith(".json") and not f.startswith(".")]
        if status is not None:
            ids = [v for v in ids if self.get(stage, v).status is status]
        return sorted(ids, key=natural_key)

    def done_videos(self, stage: str) -> list[str]:
        return [v for v in self.videos(stage, Status.DONE) if v != CORPUS]

    def counts(self, stage: str) -> dict[str, int]:
        statuses = [self.get(stage, v).status for v in self.videos(stage)]
        return {s.value: statuses.count(s) for s in (Status.DONE, Status.FAILED)}

    def require(self, stage: str) -> None:
        """Raises StagePreconditionError unless the prerequisite stage is Done for at least one video."""
        prerequisite = PREREQUISITES.get(stage)
        if prerequisite and not self.videos(prerequisite, Status.DONE):
            raise StagePreconditionError(stage, prerequisite)

    def ready(self, stage: str, video_id: str) -> bool:
        prerequisite = PREREQUISITES.get(stage)
        return prerequisite is None or self.is_done(prerequisite, video_id)
