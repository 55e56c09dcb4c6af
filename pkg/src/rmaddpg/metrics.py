"""Evaluation metrics records and their line-delimited JSON files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List


@dataclass
class MetricsRecord:
    """One evaluation row emitted during a training run."""

    run_id: str
    variant: str
    budget: int
    seed: int
    episode_index: int
    team_distance: float
    difference: float
    messages_attempted: float
    messages_delivered: float
    wall_clock: float

    def __post_init__(self) -> None:
        if self.team_distance < 0 or self.difference < 0:
            raise ValueError("team_distance and difference must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


def append_record(path: str | Path, record: MetricsRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")


def read_records(path: str | Path) -> List[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(MetricsRecord.from_json(line))
    return records


def read_many(paths: Iterable[str | Path]) -> List[MetricsRecord]:
    records: List[MetricsRecord] = []
    for path in paths:
        records.extend(read_records(path))
    return records
