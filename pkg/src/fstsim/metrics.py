"""Per-evaluation metrics records and their file formats.

One record is emitted per task per evaluation tick. Files come in two
equivalent flavours with identical field order: CSV (one header row) and
JSON lines. Floats are serialized with ``repr`` so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable


@dataclass(frozen=True)
class MetricsRecord:
    """Snapshot of one task at one evaluation tick.

    r and b are the task's current request and buffer targets, c the total
    updates received by the server (all tasks, cumulative), dropped the
    task's cumulative staleness-dropped updates. Staleness stats cover the
    updates that entered the task's buffer so far.
    """

    sim_time: float
    task_id: int
    round: int
    loss: float
    accuracy: float
    r: int
    b: int
    staleness_mean: float
    staleness_max: int
    c: int
    dropped: int


FIELD_ORDER = tuple(f.name for f in fields(MetricsRecord))

_FLOAT_FIELDS = {"sim_time", "loss", "accuracy", "staleness_mean"}


def _cell(name: str, value) -> str:
    if name in _FLOAT_FIELDS:
        return repr(float(value))
    return str(int(value))


def write_csv(path: str | Path, records: Iterable[MetricsRecord]) -> None:
    lines = [",".join(FIELD_ORDER)]
    for rec in records:
        d = asdict(rec)
        lines.append(",".join(_cell(name, d[name]) for name in FIELD_ORDER))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path) -> list[MetricsRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",") != list(FIELD_ORDER):
        raise ValueError(f"{path}: missing or unexpected header row")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        kwargs = {}
        for name, cell in zip(FIELD_ORDER, cells):
            kwargs[name] = float(cell) if name in _FLOAT_FIELDS else int(cell)
        records.append(MetricsRecord(**kwargs))
    return records


def write_jsonl(path: str | Path, records: Iterable[MetricsRecord]) -> None:
    lines = []
    for rec in records:
        d = asdict(rec)
        pairs = ", ".join(f'"{name}": {_cell(name, d[name])}' for name in FIELD_ORDER)
        lines.append("{" + pairs + "}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_jsonl(path: str | Path) -> list[MetricsRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        d = json.loads(line)
        records.append(MetricsRecord(**{name: d[name] for name in FIELD_ORDER}))
    return records
