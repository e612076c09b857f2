"""Labelled collections of sessions, stored as a directory with an index file."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from ..behavior_log import BehaviorLog, SessionManifest, load_log, save_log
from ..errors import DataError

LABELS = ("ASD", "TD")
INDEX = "index.json"


@dataclass(frozen=True)
class Case:
    case_id: str
    log: BehaviorLog
    manifest: SessionManifest
    label: str


def save_dataset(cases, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    (directory / "cases").mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        save_log(case.log, case.manifest, directory / "cases" / case.case_id)
        entries.append({
            "case_id": case.case_id,
            "label": case.label,
            "log": f"cases/{case.case_id}.log.jsonl",
            "manifest": f"cases/{case.case_id}.manifest.json",
        })
    index = directory / INDEX
    index.write_text(json.dumps({"schema_version": "1.0", "cases": entries}, indent=2) + "\n", encoding="utf-8")
    return index


def load_dataset(directory: Union[str, Path]) -> list[Case]:
    directory = Path(directory)
    index_path = directory / INDEX
    if not index_path.is_file():
        raise DataError(f"{index_path} not found")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    cases = []
    for e in index["cases"]:
        if e["label"] not in LABELS:
            raise DataError(f"case {e['case_id']}: label {e['label']!r} not in {LABELS}")
        log, manifest = load_log(directory / e["log"], directory / e["manifest"])
        cases.append(Case(e["case_id"], log, manifest, e["label"]))
    return cases
