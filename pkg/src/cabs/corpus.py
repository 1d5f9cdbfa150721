"""JSONL corpus container: one case per line.

Case fields: ``case_id`` plus any of ``gt_report``, ``gt_units``,
``pred_report``, ``pred_units``.  Unit payloads use the canonical
decomposition schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .core import ReportDecomposition, decomposition_from_obj
from .errors import MalformedJson, SchemaViolation

_CASE_KEYS = frozenset(
    {"case_id", "gt_report", "gt_units", "pred_report", "pred_units"}
)


@dataclass(frozen=True)
class Case:
    case_id: str
    gt_report: str | None = None
    gt_units: ReportDecomposition | None = None
    pred_report: str | None = None
    pred_units: ReportDecomposition | None = None

    def to_dict(self) -> dict:
        out: dict = {"case_id": self.case_id}
        if self.gt_report is not None:
            out["gt_report"] = self.gt_report
        if self.gt_units is not None:
            out["gt_units"] = self.gt_units.to_dict()
        if self.pred_report is not None:
            out["pred_report"] = self.pred_report
        if self.pred_units is not None:
            out["pred_units"] = self.pred_units.to_dict()
        return out


def case_from_obj(obj: dict, path: str = "case") -> Case:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    unknown = sorted(set(obj) - _CASE_KEYS)
    if unknown:
        raise SchemaViolation(f"{path}.{unknown[0]}", "unknown key")
    if "case_id" not in obj or not isinstance(obj["case_id"], str) or not obj["case_id"]:
        raise SchemaViolation(f"{path}.case_id", "expected non-empty string")
    for key in ("gt_report", "pred_report"):
        if key in obj and not isinstance(obj[key], str):
            raise SchemaViolation(f"{path}.{key}", "expected string")
    gt_units = (
        decomposition_from_obj(obj["gt_units"], path=f"{path}.gt_units")
        if "gt_units" in obj
        else None
    )
    pred_units = (
        decomposition_from_obj(obj["pred_units"], path=f"{path}.pred_units")
        if "pred_units" in obj
        else None
    )
    return Case(
        case_id=obj["case_id"],
        gt_report=obj.get("gt_report"),
        gt_units=gt_units,
        pred_report=obj.get("pred_report"),
        pred_units=pred_units,
    )


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedJson(f"{path}:{line_no}: invalid JSON: {exc}") from exc


def read_cases(path: str | Path) -> list[Case]:
    cases = []
    for i, obj in enumerate(read_jsonl(path)):
        cases.append(case_from_obj(obj, path=f"line[{i}]"))
    return cases


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
