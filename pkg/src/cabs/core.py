"""Structured clinical-fact data model and its canonical JSON wire form.

An abnormality unit is a tuple of organ, entity name, attributes, anatomical
location, diagnostic certainty, and the verbatim evidence span that grounds
it.  A report decomposition is the ordered list of such units extracted from
one report (document order), plus a consistency flag.

Validation is strict by design: these schemas are contracts with LLM judges,
so unknown keys, bad enum values, and flag/list inconsistencies are rejected
with the offending JSON path rather than silently tolerated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Iterable

from .errors import EmptyLabel, MalformedJson, SchemaViolation


class Certainty(str, Enum):
    DEFINITE = "definite"
    POSSIBLE = "possible"


class Organ(str, Enum):
    TRACHEA = "trachea"
    HEART = "heart"
    LUNG = "lung"
    ESOPHAGUS = "esophagus"
    VESSEL = "vessel"
    SPINE = "spine"
    LIVER = "liver"
    PANCREAS = "pancreas"
    SPLEEN = "spleen"
    STOMACH = "stomach"
    BOWEL = "bowel"
    KIDNEY = "kidney"
    OTHER = "other"


ORGAN_LABELS: frozenset[str] = frozenset(o.value for o in Organ)
CERTAINTY_LABELS: frozenset[str] = frozenset(c.value for c in Certainty)

_UNIT_KEYS = ("name", "evidence", "location", "attributes", "certainty", "organ")
_DOC_KEYS = ("abnormalities", "report_has_abnormality")

_WORD_RE = re.compile(r"[a-z0-9]+")


def _load_alias_table() -> dict[str, str]:
    raw = json.loads(
        resources.files("cabs.data").joinpath("organ_aliases.json").read_text("utf-8")
    )
    table: dict[str, str] = {}
    for organ, aliases in raw["aliases"].items():
        for alias in aliases:
            table[alias] = organ
    return table


_ORGAN_ALIASES = _load_alias_table()

# Tokens of any organ alias.  Organ words may legitimately appear inside a
# standardized entity name ("fatty liver"), so the name/location leakage
# check below exempts them.
_ORGAN_TOKENS: frozenset[str] = frozenset(
    tok for alias in _ORGAN_ALIASES for tok in _WORD_RE.findall(alias.lower())
)


def canonical_organ(label: str) -> Organ:
    """Fold a free-text organ label onto the 13-label set.

    Case and surrounding/internal whitespace are irrelevant; plural and
    common synonym forms resolve through the shipped alias table; any
    unmatched non-empty label falls back to ``other``.

    Raises:
        EmptyLabel: the input is empty or whitespace only.
    """
    folded = " ".join(label.strip().lower().split())
    if not folded:
        raise EmptyLabel("organ label is empty")
    return Organ(_ORGAN_ALIASES.get(folded, "other"))


def _tokens(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


@dataclass(frozen=True)
class AbnormalityUnit:
    """One structured clinical fact.

    ``location`` and ``attributes`` are empty strings when the source report
    does not state them, never absent fields.
    """

    name: str
    evidence: str
    location: str = ""
    attributes: str = ""
    certainty: Certainty = Certainty.DEFINITE
    organ: Organ = Organ.OTHER

    def validate(self, path: str = "unit") -> None:
        if not self.name.strip():
            raise SchemaViolation(f"{path}.name", "must be non-empty")
        if not self.evidence.strip():
            raise SchemaViolation(f"{path}.evidence", "must be non-empty")
        if not isinstance(self.certainty, Certainty):
            raise SchemaViolation(f"{path}.certainty", "must be 'definite' or 'possible'")
        if not isinstance(self.organ, Organ):
            raise SchemaViolation(f"{path}.organ", f"must be one of {sorted(ORGAN_LABELS)}")
        # The name must stay a bare entity: modifier tokens leaked from this
        # unit's own location/attributes fields are rejected.  Organ words
        # are exempt because disease names routinely embed them.
        leaked = _tokens(self.name) & (_tokens(self.location) | _tokens(self.attributes))
        leaked -= _ORGAN_TOKENS
        if leaked:
            raise SchemaViolation(
                f"{path}.name",
                f"contains location/attribute tokens {sorted(leaked)}",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "evidence": self.evidence,
            "location": self.location,
            "attributes": self.attributes,
            "certainty": self.certainty.value,
            "organ": self.organ.value,
        }


@dataclass(frozen=True)
class ReportDecomposition:
    """Ordered abnormality units of one report.

    Unit order is the document order of the source report and defines the
    reference trajectory consumed by the trajectory-integral reward.
    """

    abnormalities: tuple[AbnormalityUnit, ...] = ()
    report_has_abnormality: bool = False

    def __post_init__(self):
        object.__setattr__(self, "abnormalities", tuple(self.abnormalities))

    @property
    def unit_count(self) -> int:
        return len(self.abnormalities)

    def validate(self) -> None:
        for i, unit in enumerate(self.abnormalities):
            unit.validate(path=f"abnormalities[{i}]")
        if self.report_has_abnormality != bool(self.abnormalities):
            raise SchemaViolation(
                "report_has_abnormality",
                "must be true exactly when the abnormality list is non-empty",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "abnormalities": [u.to_dict() for u in self.abnormalities],
            "report_has_abnormality": self.report_has_abnormality,
        }

    @classmethod
    def from_units(cls, units: Iterable[AbnormalityUnit]) -> "ReportDecomposition":
        units = tuple(units)
        return cls(abnormalities=units, report_has_abnormality=bool(units))


def _require_keys(obj: dict, expected: tuple[str, ...], path: str) -> None:
    for key in expected:
        if key not in obj:
            raise SchemaViolation(f"{path}.{key}" if path else key, "missing required key")
    unknown = sorted(set(obj) - set(expected))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise SchemaViolation(where, "unknown key")


def _require_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(path, f"expected string, got {type(value).__name__}")
    return value


def unit_from_obj(obj: Any, path: str = "unit") -> AbnormalityUnit:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, f"expected object, got {type(obj).__name__}")
    _require_keys(obj, _UNIT_KEYS, path)
    certainty_raw = _require_str(obj["certainty"], f"{path}.certainty")
    if certainty_raw not in CERTAINTY_LABELS:
        raise SchemaViolation(f"{path}.certainty", f"invalid value {certainty_raw!r}")
    organ_raw = _require_str(obj["organ"], f"{path}.organ")
    if organ_raw not in ORGAN_LABELS:
        raise SchemaViolation(f"{path}.organ", f"invalid value {organ_raw!r}")
    unit = AbnormalityUnit(
        name=_require_str(obj["name"], f"{path}.name"),
        evidence=_require_str(obj["evidence"], f"{path}.evidence"),
        location=_require_str(obj["location"], f"{path}.location"),
        attributes=_require_str(obj["attributes"], f"{path}.attributes"),
        certainty=Certainty(certainty_raw),
        organ=Organ(organ_raw),
    )
    unit.validate(path=path)
    return unit


def decomposition_from_obj(obj: Any, path: str = "") -> ReportDecomposition:
    prefix = f"{path}." if path else ""
    if not isinstance(obj, dict):
        raise SchemaViolation(path or "document", f"expected object, got {type(obj).__name__}")
    _require_keys(obj, _DOC_KEYS, path)
    raw_list = obj["abnormalities"]
    if not isinstance(raw_list, list):
        raise SchemaViolation(f"{prefix}abnormalities", "expected array")
    flag = obj["report_has_abnormality"]
    if not isinstance(flag, bool):
        raise SchemaViolation(f"{prefix}report_has_abnormality", "expected boolean")
    units = tuple(
        unit_from_obj(item, path=f"{prefix}abnormalities[{i}]")
        for i, item in enumerate(raw_list)
    )
    decomposition = ReportDecomposition(abnormalities=units, report_has_abnormality=flag)
    if flag != bool(units):
        raise SchemaViolation(
            f"{prefix}report_has_abnormality",
            "must be true exactly when the abnormality list is non-empty",
        )
    return decomposition


def parse_decomposition(doc: str) -> ReportDecomposition:
    """Parse and validate the canonical decomposition JSON.

    Round-trips with :func:`serialize_decomposition`; unit order is
    preserved; unknown keys are rejected.

    Raises:
        MalformedJson: the text is not JSON.
        SchemaViolation: structural or consistency failure; names the path.
    """
    try:
        obj = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"invalid JSON: {exc}") from exc
    return decomposition_from_obj(obj)


def serialize_decomposition(decomposition: ReportDecomposition) -> str:
    """Canonical, byte-stable JSON form (fixed key order, no reordering)."""
    return json.dumps(decomposition.to_dict(), ensure_ascii=False)
