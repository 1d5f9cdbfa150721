"""Per-unit hit/location/attribute judgments via lexical or LLM matching.

The lexical matcher is a deterministic stand-in for an LLM judge: greedy
injective matching in ground-truth order with normalized-name equality or
lexicon synonyms.  The LLM path renders the judge prompt, validates the
response against the judge output schema, and repairs the hit=false clamp.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence, Union

from . import llm
from .core import (
    AbnormalityUnit,
    Certainty,
    Organ,
    ReportDecomposition,
    canonical_organ,
    serialize_decomposition,
)
from .errors import (
    EmptyReport,
    ExtractionFailed,
    LengthMismatch,
    MatchFailed,
    SchemaViolation,
)

LATERALITY_TOKENS = frozenset({"left", "right", "bilateral"})

_WORD_RE = re.compile(r"[a-z0-9]+")


def _fold_plural(token: str) -> str:
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def normalize_name(text: str) -> str:
    """Case/hyphen/punctuation-insensitive form with naive plural folding."""
    tokens = _WORD_RE.findall(text.lower().replace("-", " "))
    return " ".join(_fold_plural(t) for t in tokens)


def normalized_tokens(text: str) -> set[str]:
    return set(normalize_name(text).split())


@dataclass(frozen=True)
class LexiconEntry:
    name: str
    organ: Organ
    patterns: tuple[str, ...]


class EntityLexicon:
    """Canonical entity names, synonym patterns, and organ assignments."""

    def __init__(self, entries: Sequence[LexiconEntry]):
        self.entries = tuple(entries)
        self._by_pattern: dict[str, LexiconEntry] = {}
        for entry in self.entries:
            for pattern in entry.patterns:
                self._by_pattern[normalize_name(pattern)] = entry

    @classmethod
    def default(cls) -> "EntityLexicon":
        raw = json.loads(
            resources.files("cabs.data").joinpath("entity_lexicon.json").read_text("utf-8")
        )
        entries = [
            LexiconEntry(
                name=e["name"],
                organ=Organ(e["organ"]),
                patterns=tuple(e["patterns"]),
            )
            for e in raw["entities"]
        ]
        return cls(entries)

    def lookup(self, name: str) -> LexiconEntry | None:
        return self._by_pattern.get(normalize_name(name))

    def names(self) -> list[str]:
        return [e.name for e in self.entries]


_DEFAULT_LEXICON: EntityLexicon | None = None


def default_lexicon() -> EntityLexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = EntityLexicon.default()
    return _DEFAULT_LEXICON


@dataclass(frozen=True)
class UnitJudgment:
    """Judgment for one ground-truth unit.

    Invariant: hit=false forces both sub-matches false.
    """

    name: str
    hit: bool
    location_match: bool = False
    attribute_match: bool = False

    def __post_init__(self):
        if not self.hit and (self.location_match or self.attribute_match):
            raise SchemaViolation(
                "judgment", "location/attribute match require hit=true"
            )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "hit": self.hit,
            "location_match": self.location_match,
            "attribute_match": self.attribute_match,
        }


@dataclass(frozen=True)
class MatchResult:
    """Per-unit judgments plus the unmatched predicted entities.

    ``judgments`` aligns 1:1 with the ground-truth decomposition order.
    ``pred_count`` is the number of predicted abnormal entities; matching is
    injective, so hits + false positives never exceed it.
    """

    judgments: tuple[UnitJudgment, ...]
    false_positives: tuple[str, ...] = ()
    pred_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "judgments", tuple(self.judgments))
        object.__setattr__(self, "false_positives", tuple(self.false_positives))
        if self.pred_count < 0:
            raise SchemaViolation("pred_count", "must be non-negative")
        if self.fp_count > self.pred_count:
            raise SchemaViolation("false_positives", "cannot exceed pred_count")

    @property
    def fp_count(self) -> int:
        return len(self.false_positives)

    @property
    def hit_count(self) -> int:
        return sum(1 for j in self.judgments if j.hit)

    @property
    def gt_count(self) -> int:
        return len(self.judgments)

    def to_dict(self) -> dict:
        return {
            "judgments": [j.to_dict() for j in self.judgments],
            "false_positives": list(self.false_positives),
            "pred_count": self.pred_count,
        }


def match_result_from_obj(obj: dict, path: str = "match") -> MatchResult:
    """Parse the serialized MatchResult form back into a validated object."""
    if not isinstance(obj, dict):
        raise SchemaViolation(path, "expected object")
    for key in ("judgments", "false_positives", "pred_count"):
        if key not in obj:
            raise SchemaViolation(f"{path}.{key}", "missing required key")
    unknown = sorted(set(obj) - {"judgments", "false_positives", "pred_count"})
    if unknown:
        raise SchemaViolation(f"{path}.{unknown[0]}", "unknown key")
    judgments = []
    for i, row in enumerate(obj["judgments"]):
        row_path = f"{path}.judgments[{i}]"
        if not isinstance(row, dict) or set(row) != {
            "name", "hit", "location_match", "attribute_match"
        }:
            raise SchemaViolation(row_path, "expected judgment object")
        judgments.append(
            UnitJudgment(
                name=row["name"],
                hit=row["hit"],
                location_match=row["location_match"],
                attribute_match=row["attribute_match"],
            )
        )
    return MatchResult(
        judgments=tuple(judgments),
        false_positives=tuple(obj["false_positives"]),
        pred_count=obj["pred_count"],
    )


def _names_match(a: str, b: str, lexicon: EntityLexicon) -> bool:
    norm_a, norm_b = normalize_name(a), normalize_name(b)
    if norm_a == norm_b:
        return True
    entry_a, entry_b = lexicon.lookup(a), lexicon.lookup(b)
    return entry_a is not None and entry_a is entry_b


def location_matches(gt_location: str, pred_location: str) -> bool:
    """Deterministic location consistency rule.

    An empty ground-truth location imposes no constraint.  Otherwise the
    prediction must carry every laterality token the ground truth states
    and, when the ground truth has non-laterality tokens at all, share at
    least one of them.
    """
    gt_tokens = normalized_tokens(gt_location)
    if not gt_tokens:
        return True
    pred_tokens = normalized_tokens(pred_location)
    if not pred_tokens:
        return False
    gt_lat = gt_tokens & LATERALITY_TOKENS
    if not gt_lat <= pred_tokens:
        return False
    gt_rest = gt_tokens - LATERALITY_TOKENS
    if not gt_rest:
        return True
    return bool(gt_rest & (pred_tokens - LATERALITY_TOKENS))


def attributes_match(gt_attributes: str, pred_attributes: str) -> bool:
    """Both empty, or token-set Jaccard overlap of at least 0.5."""
    gt_tokens = normalized_tokens(gt_attributes)
    pred_tokens = normalized_tokens(pred_attributes)
    if not gt_tokens and not pred_tokens:
        return True
    union = gt_tokens | pred_tokens
    if not union:
        return True
    return len(gt_tokens & pred_tokens) / len(union) >= 0.5


def lexical_match(
    gt_units: Sequence[AbnormalityUnit],
    pred_units: Sequence[AbnormalityUnit],
    lexicon: EntityLexicon | None = None,
) -> MatchResult:
    """Greedy injective matching in ground-truth order.

    Each predicted unit is consumed by at most one ground-truth unit; ties
    break toward the lowest predicted index.  Total function: any pair of
    valid unit lists yields a result.
    """
    lexicon = lexicon or default_lexicon()
    consumed: set[int] = set()
    judgments: list[UnitJudgment] = []
    for gt_unit in gt_units:
        chosen: int | None = None
        for idx, pred_unit in enumerate(pred_units):
            if idx in consumed:
                continue
            if _names_match(gt_unit.name, pred_unit.name, lexicon):
                chosen = idx
                break
        if chosen is None:
            judgments.append(UnitJudgment(name=gt_unit.name, hit=False))
            continue
        consumed.add(chosen)
        pred_unit = pred_units[chosen]
        judgments.append(
            UnitJudgment(
                name=gt_unit.name,
                hit=True,
                location_match=location_matches(gt_unit.location, pred_unit.location),
                attribute_match=attributes_match(gt_unit.attributes, pred_unit.attributes),
            )
        )
    false_positives = tuple(
        u.name for i, u in enumerate(pred_units) if i not in consumed
    )
    return MatchResult(
        judgments=tuple(judgments),
        false_positives=false_positives,
        pred_count=len(pred_units),
    )


# --- rule-based extraction ---------------------------------------------------

_NEGATION_CUES = ("no ", "no.", "not seen", "negative for", "without")
_UNCERTAINTY_CUES = (
    "possible",
    "possibly",
    "probable",
    "probably",
    "suspected",
    "suspicious",
    "consider",
    "cannot exclude",
    "cannot be excluded",
    "may represent",
    "likely",
)
_SENTENCE_SPLIT_RE = re.compile(r"[.;\n]+")
_LOCATION_RE = re.compile(
    r"\b(?:in|at|within|involving) the ([a-z0-9][a-z0-9 \-]*?)"
    r"(?=[,.;]|$| with | and | measuring | showing )"
)


def _sentence_negated(sentence_lower: str) -> bool:
    padded = f" {sentence_lower} "
    return any(cue in padded for cue in _NEGATION_CUES)


class RuleBasedExtractor:
    """Deterministic lexicon-driven extraction.

    Splits the report into sentences, drops negated sentences, and emits one
    unit per matched lexicon pattern with the entry's organ.  Repeated
    mentions of the same entity merge into the first occurrence.
    """

    def __init__(self, lexicon: EntityLexicon | None = None):
        self.lexicon = lexicon or default_lexicon()

    def extract(self, report_text: str) -> ReportDecomposition:
        seen: set[str] = set()
        units: list[AbnormalityUnit] = []
        for raw_sentence in _SENTENCE_SPLIT_RE.split(report_text):
            sentence = raw_sentence.strip()
            if not sentence:
                continue
            lowered = sentence.lower()
            if _sentence_negated(lowered):
                continue
            normalized = " " + normalize_name(sentence) + " "
            certainty = (
                Certainty.POSSIBLE
                if any(cue in lowered for cue in _UNCERTAINTY_CUES)
                else Certainty.DEFINITE
            )
            location_match = _LOCATION_RE.search(lowered)
            location = location_match.group(1).strip() if location_match else ""
            for entry in self.lexicon.entries:
                if entry.name in seen:
                    continue
                if any(
                    f" {normalize_name(p)} " in normalized for p in entry.patterns
                ):
                    seen.add(entry.name)
                    units.append(
                        AbnormalityUnit(
                            name=entry.name,
                            evidence=sentence,
                            location=location,
                            attributes="",
                            certainty=certainty,
                            organ=entry.organ,
                        )
                    )
        return ReportDecomposition.from_units(units)


class LlmExtractor:
    """Extraction through a chat-completion judge with one strict reprompt."""

    def __init__(self, client: llm.LlmClient):
        self.client = client

    def extract(self, report_text: str) -> ReportDecomposition:
        prompt = llm.render_prompt("extract", {"report": report_text})
        raw = self.client.complete(prompt)
        try:
            return llm.parse_json_response(raw, "decomposition").payload
        except Exception as first_error:
            retry_prompt = llm.strict_reprompt(prompt, raw, str(first_error))
            raw = self.client.complete(retry_prompt)
            try:
                return llm.parse_json_response(raw, "decomposition").payload
            except Exception as exc:
                raise ExtractionFailed(
                    f"judge response unparseable after strict reprompt: {exc}"
                ) from exc


Extractor = Union[RuleBasedExtractor, LlmExtractor]


def extract_units(report_text: str, extractor: Extractor) -> ReportDecomposition:
    """Extract abnormality units from free report text.

    Raises:
        EmptyReport: blank input.
        ExtractionFailed: LLM response invalid after one strict reprompt.
    """
    if not report_text or not report_text.strip():
        raise EmptyReport("report text is empty")
    return extractor.extract(report_text)


# --- matching backends -------------------------------------------------------

@dataclass
class LexicalMatcher:
    """Deterministic backend: rule-based extraction plus lexical matching."""

    lexicon: EntityLexicon = field(default_factory=default_lexicon)

    @property
    def extractor(self) -> RuleBasedExtractor:
        return RuleBasedExtractor(self.lexicon)

    def match(
        self, gt: ReportDecomposition, pred_units: Sequence[AbnormalityUnit]
    ) -> MatchResult:
        return lexical_match(gt.abnormalities, pred_units, self.lexicon)


class LlmMatcher:
    """Judge-backed matching against the judge output schema."""

    def __init__(self, client: llm.LlmClient):
        self.client = client

    @property
    def extractor(self) -> LlmExtractor:
        return LlmExtractor(self.client)

    def match_text(self, gt: ReportDecomposition, pred_text: str) -> MatchResult:
        prompt = llm.render_prompt(
            "match", {"gt": serialize_decomposition(gt), "pred": pred_text}
        )
        raw = self.client.complete(prompt)
        try:
            payload = llm.parse_json_response(raw, "match").payload
        except Exception as first_error:
            retry_prompt = llm.strict_reprompt(prompt, raw, str(first_error))
            raw = self.client.complete(retry_prompt)
            try:
                payload = llm.parse_json_response(raw, "match").payload
            except Exception as exc:
                raise MatchFailed(
                    f"judge response invalid after strict reprompt: {exc}"
                ) from exc
        return _result_from_judge_payload(gt, payload)


def _result_from_judge_payload(gt: ReportDecomposition, payload: dict) -> MatchResult:
    rows = payload["abnormalities"]
    if len(rows) != gt.unit_count:
        raise LengthMismatch(
            f"judge returned {len(rows)} judgments for {gt.unit_count} ground-truth units"
        )
    judgments = tuple(
        UnitJudgment(
            name=row["name"],
            hit=row["hit"],
            location_match=row["location_match"],
            attribute_match=row["attribute_match"],
        )
        for row in rows
    )
    false_positives = tuple(payload["false_positives"])
    # The judge reports matches and leftovers but not the raw predicted
    # entity count; under injective matching it is hits + false positives.
    pred_count = sum(1 for j in judgments if j.hit) + len(false_positives)
    return MatchResult(
        judgments=judgments,
        false_positives=false_positives,
        pred_count=pred_count,
    )


Matcher = Union[LexicalMatcher, LlmMatcher]
Prediction = Union[str, ReportDecomposition]


def match_reports(
    gt: ReportDecomposition, pred: Prediction, matcher: Matcher
) -> MatchResult:
    """Judge a prediction against a ground-truth decomposition.

    Free-text predictions are first decomposed by the matcher's own backend
    family.  One judgment per ground-truth unit, in ground-truth order; each
    predicted unit is consumed at most once.
    """
    if isinstance(matcher, LexicalMatcher):
        if isinstance(pred, str):
            pred = extract_units(pred, matcher.extractor)
        return matcher.match(gt, pred.abnormalities)
    if isinstance(pred, ReportDecomposition):
        pred_text = serialize_decomposition(pred)
    else:
        pred_text = pred
    return matcher.match_text(gt, pred_text)
