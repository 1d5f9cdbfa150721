"""Deterministic multiple-choice question construction and scoring.

Templated generation implements every structural constraint of the VQA
prompt verbatim (existence pair always present, optional location and
attribute items, image-centric wording, no report vocabulary), trading
linguistic variety for seeded reproducibility.  An LLM-generated item set
can be validated against the same invariants via ``validate_items``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .core import AbnormalityUnit
from .errors import (
    MissingPrediction,
    NoNegativeAvailable,
    PoolTooSmall,
    SchemaViolation,
)
from .matching import normalize_name

FORBIDDEN_QUESTION_WORDS = ("report", "findings", "impression")

_LETTERS = ("A", "B", "C", "D")


class McqType(str, Enum):
    EXISTENCE_POSITIVE = "existence_positive"
    EXISTENCE_NEGATIVE = "existence_negative"
    LOCATION = "location"
    ATTRIBUTE = "attribute"


@dataclass(frozen=True)
class McqItem:
    type: McqType
    question: str
    options: tuple[str, ...]
    answer: str

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))

    def validate(self, path: str = "item") -> None:
        expected = 2 if self.type in (
            McqType.EXISTENCE_POSITIVE, McqType.EXISTENCE_NEGATIVE
        ) else 4
        if len(self.options) != expected:
            raise SchemaViolation(
                f"{path}.options", f"{self.type.value} needs {expected} options"
            )
        letters = _LETTERS[: len(self.options)]
        if self.answer not in letters:
            raise SchemaViolation(f"{path}.answer", f"must be one of {letters}")
        for i, option in enumerate(self.options):
            if not option.startswith(f"{letters[i]}. "):
                raise SchemaViolation(
                    f"{path}.options[{i}]", f"must be prefixed '{letters[i]}. '"
                )
        lowered = self.question.lower()
        for word in FORBIDDEN_QUESTION_WORDS:
            if word in lowered:
                raise SchemaViolation(
                    f"{path}.question", f"contains forbidden word {word!r}"
                )
        if self.type is McqType.EXISTENCE_POSITIVE and self.answer_text != "Yes":
            raise SchemaViolation(f"{path}.answer", "positive existence answer must be Yes")
        if self.type is McqType.EXISTENCE_NEGATIVE and self.answer_text != "No":
            raise SchemaViolation(f"{path}.answer", "negative existence answer must be No")

    @property
    def answer_text(self) -> str:
        index = _LETTERS.index(self.answer)
        return self.options[index][len(f"{self.answer}. "):]

    def to_dict(self) -> dict:
        return {
            "type": self.type.value,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
        }


def item_from_obj(obj: dict, path: str = "item") -> McqItem:
    item = McqItem(
        type=McqType(obj["type"]),
        question=obj["question"],
        options=tuple(obj["options"]),
        answer=obj["answer"],
    )
    item.validate(path)
    return item


def validate_items(items: Sequence[McqItem], unit: AbnormalityUnit) -> None:
    """Check a whole item set against the construction constraints."""
    by_type: dict[McqType, int] = {}
    for i, item in enumerate(items):
        item.validate(path=f"items[{i}]")
        by_type[item.type] = by_type.get(item.type, 0) + 1
    if by_type.get(McqType.EXISTENCE_POSITIVE, 0) != 1:
        raise SchemaViolation("items", "exactly one existence_positive required")
    if by_type.get(McqType.EXISTENCE_NEGATIVE, 0) != 1:
        raise SchemaViolation("items", "exactly one existence_negative required")
    expected_location = 1 if unit.location else 0
    if by_type.get(McqType.LOCATION, 0) != expected_location:
        raise SchemaViolation("items", f"expected {expected_location} location item(s)")
    expected_attribute = 1 if unit.attributes else 0
    if by_type.get(McqType.ATTRIBUTE, 0) != expected_attribute:
        raise SchemaViolation("items", f"expected {expected_attribute} attribute item(s)")


def _letterize(texts: Sequence[str]) -> tuple[str, ...]:
    return tuple(f"{_LETTERS[i]}. {text}" for i, text in enumerate(texts))


def _existence_item(name: str, positive: bool, rng: random.Random) -> McqItem:
    kind = McqType.EXISTENCE_POSITIVE if positive else McqType.EXISTENCE_NEGATIVE
    question = f"On this chest CT, is there a '{name}' abnormality?"
    yes_first = rng.random() < 0.5
    texts = ("Yes", "No") if yes_first else ("No", "Yes")
    correct = "Yes" if positive else "No"
    answer = _LETTERS[texts.index(correct)]
    return McqItem(type=kind, question=question, options=_letterize(texts), answer=answer)


def _four_option_item(
    kind: McqType,
    question: str,
    correct: str,
    pool: Sequence[str],
    rng: random.Random,
    pool_name: str,
) -> McqItem:
    usable = [p for p in pool if normalize_name(p) != normalize_name(correct)]
    if len(usable) < 3:
        raise PoolTooSmall(
            f"{pool_name} pool has {len(usable)} usable distractors, need 3"
        )
    distractors = rng.sample(usable, 3)
    texts = [correct] + distractors
    rng.shuffle(texts)
    answer = _LETTERS[texts.index(correct)]
    return McqItem(type=kind, question=question, options=_letterize(texts), answer=answer)


def build_mcq(
    unit: AbnormalityUnit,
    negative_name: str,
    distractor_locations: Sequence[str],
    distractor_attributes: Sequence[str],
    seed: int,
) -> list[McqItem]:
    """Build 2 to 4 items for one abnormality unit.

    Always one positive and one negative existence question; a location
    question only when the unit states a location; an attribute question
    only when it states attributes.  Option order is seeded.

    Raises:
        NoNegativeAvailable: the negative name collides with the unit's name.
        PoolTooSmall: fewer than 3 usable distractors in a needed pool.
    """
    if normalize_name(negative_name) == normalize_name(unit.name):
        raise NoNegativeAvailable(
            f"negative name {negative_name!r} matches the unit name"
        )
    rng = random.Random(seed)
    items = [
        _existence_item(unit.name, positive=True, rng=rng),
        _existence_item(negative_name, positive=False, rng=rng),
    ]
    if unit.location:
        items.append(
            _four_option_item(
                McqType.LOCATION,
                f"On this chest CT, where is the '{unit.name}' mainly located?",
                unit.location,
                distractor_locations,
                rng,
                "location",
            )
        )
    if unit.attributes:
        items.append(
            _four_option_item(
                McqType.ATTRIBUTE,
                f"On this CT image, how does the '{unit.name}' appear?",
                unit.attributes,
                distractor_attributes,
                rng,
                "attribute",
            )
        )
    return items


def sample_negative_name(
    case_units: Sequence[AbnormalityUnit],
    corpus_names: Sequence[str],
    seed: int,
) -> str:
    """Seeded uniform draw from corpus names absent from this case.

    Raises:
        NoNegativeAvailable: every corpus name appears in the case.
    """
    case_norms = {normalize_name(u.name) for u in case_units}
    absent = sorted(
        {name for name in corpus_names if normalize_name(name) not in case_norms}
    )
    if not absent:
        raise NoNegativeAvailable("no corpus name is absent from this case")
    return random.Random(seed).choice(absent)


@dataclass(frozen=True)
class McqScores:
    """Per-subtask accuracies; a subtask with no items scores None."""

    existence: float | None
    location: float | None
    attribute: float | None
    average: float
    item_count: int

    def to_dict(self) -> dict:
        return {
            "existence": self.existence,
            "location": self.location,
            "attribute": self.attribute,
            "average": self.average,
            "item_count": self.item_count,
        }


def score_mcq(
    items: Sequence[tuple[str, McqItem]], predictions: Mapping[str, str]
) -> McqScores:
    """Accuracy per subtask plus the unweighted average over present subtasks.

    ``items`` pairs each item with its id; ``predictions`` maps item id to
    the chosen option letter.  Both existence types pool into one subtask.

    Raises:
        MissingPrediction: an item id has no prediction.
    """
    tallies = {"existence": [0, 0], "location": [0, 0], "attribute": [0, 0]}
    for item_id, item in items:
        if item_id not in predictions:
            raise MissingPrediction(f"no prediction for item {item_id!r}")
        predicted = predictions[item_id].strip().upper()
        subtask = (
            "existence"
            if item.type in (McqType.EXISTENCE_POSITIVE, McqType.EXISTENCE_NEGATIVE)
            else item.type.value
        )
        tallies[subtask][1] += 1
        if predicted == item.answer:
            tallies[subtask][0] += 1
    accuracies = {
        name: (correct / total if total else None)
        for name, (correct, total) in tallies.items()
    }
    present = [a for a in accuracies.values() if a is not None]
    average = sum(present) / len(present) if present else 0.0
    return McqScores(
        existence=accuracies["existence"],
        location=accuracies["location"],
        attribute=accuracies["attribute"],
        average=average,
        item_count=len(items),
    )
