"""Counterfactual perturbation pools and rank-agreement analysis.

A variant pool starts from a ground-truth decomposition and derives
candidate reports with 0..5 controlled edits; fewer edits means higher
clinical priority (text rank 1).  The concordance ratio measures how often
a metric's ordering of the pool agrees with that priority, and the rank
correlation matrix compares whole metric suites across models.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AbnormalityUnit, Certainty, Organ, ReportDecomposition
from .errors import InsufficientUnits, LengthMismatch, MissingCell, ZeroVariance
from .matching import LATERALITY_TOKENS, default_lexicon, lexical_match, normalize_name
from .metrics import score_case
from .surface import ScoreTable, bleu, rouge_l

EDIT_KINDS = ("delete", "substitute", "flip_laterality", "replace_attribute", "inject")

# Edits that strictly reduce detection F1: they remove a match, corrupt a
# matched name, or add a false positive.  Location and attribute edits only
# move the conditional scores.
STRICT_EDIT_KINDS = ("delete", "substitute", "inject")

MAX_EDITS = 5

_DEFAULT_ATTRIBUTE_POOL = (
    "small and well-defined",
    "large and ill-defined",
    "multiple and scattered",
    "diffuse and confluent",
    "calcified and dense",
    "mildly prominent",
)

_LATERALITY_FLIP = {"left": "right", "right": "left", "bilateral": "left"}


@dataclass(frozen=True)
class Edit:
    kind: str
    target: int  # unit index for unit edits, insertion slot for injections
    payload: str = ""


@dataclass(frozen=True)
class Variant:
    """One perturbed candidate: edit count, units, and rendered text."""

    k: int
    units: ReportDecomposition
    rendered_text: str
    seed_index: int


@dataclass(frozen=True)
class VariantPool:
    base: ReportDecomposition
    variants: tuple[Variant, ...]
    text_ranks: tuple[int, ...]


@dataclass(frozen=True)
class ConcordanceResult:
    phi: float
    concordant_pairs: float
    n: int


def render_text(decomposition: ReportDecomposition) -> str:
    """Deterministic one-sentence-per-unit rendering, in unit order."""
    sentences = []
    for unit in decomposition.abnormalities:
        parts = []
        if unit.location:
            parts.append(f"In the {unit.location},")
        if unit.attributes:
            parts.append(unit.attributes)
        parts.append(f"{unit.name} is noted.")
        sentence = " ".join(parts)
        sentences.append(sentence[0].upper() + sentence[1:])
    return " ".join(sentences)


def _usable_distractors(
    distractors: Sequence[str], gt: ReportDecomposition
) -> list[str]:
    gt_norms = {normalize_name(u.name) for u in gt.abnormalities}
    lexicon = default_lexicon()
    gt_entries = {
        id(e) for u in gt.abnormalities if (e := lexicon.lookup(u.name)) is not None
    }
    usable = []
    for name in distractors:
        if normalize_name(name) in gt_norms:
            continue
        entry = lexicon.lookup(name)
        if entry is not None and id(entry) in gt_entries:
            continue
        usable.append(name)
    return usable


_KILL_KINDS = frozenset({"delete", "substitute"})


def _make_edit_plan(
    gt: ReportDecomposition,
    distractors: Sequence[str],
    rng: random.Random,
    allowed: Sequence[str],
    attribute_pool: Sequence[str],
) -> list[Edit]:
    """Draw up to MAX_EDITS edits as one prefix-stable plan.

    Unit edits claim distinct units while any remain; the balance of the
    plan becomes distractor injections.  Unit edits and injections then
    interleave in seeded order, except that when the plan kills every
    matched unit, the final kill moves to the end: each nested variant must
    stay strictly worse than the previous one, and edits after a fully
    killed trajectory could not be.
    """
    pool = _usable_distractors(distractors, gt)
    rng.shuffle(pool)
    pool_iter = iter(pool)

    unit_kinds = [k for k in allowed if k != "inject"]
    targets = list(range(gt.unit_count))
    rng.shuffle(targets)

    unit_edits: list[Edit] = []
    if unit_kinds:
        for target in targets:
            if len(unit_edits) >= MAX_EDITS:
                break
            unit = gt.abnormalities[target]
            applicable = []
            for kind in unit_kinds:
                if kind == "flip_laterality":
                    tokens = set(unit.location.lower().split())
                    if not tokens & LATERALITY_TOKENS:
                        continue
                applicable.append(kind)
            if not applicable:
                continue
            kind = rng.choice(applicable)
            if kind == "substitute":
                name = next(pool_iter, None)
                if name is None:
                    if "delete" not in applicable:
                        continue
                    kind = "delete"
                    unit_edits.append(Edit(kind, target))
                    continue
                unit_edits.append(Edit(kind, target, payload=name))
            elif kind == "replace_attribute":
                choices = [a for a in attribute_pool if a != unit.attributes]
                unit_edits.append(Edit(kind, target, payload=rng.choice(choices)))
            else:
                unit_edits.append(Edit(kind, target))

    injections: list[Edit] = []
    if "inject" in allowed:
        while len(unit_edits) + len(injections) < MAX_EDITS:
            name = next(pool_iter, None)
            if name is None:
                break
            slot = rng.randint(0, gt.unit_count)
            injections.append(Edit("inject", slot, payload=name))

    plan = unit_edits + injections
    rng.shuffle(plan)
    kill_count = sum(1 for e in plan if e.kind in _KILL_KINDS)
    if 0 < kill_count == gt.unit_count and plan[-1].kind not in _KILL_KINDS:
        last_kill = max(i for i, e in enumerate(plan) if e.kind in _KILL_KINDS)
        plan.append(plan.pop(last_kill))
    return plan


def _apply_plan(gt: ReportDecomposition, plan: Sequence[Edit]) -> ReportDecomposition:
    deleted: set[int] = set()
    replaced_name: dict[int, str] = {}
    flipped: set[int] = set()
    new_attribute: dict[int, str] = {}
    injected: dict[int, list[str]] = {}  # insertion slot (original index space)
    for edit in plan:
        if edit.kind == "delete":
            deleted.add(edit.target)
        elif edit.kind == "substitute":
            replaced_name[edit.target] = edit.payload
        elif edit.kind == "flip_laterality":
            flipped.add(edit.target)
        elif edit.kind == "replace_attribute":
            new_attribute[edit.target] = edit.payload
        elif edit.kind == "inject":
            injected.setdefault(edit.target, []).append(edit.payload)

    lexicon = default_lexicon()

    def distractor_unit(name: str) -> AbnormalityUnit:
        entry = lexicon.lookup(name)
        return AbnormalityUnit(
            name=name,
            evidence=f"{name} is noted",
            location="",
            attributes="",
            certainty=Certainty.DEFINITE,
            organ=entry.organ if entry is not None else Organ.OTHER,
        )

    units: list[AbnormalityUnit] = []
    for i, unit in enumerate(gt.abnormalities):
        for name in injected.get(i, ()):
            units.append(distractor_unit(name))
        if i in deleted:
            continue
        name = replaced_name.get(i, unit.name)
        location = unit.location
        if i in flipped:
            words = location.split()
            location = " ".join(
                _LATERALITY_FLIP.get(w.lower(), w) for w in words
            )
        attributes = new_attribute.get(i, unit.attributes)
        units.append(
            AbnormalityUnit(
                name=name,
                evidence=f"{name} is noted",
                location=location,
                attributes=attributes,
                certainty=unit.certainty,
                organ=unit.organ,
            )
        )
    for name in injected.get(gt.unit_count, ()):
        units.append(distractor_unit(name))
    return ReportDecomposition.from_units(units)


def perturb(
    gt: ReportDecomposition,
    k: int,
    distractors: Sequence[str],
    seed: int,
    edits: Sequence[str] = EDIT_KINDS,
    attribute_pool: Sequence[str] = _DEFAULT_ATTRIBUTE_POOL,
) -> Variant:
    """Apply k seeded edits to a copy of the ground truth.

    Unit edits claim distinct units while any remain; the rest of the edit
    budget injects distractor units, interleaved in seeded order.  Variants
    are nested: the k-edit variant extends the (k-1)-edit variant for the
    same seed.

    Raises:
        InsufficientUnits: k edits cannot be realized from this ground truth
            and distractor pool.
    """
    if not 0 <= k <= MAX_EDITS:
        raise ValueError(f"k must be in [0, {MAX_EDITS}]")
    if k > 0 and gt.unit_count == 0:
        raise InsufficientUnits("cannot perturb an empty decomposition")
    unknown = set(edits) - set(EDIT_KINDS)
    if unknown:
        raise ValueError(f"unknown edit kinds: {sorted(unknown)}")
    rng = random.Random(seed)
    plan = _make_edit_plan(gt, distractors, rng, edits, attribute_pool)
    if k > len(plan):
        raise InsufficientUnits(
            f"only {len(plan)} edits realizable, {k} requested"
        )
    units = _apply_plan(gt, plan[:k])
    return Variant(k=k, units=units, rendered_text=render_text(units), seed_index=k)


def build_pool(
    gt: ReportDecomposition,
    distractors: Sequence[str],
    seed: int,
    max_edits: int = MAX_EDITS,
    edits: Sequence[str] = EDIT_KINDS,
) -> VariantPool:
    """One variant per edit count 0..max_edits, ranked by edit count."""
    variants = tuple(
        perturb(gt, k, distractors, seed, edits=edits) for k in range(max_edits + 1)
    )
    ranks = tuple(range(1, len(variants) + 1))
    return VariantPool(base=gt, variants=variants, text_ranks=ranks)


def concordance(
    text_ranks: Sequence[int], metric_scores: Sequence[float]
) -> ConcordanceResult:
    """Fraction of pairs whose metric ordering matches the text ordering.

    Rank 1 is the clinically best variant and should carry the highest
    score.  Metric ties earn half credit, so a constant metric lands at the
    uninformative baseline of 0.5.

    Raises:
        LengthMismatch: input lengths differ or n < 2.
    """
    n = len(text_ranks)
    if n != len(metric_scores):
        raise LengthMismatch(f"{n} ranks vs {len(metric_scores)} scores")
    if n < 2:
        raise LengthMismatch("need at least 2 items")
    concordant = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rank_delta = text_ranks[i] - text_ranks[j]
            score_delta = metric_scores[i] - metric_scores[j]
            if score_delta == 0:
                concordant += 0.5
            elif rank_delta * score_delta < 0:
                # lower rank number (better) pairs with higher score
                concordant += 1.0
    pairs = n * (n - 1) / 2
    return ConcordanceResult(phi=concordant / pairs, concordant_pairs=concordant, n=n)


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j) / 2 + 1
        for idx in order[i : j + 1]:
            ranks[idx] = average
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation: Pearson correlation of average-ranked values.

    Raises:
        LengthMismatch: lengths differ or n < 2.
        ZeroVariance: either input is constant.
    """
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    if len(xs) < 2:
        raise LengthMismatch("need at least 2 values")
    rx = _average_ranks(xs)
    ry = _average_ranks(ys)
    n = len(rx)
    mean_x = sum(rx) / n
    mean_y = sum(ry) / n
    dx = [x - mean_x for x in rx]
    dy = [y - mean_y for y in ry]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0 or var_y == 0:
        raise ZeroVariance("rank variance is zero")
    cov = math.fsum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


POOL_METRICS = ("cabs_f1", "bleu", "rouge_l")


def score_pool(pool: VariantPool) -> dict[str, list[float]]:
    """Score every variant against the pool's base, per metric.

    The detection score comes from the lexical matcher; the surface scores
    compare rendered variant text against the rendered base text.
    """
    base_text = render_text(pool.base)
    scores: dict[str, list[float]] = {name: [] for name in POOL_METRICS}
    for variant in pool.variants:
        match = lexical_match(pool.base.abnormalities, variant.units.abnormalities)
        scores["cabs_f1"].append(score_case(match, pool.base).f1)
        scores["bleu"].append(bleu(variant.rendered_text, base_text))
        scores["rouge_l"].append(rouge_l(variant.rendered_text, base_text))
    return scores


def pool_concordance(pool: VariantPool) -> dict[str, ConcordanceResult]:
    """Concordance ratio of each metric's ordering against the text ranks."""
    scores = score_pool(pool)
    return {
        name: concordance(pool.text_ranks, values) for name, values in scores.items()
    }


def correlation_matrix(scores: ScoreTable) -> tuple[list[str], np.ndarray]:
    """Pairwise rank correlation between metrics over a complete grid.

    Rows of the table are (model id, metric) cells; every model must carry
    every metric.  Returns metric names (sorted) and the symmetric matrix
    with unit diagonal.

    Raises:
        MissingCell: the (model, metric) grid has a hole.
    """
    models = scores.case_ids()
    metrics = scores.metrics()
    columns: dict[str, list[float]] = {}
    for metric in metrics:
        column = []
        for model in models:
            value = scores.get(model, metric)
            if value is None:
                raise MissingCell(f"missing score for model={model!r} metric={metric!r}")
            column.append(value)
        columns[metric] = column
    size = len(metrics)
    matrix = np.eye(size)
    for i in range(size):
        for j in range(i + 1, size):
            rho = spearman(columns[metrics[i]], columns[metrics[j]])
            matrix[i, j] = matrix[j, i] = rho
    return metrics, matrix
