"""Surface-similarity metrics plus ingestion of externally computed scores.

The n-gram and longest-common-subsequence metrics are self-contained so the
divergence experiments run hermetically; model-based scores join through a
CSV file instead of being recomputed here.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import BadNumber, DuplicateKey, EmptyReference

PRECISION_FLOOR = 1e-9
ROUGE_BETA = 1.2

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, split whitespace."""
    return _TOKEN_RE.findall(text.lower())


def _as_tokens(value: str | Sequence[str]) -> list[str]:
    if isinstance(value, str):
        return tokenize(value)
    return [t.lower() for t in value]


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def bleu(
    candidate: str | Sequence[str], reference: str | Sequence[str], max_n: int = 4
) -> float:
    """Geometric mean of clipped n-gram precisions times brevity penalty.

    Each defined-but-zero precision is floored at a small constant before
    the log, so short clinical sentences stay scorable; the order cap drops
    to the shorter sequence length so a perfect copy scores exactly 1.

    Raises:
        EmptyReference: the reference has no tokens.
    """
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in [1, 4]")
    cand = _as_tokens(candidate)
    ref = _as_tokens(reference)
    if not ref:
        raise EmptyReference("reference is empty")
    if not cand:
        return 0.0
    effective_n = min(max_n, len(cand), len(ref))
    log_sum = 0.0
    for n in range(1, effective_n + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        overlap = sum(
            min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items()
        )
        total = sum(cand_counts.values())
        precision = overlap / total if total else 0.0
        log_sum += math.log(max(precision, PRECISION_FLOOR))
    geo_mean = math.exp(log_sum / effective_n)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return brevity * geo_mean


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(
    candidate: str | Sequence[str],
    reference: str | Sequence[str],
    beta: float = ROUGE_BETA,
) -> float:
    """Longest-common-subsequence F-measure with recall weighted by beta.

    Raises:
        EmptyReference: the reference has no tokens.
    """
    cand = _as_tokens(candidate)
    ref = _as_tokens(reference)
    if not ref:
        raise EmptyReference("reference is empty")
    if not cand:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    beta_sq = beta * beta
    return (1 + beta_sq) * precision * recall / (recall + beta_sq * precision)


@dataclass
class ScoreTable:
    """Scores keyed by (case id, metric name); keys unique, values finite."""

    _rows: dict[tuple[str, str], float] = field(default_factory=dict)

    def add(self, case_id: str, metric: str, score: float) -> None:
        key = (case_id, metric)
        if key in self._rows:
            raise DuplicateKey(f"duplicate score for case={case_id!r} metric={metric!r}")
        if not math.isfinite(score):
            raise BadNumber(f"non-finite score for case={case_id!r} metric={metric!r}")
        self._rows[key] = score

    def get(self, case_id: str, metric: str) -> float | None:
        return self._rows.get((case_id, metric))

    def case_ids(self) -> list[str]:
        return sorted({case_id for case_id, _ in self._rows})

    def metrics(self) -> list[str]:
        return sorted({metric for _, metric in self._rows})

    def __len__(self) -> int:
        return len(self._rows)

    def items(self):
        return self._rows.items()


def load_external_scores(path: str | Path) -> ScoreTable:
    """Read a ``case_id,metric,score`` CSV into a validated table.

    Raises:
        DuplicateKey: repeated (case, metric) pair.
        BadNumber: unparseable or non-finite score.
    """
    table = ScoreTable()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"case_id", "metric", "score"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise BadNumber(f"expected header case_id,metric,score in {path}")
        for row in reader:
            try:
                score = float(row["score"])
            except (TypeError, ValueError) as exc:
                raise BadNumber(f"bad score {row['score']!r}") from exc
            if not math.isfinite(score):
                raise BadNumber(f"non-finite score {row['score']!r}")
            table.add(row["case_id"], row["metric"], score)
    return table
