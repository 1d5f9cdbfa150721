"""Clinical abnormality scoring, trajectory-integral rewards, and metric
divergence analysis for radiology report generation."""

__version__ = "0.1.0"

from .core import (
    AbnormalityUnit,
    Certainty,
    Organ,
    ReportDecomposition,
    canonical_organ,
    parse_decomposition,
    serialize_decomposition,
)
from .grpo import GroupScores, ObjectiveConfig, group_advantages, kl_estimate, surrogate_term
from .matching import (
    LexicalMatcher,
    LlmMatcher,
    MatchResult,
    UnitJudgment,
    extract_units,
    lexical_match,
    match_reports,
)
from .metrics import MetricReport, aggregate, score_case
from .reward import RewardBreakdown, RewardConfig, cabs_reward, tif_reward, unit_reward

__all__ = [
    "__version__",
    "AbnormalityUnit",
    "Certainty",
    "Organ",
    "ReportDecomposition",
    "canonical_organ",
    "parse_decomposition",
    "serialize_decomposition",
    "GroupScores",
    "ObjectiveConfig",
    "group_advantages",
    "kl_estimate",
    "surrogate_term",
    "LexicalMatcher",
    "LlmMatcher",
    "MatchResult",
    "UnitJudgment",
    "extract_units",
    "lexical_match",
    "match_reports",
    "MetricReport",
    "aggregate",
    "score_case",
    "RewardBreakdown",
    "RewardConfig",
    "cabs_reward",
    "tif_reward",
    "unit_reward",
]
