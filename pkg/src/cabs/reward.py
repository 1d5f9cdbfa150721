"""Trajectory-integral reward over the ordered ground-truth units.

The per-unit hit reward is 1 for a hit with consistent location, 0.5 for a
hit with wrong location, 0 for a miss.  The total reward is the sum of four
terms:

- running cost: weighted integral of the squared prefix miss-rate along the
  unit trajectory, so early and persistent misses cost more than late ones;
- control effort: weighted penalty on the squared false-positive ratio;
- terminal: the mean unit reward;
- exploration bonus: a small constant whenever the model predicted anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidCounts
from .matching import MatchResult, UnitJudgment


@dataclass(frozen=True)
class RewardConfig:
    """Weights and constants of the trajectory-integral reward."""

    alpha: float = 1.0
    gamma: float = 1.0
    exploration_bonus: float = 0.05
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    """Every reward term, so training logs can attribute reward movement."""

    unit_rewards: tuple[float, ...]
    r_cabs: float
    running_cost: float
    control_effort: float
    terminal: float
    bonus: float
    total: float

    def to_dict(self) -> dict:
        return {
            "unit_rewards": list(self.unit_rewards),
            "r_cabs": self.r_cabs,
            "running_cost": self.running_cost,
            "control_effort": self.control_effort,
            "terminal": self.terminal,
            "bonus": self.bonus,
            "total": self.total,
        }


def unit_reward(j: UnitJudgment) -> float:
    """Hit reward: hit * (l*d + |l - d| / 2) with d tied to the hit itself.

    A hit means the entity was identified, so the entity indicator equals
    the hit indicator; location correctness then selects 1.0 versus 0.5.
    """
    hit = 1 if j.hit else 0
    d = hit
    l = 1 if j.location_match else 0
    return hit * (l * d + 0.5 * abs(l - d))


def cabs_reward(units: Sequence[UnitJudgment]) -> float:
    """Mean unit reward; 0 by convention for an empty trajectory."""
    if not units:
        return 0.0
    rewards = [unit_reward(j) for j in units]
    return sum(rewards) / len(rewards)


def tif_reward(
    units: Sequence[UnitJudgment], fp: int, m: int, cfg: RewardConfig | None = None
) -> RewardBreakdown:
    """Full trajectory-integral reward.

    ``units`` must follow the reference trajectory (document order of the
    ground truth); ``fp`` and ``m`` are the false-positive and predicted
    entity counts.

    Raises:
        InvalidCounts: negative counts or fp > m.
    """
    cfg = cfg or RewardConfig()
    if fp < 0 or m < 0:
        raise InvalidCounts("fp and m must be non-negative")
    if fp > m:
        raise InvalidCounts(f"fp={fp} exceeds m={m}")

    rewards = tuple(unit_reward(j) for j in units)
    k_total = len(rewards)

    if k_total == 0:
        running_cost = 0.0
        terminal = 0.0
    else:
        prefix_sum = 0.0
        squared_error_sum = 0.0
        for k, r in enumerate(rewards, start=1):
            prefix_sum += r
            miss = 1.0 - prefix_sum / k
            squared_error_sum += miss * miss
        running_cost = cfg.alpha - (cfg.alpha / k_total) * squared_error_sum
        terminal = sum(rewards) / k_total

    ratio = fp / (m + cfg.epsilon)
    control_effort = cfg.gamma * (1.0 - ratio * ratio)
    bonus = cfg.exploration_bonus if m > 0 else 0.0
    total = running_cost + control_effort + terminal + bonus
    return RewardBreakdown(
        unit_rewards=rewards,
        r_cabs=terminal,
        running_cost=running_cost,
        control_effort=control_effort,
        terminal=terminal,
        bonus=bonus,
        total=total,
    )


def reward_from_match(m: MatchResult, cfg: RewardConfig | None = None) -> RewardBreakdown:
    """Convenience wrapper wiring a match result into the reward."""
    return tif_reward(m.judgments, m.fp_count, m.pred_count, cfg)
