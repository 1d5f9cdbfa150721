"""Group-relative advantage normalization and the clipped surrogate pieces.

Pure numerics only: no autodiff, no parameter updates, no sampling.  A
trainer feeds per-rollout rewards in and gets back normalized advantages,
per-token surrogate values, and a nonnegative KL estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import GroupTooSmall, LengthMismatch, NonPositiveRatio

ADVANTAGE_EPSILON = 1e-6


@dataclass(frozen=True)
class GroupScores:
    """Rewards of one rollout group with their normalized advantages."""

    rewards: tuple[float, ...]
    mu: float
    sigma: float
    advantages: tuple[float, ...]
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "rewards": list(self.rewards),
            "mu": self.mu,
            "sigma": self.sigma,
            "advantages": list(self.advantages),
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True)
class ObjectiveConfig:
    """Clip range and KL weight of the policy objective."""

    clip_epsilon: float = 0.2
    beta: float = 0.04

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def group_advantages(
    rewards: Sequence[float], epsilon: float = ADVANTAGE_EPSILON
) -> GroupScores:
    """Normalize rewards to (r - mean) / (population std + epsilon).

    The group is the full population of sampled rollouts for one prompt, so
    the population (not sample) standard deviation applies.  A zero-variance
    group yields all-zero advantages regardless of epsilon.

    Centering on the first reward before the statistics keeps the result
    invariant under exactly-representable reward shifts.

    Raises:
        GroupTooSmall: fewer than two rewards.
    """
    if len(rewards) < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {len(rewards)}")
    g = len(rewards)
    origin = rewards[0]
    centered = [r - origin for r in rewards]
    mean_centered = math.fsum(centered) / g
    deviations = [c - mean_centered for c in centered]
    sigma = math.sqrt(math.fsum(d * d for d in deviations) / g)
    mu = origin + mean_centered
    if sigma == 0.0:
        advantages = tuple(0.0 for _ in rewards)
    else:
        advantages = tuple(d / (sigma + epsilon) for d in deviations)
    return GroupScores(
        rewards=tuple(rewards),
        mu=mu,
        sigma=sigma,
        advantages=advantages,
        epsilon=epsilon,
    )


def surrogate_term(
    lambda_ratio: float, advantage: float, cfg: ObjectiveConfig | None = None
) -> float:
    """min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).

    Raises:
        NonPositiveRatio: the importance ratio is not strictly positive.
    """
    cfg = cfg or ObjectiveConfig()
    if lambda_ratio <= 0:
        raise NonPositiveRatio(f"importance ratio must be positive, got {lambda_ratio}")
    clipped = min(max(lambda_ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
    return min(lambda_ratio * advantage, clipped * advantage)


def kl_estimate(
    logp_policy: Sequence[float], logp_ref: Sequence[float]
) -> float:
    """Nonnegative per-token KL estimator, averaged over tokens.

    Uses exp(delta) - delta - 1 with delta = logp_ref - logp_policy, which
    is zero exactly when the distributions agree and nonnegative always.

    Raises:
        LengthMismatch: sequences differ in length or are empty.
    """
    if len(logp_policy) != len(logp_ref):
        raise LengthMismatch(
            f"log-prob lengths differ: {len(logp_policy)} vs {len(logp_ref)}"
        )
    if not logp_policy:
        raise LengthMismatch("log-prob sequences are empty")
    total = math.fsum(
        math.exp(ref - pol) - (ref - pol) - 1.0
        for pol, ref in zip(logp_policy, logp_ref)
    )
    return total / len(logp_policy)
