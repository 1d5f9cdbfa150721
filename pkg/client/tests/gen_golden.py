"""Regenerate the golden fixtures from the primary library.

Run from this directory: python3 gen_golden.py

Expected values go through the library's public pipeline (match, reward,
advantages) rather than the service process, so the client test checks the
whole wire path against an independent in-process computation.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "tests"))

from cabs.core import decomposition_from_obj
from cabs.grpo import group_advantages
from cabs.matching import LexicalMatcher, match_reports
from cabs.reward import RewardConfig, tif_reward

from synth import random_decomposition

OUT = Path(__file__).parent / "golden" / "fixtures.json"


def build_fixture(index: int, rng: random.Random) -> dict:
    gt = random_decomposition(rng, k_min=1, k_max=5)
    group_size = rng.randint(2, 5)
    rollouts: list[dict] = [gt.to_dict()]
    for _ in range(group_size - 1):
        other = random_decomposition(rng, k_min=0, k_max=5)
        rollouts.append(other.to_dict())
    rng.shuffle(rollouts)
    overrides = {}
    if rng.random() < 0.5:
        overrides = {"alpha": round(rng.uniform(0.2, 2.0), 3), "gamma": round(rng.uniform(0.2, 2.0), 3)}

    cfg = RewardConfig(**{k: v for k, v in overrides.items()})
    matcher = LexicalMatcher()
    breakdowns = []
    for rollout in rollouts:
        match = match_reports(gt, decomposition_from_obj(rollout), matcher)
        breakdowns.append(tif_reward(match.judgments, match.fp_count, match.pred_count, cfg))
    scores = group_advantages([b.total for b in breakdowns])
    return {
        "name": f"golden-{index:02d}",
        "request": {
            "gt_units": gt.to_dict(),
            "rollouts": rollouts,
            "overrides": overrides,
            "matcher": "lexical",
        },
        "expected": {
            "rewards": [b.total for b in breakdowns],
            "advantages": list(scores.advantages),
            "mu": scores.mu,
            "sigma": scores.sigma,
            "breakdowns": [b.to_dict() for b in breakdowns],
        },
    }


def main() -> None:
    rng = random.Random(20260810)
    fixtures = [build_fixture(i, rng) for i in range(20)]
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixtures, ensure_ascii=False, indent=2), "utf-8")
    print(f"wrote {len(fixtures)} fixtures to {OUT}")


if __name__ == "__main__":
    main()
