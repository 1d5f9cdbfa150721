"""Network reward service for RL trainers.

Exposes group-level scoring: a ground-truth decomposition plus a group of
rollouts comes in, per-rollout reward breakdowns and normalized group
advantages go out.  Advantages are computed server-side so every trainer
normalizes identically.

Responses are built from deterministic JSON, so identical requests under
the lexical matcher (or a warm judge cache) return byte-identical bodies;
wall-clock timing travels in the ``X-Elapsed-Seconds`` header instead of
the body for that reason.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from fastapi import FastAPI, Request, Response

from . import __version__
from .core import ReportDecomposition, decomposition_from_obj
from .errors import (
    BackendError,
    CabsError,
    ExhaustedRetries,
    GroupTooSmall,
    InputError,
    SchemaViolation,
)
from .grpo import ADVANTAGE_EPSILON, group_advantages
from .llm import LlmClient, ModelConfig, ResponseCache, Transport
from .matching import LexicalMatcher, LlmMatcher, MatchResult, match_reports
from .reward import RewardConfig, tif_reward

_REQUEST_KEYS = frozenset({"request_id", "gt_units", "rollouts", "overrides", "matcher"})
_OVERRIDE_KEYS = frozenset(
    {"alpha", "gamma", "exploration_bonus", "epsilon", "advantage_epsilon"}
)
MATCHER_BACKENDS = ("lexical", "llm")


@dataclass(frozen=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8000
    cache_dir: str | None = None
    default_matcher: str = "lexical"
    llm_endpoint: str = "http://localhost:8080/v1/chat/completions"
    llm_model: str = "judge"
    api_key_env: str = "CABS_LLM_API_KEY"
    llm_timeout: float = 60.0
    llm_max_retries: int = 3
    max_in_flight: int = 8
    reward: RewardConfig = field(default_factory=RewardConfig)
    advantage_epsilon: float = ADVANTAGE_EPSILON
    beta: float = 0.04


def load_settings(
    config_path: str | Path | None = None, env: Mapping[str, str] | None = None
) -> ServiceSettings:
    """Settings from an optional JSON file, then environment overrides."""
    env = os.environ if env is None else env
    settings = ServiceSettings()
    if config_path is not None:
        raw = json.loads(Path(config_path).read_text("utf-8"))
        reward_raw = raw.pop("reward", {})
        settings = replace(
            settings, **raw, reward=RewardConfig(**reward_raw)
        )
    if "CABS_BIND" in env:
        host, _, port = env["CABS_BIND"].rpartition(":")
        settings = replace(settings, host=host or settings.host, port=int(port))
    if "CABS_CACHE_DIR" in env:
        settings = replace(settings, cache_dir=env["CABS_CACHE_DIR"])
    if "CABS_MATCHER" in env:
        settings = replace(settings, default_matcher=env["CABS_MATCHER"])
    if "CABS_LLM_ENDPOINT" in env:
        settings = replace(settings, llm_endpoint=env["CABS_LLM_ENDPOINT"])
    if "CABS_LLM_MODEL" in env:
        settings = replace(settings, llm_model=env["CABS_LLM_MODEL"])
    reward_updates = {}
    for name, var in (
        ("alpha", "CABS_ALPHA"),
        ("gamma", "CABS_GAMMA"),
        ("exploration_bonus", "CABS_EXPLORATION_BONUS"),
        ("epsilon", "CABS_EPSILON"),
    ):
        if var in env:
            reward_updates[name] = float(env[var])
    if reward_updates:
        settings = replace(settings, reward=replace(settings.reward, **reward_updates))
    if "CABS_ADV_EPSILON" in env:
        settings = replace(settings, advantage_epsilon=float(env["CABS_ADV_EPSILON"]))
    if "CABS_BETA" in env:
        settings = replace(settings, beta=float(env["CABS_BETA"]))
    return settings


def _parse_overrides(obj: Any) -> dict[str, float]:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise SchemaViolation("overrides", "expected object")
    unknown = sorted(set(obj) - _OVERRIDE_KEYS)
    if unknown:
        raise SchemaViolation(f"overrides.{unknown[0]}", "unknown key")
    out = {}
    for key, value in obj.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaViolation(f"overrides.{key}", "expected number")
        out[key] = float(value)
    return out


@dataclass(frozen=True)
class GroupRequest:
    request_id: str
    gt_units: ReportDecomposition
    rollouts: tuple[Any, ...]  # str or ReportDecomposition
    overrides: dict[str, float]
    matcher: str


def parse_group_request(body: Any, default_matcher: str) -> GroupRequest:
    if not isinstance(body, dict):
        raise SchemaViolation("body", "expected object")
    unknown = sorted(set(body) - _REQUEST_KEYS)
    if unknown:
        raise SchemaViolation(unknown[0], "unknown key")
    if "gt_units" not in body:
        raise SchemaViolation("gt_units", "missing required key")
    if "rollouts" not in body:
        raise SchemaViolation("rollouts", "missing required key")
    gt = decomposition_from_obj(body["gt_units"], path="gt_units")
    raw_rollouts = body["rollouts"]
    if not isinstance(raw_rollouts, list):
        raise SchemaViolation("rollouts", "expected array")
    if len(raw_rollouts) < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {len(raw_rollouts)}")
    rollouts: list[Any] = []
    for i, item in enumerate(raw_rollouts):
        if isinstance(item, str):
            rollouts.append(item)
        elif isinstance(item, dict):
            rollouts.append(decomposition_from_obj(item, path=f"rollouts[{i}]"))
        else:
            raise SchemaViolation(f"rollouts[{i}]", "expected string or object")
    matcher = body.get("matcher", default_matcher)
    if matcher not in MATCHER_BACKENDS:
        raise SchemaViolation("matcher", f"must be one of {list(MATCHER_BACKENDS)}")
    request_id = body.get("request_id", "")
    if not isinstance(request_id, str):
        raise SchemaViolation("request_id", "expected string")
    return GroupRequest(
        request_id=request_id,
        gt_units=gt,
        rollouts=tuple(rollouts),
        overrides=_parse_overrides(body.get("overrides")),
        matcher=matcher,
    )


def _match_summary(match: MatchResult) -> dict:
    return {
        "judgments": [j.to_dict() for j in match.judgments],
        "false_positives": list(match.false_positives),
        "pred_count": match.pred_count,
        "hit_count": match.hit_count,
    }


class RewardEngine:
    """Request pipeline shared by the HTTP layer and in-process callers."""

    def __init__(self, settings: ServiceSettings, transport: Transport | None = None):
        self.settings = settings
        cache = ResponseCache(settings.cache_dir) if settings.cache_dir else None
        self._client = LlmClient(
            ModelConfig(
                endpoint=settings.llm_endpoint,
                model=settings.llm_model,
                api_key_env=settings.api_key_env,
                timeout=settings.llm_timeout,
                max_retries=settings.llm_max_retries,
            ),
            cache=cache,
            transport=transport,
            max_in_flight=settings.max_in_flight,
        )
        self._lexical = LexicalMatcher()

    @property
    def judge_client(self) -> LlmClient:
        return self._client

    def score_group(self, request: GroupRequest) -> dict:
        overrides = dict(request.overrides)
        adv_epsilon = overrides.pop("advantage_epsilon", self.settings.advantage_epsilon)
        reward_cfg = (
            replace(self.settings.reward, **overrides)
            if overrides
            else self.settings.reward
        )
        matcher = (
            self._lexical if request.matcher == "lexical" else LlmMatcher(self._client)
        )
        matches = [
            match_reports(request.gt_units, rollout, matcher)
            for rollout in request.rollouts
        ]
        breakdowns = [
            tif_reward(m.judgments, m.fp_count, m.pred_count, reward_cfg)
            for m in matches
        ]
        scores = group_advantages([b.total for b in breakdowns], adv_epsilon)
        return {
            "request_id": request.request_id,
            "matcher": request.matcher,
            "rewards": [b.to_dict() for b in breakdowns],
            "advantages": list(scores.advantages),
            "group_stats": {"mu": scores.mu, "sigma": scores.sigma},
            "matches": [_match_summary(m) for m in matches],
        }


def _error_response(status: int, payload: dict) -> Response:
    return Response(
        content=json.dumps(payload, ensure_ascii=False),
        status_code=status,
        media_type="application/json",
    )


def _error_payload(exc: CabsError) -> dict:
    data = exc.to_dict()
    return {
        "code": data.get("code", "error"),
        "path": data.get("path", ""),
        "message": data.get("message", str(exc)),
    }


def create_app(
    settings: ServiceSettings | None = None, transport: Transport | None = None
) -> FastAPI:
    settings = settings or ServiceSettings()
    engine = RewardEngine(settings, transport=transport)
    app = FastAPI(title="reward service", version=__version__)
    app.state.engine = engine

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "matcher_backends": list(MATCHER_BACKENDS),
        }

    @app.post("/v1/reward/group")
    async def reward_group(request: Request) -> Response:
        started = time.monotonic()
        try:
            body = await request.json()
        except Exception:
            return _error_response(
                400, {"code": "malformed_json", "path": "", "message": "body is not JSON"}
            )
        try:
            parsed = parse_group_request(body, settings.default_matcher)
            payload = engine.score_group(parsed)
        except GroupTooSmall as exc:
            return _error_response(422, _error_payload(exc))
        except InputError as exc:
            return _error_response(400, _error_payload(exc))
        except ExhaustedRetries as exc:
            status = 504 if exc.reason == "timeout" else 502
            return _error_response(status, _error_payload(exc))
        except BackendError as exc:
            return _error_response(502, _error_payload(exc))
        elapsed = time.monotonic() - started
        return Response(
            content=json.dumps(payload, ensure_ascii=False),
            media_type="application/json",
            headers={"X-Elapsed-Seconds": f"{elapsed:.6f}"},
        )

    return app


def run(settings: ServiceSettings) -> None:
    import uvicorn

    uvicorn.run(create_app(settings), host=settings.host, port=settings.port)
