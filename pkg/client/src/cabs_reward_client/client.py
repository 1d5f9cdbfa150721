"""HTTP client for the group reward service.

All math stays server-side: this module only moves JSON, so a trainer in
any process sees exactly the numbers the service computed, in rollout
order.  One ``httpx.Client`` per ``RewardClient`` gives connection pooling
and safe concurrent use from multiple rollout workers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx

DEFAULT_BASE_URL = "http://127.0.0.1:8000"
GROUP_PATH = "/v1/reward/group"
HEALTH_PATH = "/healthz"


class ServiceUnreachable(Exception):
    """The service could not be reached at all."""


class ServiceError(Exception):
    """The service answered with an error body."""

    def __init__(self, status_code: int, body: dict):
        message = body.get("message", "") if isinstance(body, dict) else str(body)
        super().__init__(f"HTTP {status_code}: {message}")
        self.status_code = status_code
        self.body = body


@dataclass(frozen=True)
class ClientConfig:
    """Connection settings; reward overrides default to the service's own."""

    base_url: str = DEFAULT_BASE_URL
    timeout: float = 60.0
    retries: int = 2
    default_overrides: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "ClientConfig":
        env = os.environ if env is None else env
        return cls(
            base_url=env.get("CABS_REWARD_URL", DEFAULT_BASE_URL),
            timeout=float(env.get("CABS_REWARD_TIMEOUT", "60")),
            retries=int(env.get("CABS_REWARD_RETRIES", "2")),
        )


@dataclass(frozen=True)
class GroupResult:
    """Service response, field for field; index i is request rollout i."""

    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    breakdowns: tuple[dict, ...]
    mu: float
    sigma: float
    matches: tuple[dict, ...]
    raw: dict


class RewardClient:
    """Synchronous client; safe to share across rollout worker threads."""

    def __init__(self, config: ClientConfig | None = None):
        self.config = config or ClientConfig.from_env()
        transport = httpx.HTTPTransport(retries=self.config.retries)
        self._http = httpx.Client(
            base_url=self.config.base_url,
            timeout=self.config.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "RewardClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def health(self) -> dict:
        return self._request("GET", HEALTH_PATH)

    def score_group(
        self,
        gt_units: dict,
        rollouts: Sequence[str | dict],
        overrides: Mapping[str, float] | None = None,
        matcher: str | None = None,
        request_id: str = "",
    ) -> GroupResult:
        """Score one rollout group against its ground-truth decomposition.

        Returns exactly the service's response fields with no client-side
        recomputation; rollout order is preserved.

        Raises:
            ServiceUnreachable: connection failure after retries.
            ServiceError: non-2xx response, carrying the service's
                machine-readable error body.
        """
        body: dict[str, Any] = {
            "request_id": request_id,
            "gt_units": gt_units,
            "rollouts": list(rollouts),
        }
        merged = dict(self.config.default_overrides)
        if overrides:
            merged.update(overrides)
        if merged:
            body["overrides"] = merged
        if matcher is not None:
            body["matcher"] = matcher
        payload = self._request("POST", GROUP_PATH, json=body)
        return GroupResult(
            rewards=tuple(r["total"] for r in payload["rewards"]),
            advantages=tuple(payload["advantages"]),
            breakdowns=tuple(payload["rewards"]),
            mu=payload["group_stats"]["mu"],
            sigma=payload["group_stats"]["sigma"],
            matches=tuple(payload["matches"]),
            raw=payload,
        )

    def as_callback(
        self,
        resolve_gt: Callable[[str], dict],
        use_advantages: bool = False,
        matcher: str | None = None,
    ) -> Callable[[str, Sequence[str]], list[float]]:
        """Adapter for the common trainer callback shape.

        The returned callable takes ``(prompt, group_of_responses)`` and
        returns one scalar per response: raw totals by default, or the
        service-normalized advantages when ``use_advantages`` is set.
        ``resolve_gt`` maps a prompt to its ground-truth decomposition.
        """

        def callback(prompt: str, responses: Sequence[str]) -> list[float]:
            result = self.score_group(
                resolve_gt(prompt), list(responses), matcher=matcher
            )
            values = result.advantages if use_advantages else result.rewards
            return list(values)

        return callback

    def _request(self, method: str, path: str, json: dict | None = None) -> dict:
        try:
            response = self._http.request(method, path, json=json)
        except httpx.ConnectError as exc:
            raise ServiceUnreachable(f"cannot reach {self.config.base_url}: {exc}") from exc
        except httpx.TimeoutException as exc:
            raise ServiceUnreachable(f"timed out against {self.config.base_url}") from exc
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                body = {"message": response.text}
            raise ServiceError(response.status_code, body)
        return response.json()
