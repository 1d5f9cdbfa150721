"""Client SDK for the group reward service."""

__version__ = "0.1.0"

from .client import (
    ClientConfig,
    GroupResult,
    RewardClient,
    ServiceError,
    ServiceUnreachable,
)

__all__ = [
    "__version__",
    "ClientConfig",
    "GroupResult",
    "RewardClient",
    "ServiceError",
    "ServiceUnreachable",
]
