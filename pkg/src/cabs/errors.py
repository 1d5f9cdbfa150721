"""Exception taxonomy shared by every module.

Two broad families matter to callers:

- ``InputError`` subclasses mean the caller handed us something invalid
  (bad JSON, schema breaks, impossible counts).  The CLI maps these to
  exit code 3.
- ``BackendError`` subclasses mean an external judge/model misbehaved
  (auth failures, retry exhaustion, unusable responses).  Exit code 4.
"""

from __future__ import annotations


class CabsError(Exception):
    """Base class for all library errors."""

    code = "error"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


class InputError(CabsError):
    """Caller-supplied data is invalid."""

    code = "input_error"


class BackendError(CabsError):
    """An external model/service failed."""

    code = "backend_error"


# --- parsing / schema ------------------------------------------------------

class MalformedJson(InputError):
    code = "malformed_json"


class SchemaViolation(InputError):
    """Structural validation failure; ``path`` names the offending field."""

    code = "schema_violation"

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.detail = message

    def to_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.detail}


class EmptyLabel(InputError):
    code = "empty_label"


# --- extraction / matching -------------------------------------------------

class EmptyReport(InputError):
    code = "empty_report"


class ExtractionFailed(BackendError):
    code = "extraction_failed"


class MatchFailed(BackendError):
    code = "match_failed"


class LengthMismatch(InputError):
    code = "length_mismatch"


# --- metrics / rewards / advantages ----------------------------------------

class EmptyCorpus(InputError):
    code = "empty_corpus"


class InvalidCounts(InputError):
    code = "invalid_counts"


class GroupTooSmall(InputError):
    code = "group_too_small"


class NonPositiveRatio(InputError):
    code = "non_positive_ratio"


# --- surface metrics / score tables ----------------------------------------

class EmptyReference(InputError):
    code = "empty_reference"


class DuplicateKey(InputError):
    code = "duplicate_key"


class BadNumber(InputError):
    code = "bad_number"


class ZeroVariance(InputError):
    code = "zero_variance"


class MissingCell(InputError):
    code = "missing_cell"


# --- perturbation / MCQ -----------------------------------------------------

class InsufficientUnits(InputError):
    code = "insufficient_units"


class PoolTooSmall(InputError):
    code = "pool_too_small"


class NoNegativeAvailable(InputError):
    code = "no_negative_available"


class MissingPrediction(InputError):
    code = "missing_prediction"


# --- LLM client --------------------------------------------------------------

class MissingBinding(InputError):
    code = "missing_binding"

    def __init__(self, name: str):
        super().__init__(f"unbound prompt placeholder: {name}")
        self.name = name


class Unparseable(BackendError):
    code = "unparseable_response"


class AuthError(BackendError):
    code = "auth_error"


class ExhaustedRetries(BackendError):
    code = "exhausted_retries"

    def __init__(self, message: str, reason: str = "transient"):
        super().__init__(message)
        self.reason = reason  # "transient" or "timeout"


class ResponseShapeError(BackendError):
    code = "response_shape_error"
