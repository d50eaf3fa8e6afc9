"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class TvsError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(TvsError, ValueError):
    """Input data violates a documented invariant."""


class TemplateError(ValidationError):
    """Prompt template is missing required placeholders or uses forbidden ones."""


class ProtocolError(TvsError):
    """An agent reply stayed malformed after the single repair re-prompt."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class BudgetError(TvsError):
    """A call budget was exhausted before the exchange finished."""

    def __init__(self, message: str, transcript: list | None = None):
        super().__init__(message)
        self.transcript = transcript or []


class BackendError(TvsError):
    """A live backend failed; ``retryable`` marks transient transport faults."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class FeatureUnavailableError(TvsError):
    """A pluggable backend required for this feature is not configured."""


class MissingCaptionError(TvsError):
    """Offline caption lookup missed; never silently substituted."""

    def __init__(self, frame_index: int):
        super().__init__(f"no precomputed caption for frame {frame_index}")
        self.frame_index = frame_index


class CaptionBackendError(BackendError):
    """Captioner failure; carries the frame index so callers can retry."""

    def __init__(self, message: str, frame_index: int):
        super().__init__(message, retryable=True)
        self.frame_index = frame_index


class PlanError(TvsError):
    """Tool-plan text failed to parse or execute."""

    def __init__(self, message: str, line: int | None = None, plan_text: str | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.plan_text = plan_text


class MockMismatchError(AssertionError, TvsError):
    """A scripted backend received a request its next entry does not match."""
