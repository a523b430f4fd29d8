"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EopError(Exception):
    """Base class for all errors raised by this package."""


class GatewayError(EopError):
    """Base class for generation-backend failures."""


class TransportError(GatewayError):
    """Network or HTTP failure that persisted through the retry budget."""


class ProtocolError(GatewayError):
    """The backend answered, but the payload is not the expected shape."""


class ScriptMissError(GatewayError):
    """A mock backend received a request no script entry matches."""


class NormalizationError(EopError):
    """A token could not be canonicalized under its answer kind."""


class ExtractionError(EopError):
    """No final answer could be extracted from a model response."""


class RedefinitionError(EopError):
    """Question redefinition produced unusable output."""


class DatasetError(EopError):
    """A dataset file is missing, malformed, or inconsistent."""


class ConfigurationError(EopError):
    """Invalid or conflicting run configuration."""


class EngineAbort(EopError):
    """A run died mid-flight; carries whatever transcript was built so far.

    The evaluation harness persists the partial transcript for debugging and
    records the problem as failed, so one bad API call cannot sink a run.
    """

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript
