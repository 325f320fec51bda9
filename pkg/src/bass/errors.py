"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BassError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(BassError, ValueError):
    """Operands whose declared dimensions do not line up."""


class EncoderMismatchError(BassError, ValueError):
    """Embeddings produced by different text encoders cannot be mixed."""


class InfeasibleCountError(BassError, ValueError):
    """More distinct swap vectors requested than the admissible set holds."""


class DegenerateFeatureError(BassError, ValueError):
    """Zero or non-finite feature vector where a direction is required."""


class ConfigError(BassError, ValueError):
    """Pipeline configuration violates a declared invariant."""


class SerializationError(BassError, ValueError):
    """Malformed bytes for one of the binary file formats."""


class ProtocolError(BassError, ValueError):
    """Malformed request or response payload on the wire protocol."""


class BackendError(BassError, RuntimeError):
    """Backend call failed after exhausting retries.

    ``code`` mirrors the wire protocol's error code field when the failure
    came from a remote service.
    """

    def __init__(self, message: str, *, code: str = "backend_error"):
        super().__init__(message)
        self.code = code
