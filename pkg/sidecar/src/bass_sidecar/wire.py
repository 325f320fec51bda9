"""Wire payload helpers: base64 little-endian float32 arrays and error bodies.

The sidecar talks to the sampling engine only through the HTTP protocol, so
these helpers are self-contained on purpose.
"""

from __future__ import annotations

import base64

import numpy as np


class WireError(ValueError):
    """Malformed request payload; maps to a 400 response."""


def f32_to_b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode(
        "ascii"
    )


def b64_to_f32(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise WireError(f"invalid base64 float payload: {exc}") from exc
    if len(raw) % 4 != 0:
        raise WireError(f"float payload length {len(raw)} not a multiple of 4")
    return np.frombuffer(raw, dtype="<f4")


def bytes_to_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64_to_bytes(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except Exception as exc:
        raise WireError(f"invalid base64 payload: {exc}") from exc


def error_payload(code: str, message: str) -> dict:
    return {"code": code, "message": message}
