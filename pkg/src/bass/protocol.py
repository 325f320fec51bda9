"""Wire protocol payload helpers (JSON bodies, base64 little-endian float32).

Endpoints (all POST bodies and responses are JSON; every endpoint also
accepts ``{"batch": [...]}`` and answers ``{"batch": [...]}`` with per-item
payloads or per-item ``{"error": {code, message}}`` objects):

    POST /v1/encode          {prompt}            -> {h, w, data}
    POST /v1/generate        {embedding, seed}   -> {png}
    POST /v1/features/image  {png}               -> {d, data}
    POST /v1/features/text   {prompt}            -> {d, data}
    POST /v1/segment         {png}               -> {components: [{d, data, mask_area_px}]}
    GET  /v1/info                                -> {encoder_id, h, w, d, models, ...}

``data`` and ``png`` fields are base64; float payloads are raw little-endian
float32 arrays, so serialize -> deserialize preserves every bit.
Non-2xx responses carry ``{code, message}``.
"""

from __future__ import annotations

import base64

import numpy as np

from .embedding import PromptEmbedding
from .errors import ProtocolError
from .metrics import FeatureVector

PATH_ENCODE = "/v1/encode"
PATH_GENERATE = "/v1/generate"
PATH_FEATURES_IMAGE = "/v1/features/image"
PATH_FEATURES_TEXT = "/v1/features/text"
PATH_SEGMENT = "/v1/segment"
PATH_INFO = "/v1/info"


def f32_to_b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode(
        "ascii"
    )


def b64_to_f32(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 float payload: {exc}") from exc
    if len(raw) % 4 != 0:
        raise ProtocolError(f"float payload length {len(raw)} not a multiple of 4")
    return np.frombuffer(raw, dtype="<f4")


def bytes_to_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64_to_bytes(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"invalid base64 payload: {exc}") from exc


def embedding_payload(e: PromptEmbedding) -> dict:
    return {"h": e.h, "w": e.w, "data": f32_to_b64(e.matrix)}


def embedding_from_payload(
    payload: dict, *, prompt_text: str = "", encoder_id: str = ""
) -> PromptEmbedding:
    try:
        h = int(payload["h"])
        w = int(payload["w"])
        flat = b64_to_f32(payload["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad embedding payload: {exc}") from exc
    if flat.size != h * w:
        raise ProtocolError(
            f"embedding data holds {flat.size} floats, header declares {h}x{w}"
        )
    return PromptEmbedding(
        matrix=flat.reshape(h, w), prompt_text=prompt_text, encoder_id=encoder_id
    )


def feature_payload(v: FeatureVector, *, mask_area_px: int | None = None) -> dict:
    out = {"d": v.d, "data": f32_to_b64(v.values)}
    if mask_area_px is not None:
        out["mask_area_px"] = int(mask_area_px)
    return out


def feature_from_payload(payload: dict, *, source: str, extractor_id: str) -> FeatureVector:
    try:
        d = int(payload["d"])
        values = b64_to_f32(payload["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad feature payload: {exc}") from exc
    if values.size != d:
        raise ProtocolError(f"feature data holds {values.size} floats, declares {d}")
    return FeatureVector(values=values, source=source, extractor_id=extractor_id)


def error_payload(code: str, message: str) -> dict:
    return {"code": code, "message": message}
