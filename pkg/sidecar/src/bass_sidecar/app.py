"""FastAPI application implementing the wire protocol over a model bundle.

Every endpoint accepts either a single JSON body or ``{"batch": [...]}``
with per-item error isolation.  Model work is serialized through one lock
(the device queue); memory exhaustion answers 503 with Retry-After so
clients back off and retry.
"""

from __future__ import annotations

import threading

from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse

from .wire import (
    WireError,
    b64_to_bytes,
    b64_to_f32,
    bytes_to_b64,
    error_payload,
    f32_to_b64,
)

DEFAULT_DROP_MASK_FRACTION = 0.9


def _is_out_of_memory(exc: BaseException) -> bool:
    if isinstance(exc, MemoryError):
        return True
    # torch.cuda.OutOfMemoryError without importing torch here
    return type(exc).__name__ == "OutOfMemoryError" or "out of memory" in str(exc).lower()


class _ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str, retry_after: int | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.retry_after = retry_after


def create_app(bundle, *, drop_mask_fraction: float = DEFAULT_DROP_MASK_FRACTION) -> FastAPI:
    app = FastAPI(title="bass-sidecar", version="0.1.0")
    lock = threading.Lock()  # device queue: one model call at a time

    def info_payload() -> dict:
        return {
            "identity": bundle.identity,
            "encoder_id": bundle.encoder_id,
            "h": bundle.h,
            "w": bundle.w,
            "d": bundle.d,
            "models": dict(bundle.model_names),
            "image_media_type": "image/png",
        }

    # --- field extraction ---------------------------------------------------
    def need(body: dict, key: str, kind: type):
        if not isinstance(body, dict) or key not in body:
            raise WireError(f"missing field {key!r}")
        value = body[key]
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise WireError(f"field {key!r} must be an integer")
            return value
        if not isinstance(value, kind):
            raise WireError(f"field {key!r} must be {kind.__name__}")
        return value

    def embedding_matrix(body: dict):
        payload = need(body, "embedding", dict)
        h = need(payload, "h", int)
        w = need(payload, "w", int)
        flat = b64_to_f32(need(payload, "data", str))
        if flat.size != h * w:
            raise WireError(f"embedding data holds {flat.size} floats, declares {h}x{w}")
        return flat.reshape(h, w)

    # --- operations -----------------------------------------------------------
    def op_encode(body: dict) -> dict:
        matrix = bundle.encode_text(need(body, "prompt", str))
        return {"h": int(matrix.shape[0]), "w": int(matrix.shape[1]), "data": f32_to_b64(matrix)}

    def op_generate(body: dict) -> dict:
        matrix = embedding_matrix(body)
        seed = need(body, "seed", int)
        return {"png": bytes_to_b64(bundle.generate(matrix, seed))}

    def op_features_image(body: dict) -> dict:
        values = bundle.image_features(b64_to_bytes(need(body, "png", str)))
        return {"d": int(values.size), "data": f32_to_b64(values)}

    def op_features_text(body: dict) -> dict:
        values = bundle.text_features(need(body, "prompt", str))
        return {"d": int(values.size), "data": f32_to_b64(values)}

    def op_segment(body: dict) -> dict:
        png = b64_to_bytes(need(body, "png", str))
        image_area, crops = bundle.segment_masks(png)
        components = []
        for crop in crops:
            if crop.mask_area_px > drop_mask_fraction * image_area:
                continue  # background-scale mask
            values = bundle.image_features(crop.png)
            components.append(
                {
                    "d": int(values.size),
                    "data": f32_to_b64(values),
                    "mask_area_px": int(crop.mask_area_px),
                }
            )
        return {"components": components}

    operations = {
        "/v1/encode": op_encode,
        "/v1/generate": op_generate,
        "/v1/features/image": op_features_image,
        "/v1/features/text": op_features_text,
        "/v1/segment": op_segment,
    }

    def run_one(path: str, body: dict) -> dict:
        try:
            with lock:
                return operations[path](body)
        except (WireError, ValueError) as exc:
            raise _ServiceError(400, "bad_request", str(exc)) from exc
        except Exception as exc:
            if _is_out_of_memory(exc):
                raise _ServiceError(
                    503, "resource_exhausted", str(exc), retry_after=5
                ) from exc
            raise _ServiceError(500, "internal", str(exc)) from exc

    def dispatch(path: str, body) -> JSONResponse:
        if isinstance(body, dict) and "batch" in body:
            items = body["batch"]
            if not isinstance(items, list):
                return JSONResponse(
                    status_code=400,
                    content=error_payload("bad_request", "'batch' must be an array"),
                )
            results = []
            for item in items:
                try:
                    results.append(run_one(path, item))
                except _ServiceError as exc:  # per-item isolation
                    results.append({"error": error_payload(exc.code, exc.message)})
            return JSONResponse(content={"batch": results})
        try:
            return JSONResponse(content=run_one(path, body))
        except _ServiceError as exc:
            headers = {}
            if exc.retry_after is not None:
                headers["Retry-After"] = str(exc.retry_after)
            return JSONResponse(
                status_code=exc.status,
                content=error_payload(exc.code, exc.message),
                headers=headers,
            )

    @app.get("/v1/info")
    def get_info():
        return info_payload()

    @app.post("/v1/encode")
    def post_encode(request: Request, body: dict = Body(...)):
        return dispatch("/v1/encode", body)

    @app.post("/v1/generate")
    def post_generate(body: dict = Body(...)):
        return dispatch("/v1/generate", body)

    @app.post("/v1/features/image")
    def post_features_image(body: dict = Body(...)):
        return dispatch("/v1/features/image", body)

    @app.post("/v1/features/text")
    def post_features_text(body: dict = Body(...)):
        return dispatch("/v1/features/text", body)

    @app.post("/v1/segment")
    def post_segment(body: dict = Body(...)):
        return dispatch("/v1/segment", body)

    return app
