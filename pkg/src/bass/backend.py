"""Model-inference client layer: handles, retries, bounded batching, caching.

A Backend materializes five operations (text encoding, image generation,
image/text features, segmentation) either in-process (mock) or over the wire
protocol (HTTP).  Batch variants are semantically identical to sequential
calls; completion order never changes results because outputs are collected
by request index.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import requests

from . import protocol
from .cache import DIGEST_ALGORITHM, ResponseCache, cache_key, content_digest
from .embedding import PromptEmbedding, embedding_from_bytes, embedding_to_bytes
from .errors import BackendError, ProtocolError
from .metrics import FeatureVector

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff_ms: int = 50

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError(f"retry attempts must be >= 1, got {self.attempts}")


@dataclass(frozen=True)
class BackendHandle:
    """Connection settings for a backend: endpoint URL or ``mock:<seed>``."""

    endpoint: str
    timeout_ms: int = 30_000
    max_inflight: int = 1
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.max_inflight < 1:
            raise ValueError(f"max_inflight must be >= 1, got {self.max_inflight}")


@dataclass(frozen=True)
class ImageRef:
    """Content-addressed reference to stored image bytes."""

    digest: str
    media_type: str
    byte_length: int


@dataclass(frozen=True)
class GeneratedImage:
    """An image plus its content-addressed reference."""

    ref: ImageRef
    data: bytes

    @classmethod
    def from_bytes(cls, data: bytes, media_type: str) -> "GeneratedImage":
        ref = ImageRef(
            digest=content_digest(data), media_type=media_type, byte_length=len(data)
        )
        return cls(ref=ref, data=data)


@dataclass(frozen=True)
class BackendInfo:
    identity: str
    encoder_id: str
    h: int
    w: int
    d: int
    models: dict
    image_media_type: str = "image/png"

    def to_payload(self) -> dict:
        return {
            "identity": self.identity,
            "encoder_id": self.encoder_id,
            "h": self.h,
            "w": self.w,
            "d": self.d,
            "models": dict(self.models),
            "image_media_type": self.image_media_type,
        }


@dataclass(frozen=True)
class SegmentationResult:
    features: tuple[FeatureVector, ...]
    mask_areas_px: tuple[int, ...]


class Backend:
    """Interface plus bounded parallel batching shared by all implementations."""

    max_inflight: int = 1

    # --- single-call operations -------------------------------------------
    def info(self) -> BackendInfo:
        raise NotImplementedError

    def encode_text(self, prompt: str) -> PromptEmbedding:
        raise NotImplementedError

    def generate_image(self, e: PromptEmbedding, gen_seed: int) -> GeneratedImage:
        raise NotImplementedError

    def image_features(self, img: GeneratedImage) -> FeatureVector:
        raise NotImplementedError

    def text_features(self, prompt: str) -> FeatureVector:
        raise NotImplementedError

    def segment(self, img: GeneratedImage) -> SegmentationResult:
        raise NotImplementedError

    def segment_components(self, img: GeneratedImage) -> list[FeatureVector]:
        return list(self.segment(img).features)

    # --- batching ----------------------------------------------------------
    def _map_bounded(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        """Apply fn to every item, at most max_inflight at a time.

        Every item runs to completion even when siblings fail; the first
        failure is re-raised afterwards so one bad item cannot silently drop
        the others' work from caches.
        """

        if not items:
            return []
        results: list = [None] * len(items)
        errors: list[tuple[int, Exception]] = []
        if self.max_inflight <= 1 or len(items) == 1:
            for i, item in enumerate(items):
                try:
                    results[i] = fn(item)
                except Exception as exc:  # isolate per item
                    errors.append((i, exc))
        else:
            workers = min(self.max_inflight, len(items))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(fn, item): i for i, item in enumerate(items)}
                for future, i in futures.items():
                    try:
                        results[i] = future.result()
                    except Exception as exc:
                        errors.append((i, exc))
        if errors:
            index, first = sorted(errors, key=lambda e: e[0])[0]
            raise BackendError(
                f"{len(errors)} of {len(items)} batch items failed; "
                f"first failure at index {index}: {first}"
            ) from first
        return results

    def encode_text_batch(self, prompts: Sequence[str]) -> list[PromptEmbedding]:
        return self._map_bounded(self.encode_text, prompts)

    def generate_image_batch(
        self, jobs: Sequence[tuple[PromptEmbedding, int]]
    ) -> list[GeneratedImage]:
        return self._map_bounded(lambda job: self.generate_image(*job), jobs)

    def image_features_batch(
        self, imgs: Sequence[GeneratedImage]
    ) -> list[FeatureVector]:
        return self._map_bounded(self.image_features, imgs)

    def text_features_batch(self, prompts: Sequence[str]) -> list[FeatureVector]:
        return self._map_bounded(self.text_features, prompts)

    def segment_batch(self, imgs: Sequence[GeneratedImage]) -> list[SegmentationResult]:
        return self._map_bounded(self.segment, imgs)


class HttpBackend(Backend):
    """Wire-protocol client with per-request retries and exponential backoff.

    Retries cover transport errors and 5xx responses; 4xx responses are
    treated as permanent.  Safe for concurrent use (one session per thread).
    """

    def __init__(self, handle: BackendHandle):
        self.handle = handle
        self.max_inflight = handle.max_inflight
        self._base = handle.endpoint.rstrip("/")
        self._local = threading.local()
        self._info: BackendInfo | None = None
        self._info_lock = threading.Lock()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        timeout = self.handle.timeout_ms / 1000.0
        retry = self.handle.retry
        last_error: Exception | None = None
        for attempt in range(retry.attempts):
            if attempt > 0:
                time.sleep(retry.backoff_ms * (2 ** (attempt - 1)) / 1000.0)
            try:
                resp = self._session().request(
                    method, self._base + path, json=body, timeout=timeout
                )
            except requests.RequestException as exc:
                last_error = BackendError(f"{method} {path}: {exc}", code="transport")
                continue
            if resp.ok:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProtocolError(f"{path}: non-JSON response: {exc}") from exc
            try:
                err = resp.json()
                code = str(err.get("code", resp.status_code))
                message = str(err.get("message", resp.reason))
            except ValueError:
                code, message = str(resp.status_code), resp.text[:200]
            last_error = BackendError(f"{method} {path}: {message}", code=code)
            if resp.status_code < 500:
                break  # client errors are permanent
        raise last_error

    def info(self) -> BackendInfo:
        with self._info_lock:
            if self._info is None:
                payload = self._request("GET", protocol.PATH_INFO)
                try:
                    self._info = BackendInfo(
                        identity=str(payload.get("identity", self.handle.endpoint)),
                        encoder_id=str(payload["encoder_id"]),
                        h=int(payload["h"]),
                        w=int(payload["w"]),
                        d=int(payload["d"]),
                        models=dict(payload.get("models", {})),
                        image_media_type=str(
                            payload.get("image_media_type", "image/png")
                        ),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ProtocolError(f"bad info payload: {exc}") from exc
            return self._info

    def encode_text(self, prompt: str) -> PromptEmbedding:
        payload = self._request("POST", protocol.PATH_ENCODE, {"prompt": prompt})
        return protocol.embedding_from_payload(
            payload, prompt_text=prompt, encoder_id=self.info().encoder_id
        )

    def generate_image(self, e: PromptEmbedding, gen_seed: int) -> GeneratedImage:
        payload = self._request(
            "POST",
            protocol.PATH_GENERATE,
            {"embedding": protocol.embedding_payload(e), "seed": int(gen_seed)},
        )
        try:
            data = protocol.b64_to_bytes(payload["png"])
        except KeyError as exc:
            raise ProtocolError("generate response missing 'png'") from exc
        return GeneratedImage.from_bytes(data, self.info().image_media_type)

    def image_features(self, img: GeneratedImage) -> FeatureVector:
        payload = self._request(
            "POST",
            protocol.PATH_FEATURES_IMAGE,
            {"png": protocol.bytes_to_b64(img.data)},
        )
        return protocol.feature_from_payload(
            payload, source="image", extractor_id=self._extractor_id()
        )

    def text_features(self, prompt: str) -> FeatureVector:
        payload = self._request(
            "POST", protocol.PATH_FEATURES_TEXT, {"prompt": prompt}
        )
        return protocol.feature_from_payload(
            payload, source="text", extractor_id=self._extractor_id()
        )

    def segment(self, img: GeneratedImage) -> SegmentationResult:
        payload = self._request(
            "POST", protocol.PATH_SEGMENT, {"png": protocol.bytes_to_b64(img.data)}
        )
        try:
            raw = payload["components"]
        except KeyError as exc:
            raise ProtocolError("segment response missing 'components'") from exc
        features = []
        areas = []
        for item in raw:
            features.append(
                protocol.feature_from_payload(
                    item, source="component", extractor_id=self._extractor_id()
                )
            )
            areas.append(int(item.get("mask_area_px", 0)))
        return SegmentationResult(features=tuple(features), mask_areas_px=tuple(areas))

    def _extractor_id(self) -> str:
        return str(self.info().models.get("features", "features"))


class CachingBackend(Backend):
    """Content-addressed cache in front of any backend.

    A repeated request is answered from the cache with zero calls to the
    wrapped backend, replaying the original payload bit-identically.
    """

    def __init__(self, inner: Backend, cache: ResponseCache | None = None):
        self.inner = inner
        self.cache = cache if cache is not None else ResponseCache()
        self.max_inflight = inner.max_inflight

    def info(self) -> BackendInfo:
        return self.inner.info()

    def _identity(self) -> str:
        return self.inner.info().identity

    def encode_text(self, prompt: str) -> PromptEmbedding:
        key = cache_key(self._identity(), "encode", prompt)
        cached = self.cache.get(key)
        if cached is not None:
            return embedding_from_bytes(cached)
        result = self.inner.encode_text(prompt)
        self.cache.set(key, embedding_to_bytes(result))
        return result

    def generate_image(self, e: PromptEmbedding, gen_seed: int) -> GeneratedImage:
        emb_digest = content_digest(embedding_to_bytes(e))
        key = cache_key(self._identity(), "generate", emb_digest, str(int(gen_seed)))
        cached = self.cache.get(key)
        if cached is not None:
            return GeneratedImage.from_bytes(cached, self.info().image_media_type)
        result = self.inner.generate_image(e, gen_seed)
        self.cache.set(key, result.data)
        return result

    def image_features(self, img: GeneratedImage) -> FeatureVector:
        key = cache_key(self._identity(), "feat_image", img.ref.digest)
        return self._cached_feature(key, "image", lambda: self.inner.image_features(img))

    def text_features(self, prompt: str) -> FeatureVector:
        key = cache_key(self._identity(), "feat_text", prompt)
        return self._cached_feature(key, "text", lambda: self.inner.text_features(prompt))

    def _cached_feature(
        self, key: str, source: str, compute: Callable[[], FeatureVector]
    ) -> FeatureVector:
        cached = self.cache.get(key)
        if cached is not None:
            payload = json.loads(cached.decode("utf-8"))
            return protocol.feature_from_payload(
                payload, source=source, extractor_id=payload["extractor_id"]
            )
        result = compute()
        payload = protocol.feature_payload(result)
        payload["extractor_id"] = result.extractor_id
        self.cache.set(key, json.dumps(payload, sort_keys=True).encode("utf-8"))
        return result

    def segment(self, img: GeneratedImage) -> SegmentationResult:
        key = cache_key(self._identity(), "segment", img.ref.digest)
        cached = self.cache.get(key)
        if cached is not None:
            payload = json.loads(cached.decode("utf-8"))
            features = tuple(
                protocol.feature_from_payload(
                    item, source="component", extractor_id=payload["extractor_id"]
                )
                for item in payload["components"]
            )
            areas = tuple(int(item["mask_area_px"]) for item in payload["components"])
            return SegmentationResult(features=features, mask_areas_px=areas)
        result = self.inner.segment(img)
        extractor_id = (
            result.features[0].extractor_id if result.features else "segmenter"
        )
        payload = {
            "extractor_id": extractor_id,
            "components": [
                protocol.feature_payload(feat, mask_area_px=area)
                for feat, area in zip(result.features, result.mask_areas_px)
            ],
        }
        self.cache.set(key, json.dumps(payload, sort_keys=True).encode("utf-8"))
        return result


def make_backend(
    endpoint: str,
    *,
    max_inflight: int = 1,
    timeout_ms: int = 30_000,
    retry: RetryPolicy | None = None,
    cache_dir: str | None = None,
    cached: bool = True,
) -> Backend:
    """Build a backend from ``mock:<seed>`` or an HTTP endpoint URL."""

    if endpoint.startswith("mock:"):
        from .mockbackend import MockBackend

        try:
            seed = int(endpoint.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad mock endpoint {endpoint!r}: {exc}") from exc
        inner: Backend = MockBackend(seed, max_inflight=max_inflight)
    else:
        inner = HttpBackend(
            BackendHandle(
                endpoint=endpoint,
                timeout_ms=timeout_ms,
                max_inflight=max_inflight,
                retry=retry if retry is not None else RetryPolicy(),
            )
        )
    if not cached:
        return inner
    return CachingBackend(inner, ResponseCache(cache_dir))


__all__ = [
    "Backend",
    "BackendHandle",
    "BackendInfo",
    "CachingBackend",
    "DIGEST_ALGORITHM",
    "GeneratedImage",
    "HttpBackend",
    "ImageRef",
    "RetryPolicy",
    "SegmentationResult",
    "make_backend",
]
