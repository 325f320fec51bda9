"""Deterministic in-process mock backend used by the whole primary test suite.

Construction (normative so regression tests stay reproducible):

* ``encode_text`` draws an 8x16 float32 matrix from a generator seeded by a
  64-bit digest of (mock seed, prompt).
* ``generate_image`` emits a tiny payload encoding the embedding's column
  means g (16 floats) together with the generation seed, so the image is a
  pure function of (embedding, seed).
* ``image_features`` returns normalize(P @ g + 0.05 * eta) with P a fixed
  seeded 32x16 projection and eta per-image deterministic noise.
* ``text_features`` returns normalize(Q @ g_text) with a second projection.
* ``segment`` returns exactly 4 components: the contiguous quarters of g,
  each zero-padded back to length 16 and projected by P.

Because g is linear in the swap vector's ones pattern, similarity scores vary
smoothly with how much of each prompt a candidate carries, which makes the
balance filters behave meaningfully at desk scale.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .backend import Backend, BackendInfo, GeneratedImage, SegmentationResult
from .embedding import PromptEmbedding
from .errors import ProtocolError
from .metrics import FeatureVector

MOCK_IMAGE_MAGIC = b"MOCKIMG1"
MOCK_H = 8
MOCK_W = 16
MOCK_D = 32
MOCK_COMPONENT_COUNT = 4
MOCK_COMPONENT_AREA_PX = 1024
_NOISE_SCALE = 0.05


def _seed64(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ProtocolError("mock feature collapsed to the zero vector")
    return (v / norm).astype(np.float32)


def _column_means(matrix: np.ndarray) -> np.ndarray:
    return matrix.astype(np.float64).mean(axis=0).astype(np.float32)


class MockBackend(Backend):
    """Pure-function backend: every operation is deterministic in (seed, inputs)."""

    def __init__(self, seed: int, *, max_inflight: int = 1):
        self.seed = int(seed)
        self.max_inflight = max_inflight
        self.encoder_id = f"mock-encoder:{self.seed}"
        self.extractor_id = f"mock-features:{self.seed}"
        proj_rng = np.random.default_rng(_seed64("mock-projection-P", str(self.seed)))
        self._p = proj_rng.standard_normal((MOCK_D, MOCK_W)).astype(np.float32)
        text_rng = np.random.default_rng(_seed64("mock-projection-Q", str(self.seed)))
        self._q = text_rng.standard_normal((MOCK_D, MOCK_W)).astype(np.float32)
        self._info = BackendInfo(
            identity=f"mock:{self.seed}",
            encoder_id=self.encoder_id,
            h=MOCK_H,
            w=MOCK_W,
            d=MOCK_D,
            models={
                "encoder": "mock-encoder",
                "generator": "mock-generator",
                "features": self.extractor_id,
                "segmenter": "mock-segmenter",
            },
            image_media_type="image/x-mock",
        )

    def info(self) -> BackendInfo:
        return self._info

    def encode_text(self, prompt: str) -> PromptEmbedding:
        if not prompt:
            raise ProtocolError("prompt must be non-empty")
        rng = np.random.default_rng(_seed64("mock-encode", str(self.seed), prompt))
        matrix = rng.standard_normal((MOCK_H, MOCK_W)).astype(np.float32)
        return PromptEmbedding(
            matrix=matrix, prompt_text=prompt, encoder_id=self.encoder_id
        )

    def generate_image(self, e: PromptEmbedding, gen_seed: int) -> GeneratedImage:
        if e.w != MOCK_W:
            raise ProtocolError(f"mock generator expects width {MOCK_W}, got {e.w}")
        g = _column_means(e.matrix)
        data = (
            MOCK_IMAGE_MAGIC
            + struct.pack("<Q", int(gen_seed) & 0xFFFFFFFFFFFFFFFF)
            + np.ascontiguousarray(g, dtype="<f4").tobytes()
        )
        return GeneratedImage.from_bytes(data, self._info.image_media_type)

    @staticmethod
    def _parse_image(data: bytes) -> np.ndarray:
        if data[:8] != MOCK_IMAGE_MAGIC:
            raise ProtocolError("not a mock image payload")
        flat = np.frombuffer(data[16:], dtype="<f4")
        if flat.size != MOCK_W:
            raise ProtocolError(
                f"mock image payload holds {flat.size} floats, expected {MOCK_W}"
            )
        return flat

    def image_features(self, img: GeneratedImage) -> FeatureVector:
        g = self._parse_image(img.data).astype(np.float64)
        noise_rng = np.random.default_rng(_seed64("mock-image-noise", img.ref.digest))
        eta = noise_rng.standard_normal(MOCK_D)
        raw = self._p.astype(np.float64) @ g + _NOISE_SCALE * eta
        return FeatureVector(
            values=_normalize(raw), source="image", extractor_id=self.extractor_id
        )

    def text_features(self, prompt: str) -> FeatureVector:
        g = _column_means(self.encode_text(prompt).matrix).astype(np.float64)
        raw = self._q.astype(np.float64) @ g
        return FeatureVector(
            values=_normalize(raw), source="text", extractor_id=self.extractor_id
        )

    def segment(self, img: GeneratedImage) -> SegmentationResult:
        g = self._parse_image(img.data).astype(np.float64)
        quarter = MOCK_W // MOCK_COMPONENT_COUNT
        features = []
        for q in range(MOCK_COMPONENT_COUNT):
            masked = np.zeros(MOCK_W, dtype=np.float64)
            masked[q * quarter : (q + 1) * quarter] = g[q * quarter : (q + 1) * quarter]
            features.append(
                FeatureVector(
                    values=_normalize(self._p.astype(np.float64) @ masked),
                    source="component",
                    extractor_id=self.extractor_id,
                )
            )
        return SegmentationResult(
            features=tuple(features),
            mask_areas_px=(MOCK_COMPONENT_AREA_PX,) * MOCK_COMPONENT_COUNT,
        )
