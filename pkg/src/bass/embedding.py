"""Prompt-embedding algebra: column swapping, interpolation, and swap-vector sets.

A prompt embedding is the h x w matrix a text encoder produces for one prompt
(rows = token slots, columns = embedding channels).  Two embeddings of the
same shape are fused by exchanging whole columns under a binary swap vector,
by linear interpolation, or by exchanging whole rows.  Everything here is
pure and allocates new values; matrices are frozen at construction so results
can be cached by content digest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EncoderMismatchError,
    InfeasibleCountError,
    SerializationError,
    ShapeMismatchError,
)

EMBEDDING_MAGIC = b"BASSEMB1"

_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _frozen_f32(values, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != ndim:
        raise ShapeMismatchError(f"expected a {ndim}-d array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatchError("embedding entries must be finite")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PromptEmbedding:
    """Immutable h x w float32 matrix for one prompt, tagged with its encoder."""

    matrix: np.ndarray
    prompt_text: str
    encoder_id: str
    h: int = field(init=False)
    w: int = field(init=False)

    def __post_init__(self):
        arr = _frozen_f32(self.matrix, ndim=2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatchError(f"embedding must be non-empty, got {arr.shape}")
        object.__setattr__(self, "matrix", arr)
        object.__setattr__(self, "h", int(arr.shape[0]))
        object.__setattr__(self, "w", int(arr.shape[1]))

    def column(self, j: int) -> np.ndarray:
        return self.matrix[:, j]


@dataclass(frozen=True)
class SwapVector:
    """Binary length-w vector: bit j = 1 takes column j from the first embedding."""

    bits: np.ndarray
    id: int = 0

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=np.uint8)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeMismatchError("swap vector must be a non-empty 1-d vector")
        if not np.all((arr == 0) | (arr == 1)):
            raise ShapeMismatchError("swap vector entries must be 0 or 1")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def w(self) -> int:
        return int(self.bits.size)

    @property
    def ones_fraction(self) -> float:
        return float(self.bits.sum()) / self.bits.size

    def as_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_string(cls, s: str, id: int = 0) -> "SwapVector":
        return cls(np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0"), id=id)


@dataclass(frozen=True)
class MixStrategy:
    """One of the three implemented embedding-mixing strategies.

    ``column_swap`` exchanges whole embedding channels under a SwapVector,
    ``linear_interpolation`` blends the full matrices with weight lam in
    [0, 1] (lam = 1 reproduces the first input), and ``row_swap`` exchanges
    whole token rows under a length-h binary mask.  Element-wise exchange is
    deliberately not offered: searching an h*w swap matrix is impractical.
    """

    kind: str
    lam: float | None = None
    row_mask: tuple[int, ...] | None = None
    swap: SwapVector | None = None

    COLUMN_SWAP = "column_swap"
    LINEAR_INTERPOLATION = "linear_interpolation"
    ROW_SWAP = "row_swap"

    def __post_init__(self):
        if self.kind == self.LINEAR_INTERPOLATION:
            if self.lam is None or not (0.0 <= self.lam <= 1.0):
                raise ShapeMismatchError(
                    f"interpolation weight must lie in [0, 1], got {self.lam}"
                )
        elif self.kind == self.ROW_SWAP:
            if self.row_mask is None:
                raise ShapeMismatchError("row_swap requires a row mask")
            if any(b not in (0, 1) for b in self.row_mask):
                raise ShapeMismatchError("row mask entries must be 0 or 1")
        elif self.kind == self.COLUMN_SWAP:
            if self.swap is None:
                raise ShapeMismatchError("column_swap requires a swap vector")
        else:
            raise ShapeMismatchError(f"unknown mix strategy {self.kind!r}")

    @classmethod
    def column_swap(cls, swap: SwapVector) -> "MixStrategy":
        return cls(kind=cls.COLUMN_SWAP, swap=swap)

    @classmethod
    def linear_interpolation(cls, lam: float) -> "MixStrategy":
        return cls(kind=cls.LINEAR_INTERPOLATION, lam=float(lam))

    @classmethod
    def row_swap(cls, row_mask) -> "MixStrategy":
        return cls(kind=cls.ROW_SWAP, row_mask=tuple(int(b) for b in row_mask))


def _check_compatible(e1: PromptEmbedding, e2: PromptEmbedding) -> None:
    if (e1.h, e1.w) != (e2.h, e2.w):
        raise ShapeMismatchError(
            f"embedding shapes differ: {(e1.h, e1.w)} vs {(e2.h, e2.w)}"
        )
    if e1.encoder_id != e2.encoder_id:
        raise EncoderMismatchError(
            f"cannot mix embeddings from {e1.encoder_id!r} and {e2.encoder_id!r}"
        )


def swap_columns(
    e1: PromptEmbedding, e2: PromptEmbedding, f: SwapVector
) -> PromptEmbedding:
    """Column-exchange fusion: output column j is e1's where f_j = 1, else e2's.

    Equivalent to E1 diag(f) + E2 diag(1 - f) but copies columns bit-exactly
    instead of multiplying, so every output column is identical to one input
    column.
    """

    _check_compatible(e1, e2)
    if f.w != e1.w:
        raise ShapeMismatchError(
            f"swap vector length {f.w} does not match embedding width {e1.w}"
        )
    take_first = f.bits.astype(bool)[np.newaxis, :]
    mixed = np.where(take_first, e1.matrix, e2.matrix)
    return PromptEmbedding(
        matrix=mixed,
        prompt_text=f"swap#{f.id}({e1.prompt_text} | {e2.prompt_text})",
        encoder_id=e1.encoder_id,
    )


def mix(
    e1: PromptEmbedding, e2: PromptEmbedding, strategy: MixStrategy
) -> PromptEmbedding:
    """Fuse two embeddings under the given strategy (see MixStrategy)."""

    if strategy.kind == MixStrategy.COLUMN_SWAP:
        return swap_columns(e1, e2, strategy.swap)

    _check_compatible(e1, e2)
    if strategy.kind == MixStrategy.LINEAR_INTERPOLATION:
        lam = np.float32(strategy.lam)
        mixed = lam * e1.matrix + (np.float32(1.0) - lam) * e2.matrix
        label = f"lerp@{strategy.lam:g}({e1.prompt_text} | {e2.prompt_text})"
    else:  # row swap
        mask = np.asarray(strategy.row_mask, dtype=np.uint8)
        if mask.size != e1.h:
            raise ShapeMismatchError(
                f"row mask length {mask.size} does not match height {e1.h}"
            )
        mixed = np.where(mask.astype(bool)[:, np.newaxis], e1.matrix, e2.matrix)
        label = f"rowswap({e1.prompt_text} | {e2.prompt_text})"
    return PromptEmbedding(matrix=mixed, prompt_text=label, encoder_id=e1.encoder_id)


def complement(f: SwapVector) -> SwapVector:
    """Bitwise 1 - f, keeping the id."""

    return SwapVector(bits=1 - f.bits, id=f.id)


def generate_swap_set(w: int, n: int, seed: int) -> list[SwapVector]:
    """Draw n distinct random swap vectors of length w, ids 0..n-1 in draw order.

    Bits are Bernoulli(0.5) from a deterministic generator; the all-ones and
    all-zeros vectors reproduce the unmixed inputs and are rejected, as are
    duplicates.  The same (w, n, seed) always yields the same list.
    """

    if w < 2:
        raise InfeasibleCountError(f"swap vectors need width >= 2, got {w}")
    if n < 1:
        raise InfeasibleCountError(f"swap set size must be >= 1, got {n}")
    if n > 2**w - 2:
        raise InfeasibleCountError(
            f"cannot draw {n} distinct non-degenerate vectors of width {w}"
        )
    rng = np.random.default_rng(seed & _U64_MASK)
    out: list[SwapVector] = []
    seen: set[bytes] = set()
    while len(out) < n:
        bits = rng.integers(0, 2, size=w, dtype=np.uint8)
        total = int(bits.sum())
        if total == 0 or total == w:
            continue
        key = bits.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(SwapVector(bits=bits, id=len(out)))
    return out


# --- binary serialization (cache entries and training-triple export) ---
#
# Layout, all integers little-endian u32 unless noted:
#   magic "BASSEMB1" | h | w | len(encoder_id) | encoder_id utf-8
#   | len(prompt) | prompt utf-8 | h*w little-endian float32, row-major


def embedding_to_bytes(e: PromptEmbedding) -> bytes:
    enc = e.encoder_id.encode("utf-8")
    prompt = e.prompt_text.encode("utf-8")
    header = (
        EMBEDDING_MAGIC
        + struct.pack("<II", e.h, e.w)
        + struct.pack("<I", len(enc))
        + enc
        + struct.pack("<I", len(prompt))
        + prompt
    )
    return header + np.ascontiguousarray(e.matrix, dtype="<f4").tobytes()


def embedding_from_bytes(data: bytes) -> PromptEmbedding:
    if data[:8] != EMBEDDING_MAGIC:
        raise SerializationError("bad embedding magic")
    off = 8
    try:
        h, w = struct.unpack_from("<II", data, off)
        off += 8
        (enc_len,) = struct.unpack_from("<I", data, off)
        off += 4
        encoder_id = data[off : off + enc_len].decode("utf-8")
        off += enc_len
        (prompt_len,) = struct.unpack_from("<I", data, off)
        off += 4
        prompt = data[off : off + prompt_len].decode("utf-8")
        off += prompt_len
    except (struct.error, UnicodeDecodeError) as exc:
        raise SerializationError(f"truncated embedding header: {exc}") from exc
    expected = h * w * 4
    payload = data[off:]
    if len(payload) != expected:
        raise SerializationError(
            f"embedding payload holds {len(payload)} bytes, header declares {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return PromptEmbedding(matrix=matrix, prompt_text=prompt, encoder_id=encoder_id)
