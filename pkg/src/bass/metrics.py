"""Cosine similarity over feature vectors and the balance/novelty report.

All comparisons in the engine reduce to cosine similarity between feature
vectors extracted from images, prompts, or segmented components.  Features
are stored raw (bit-exact backend output, cache-friendly) and normalized
only inside ``cosine``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFeatureError, ShapeMismatchError

FEATURE_SOURCES = ("text", "image", "component")


@dataclass(frozen=True)
class FeatureVector:
    """D-dimensional raw feature vector plus provenance tags."""

    values: np.ndarray
    source: str
    extractor_id: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeMismatchError("feature vector must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise DegenerateFeatureError("feature vector entries must be finite")
        if not np.any(arr):
            raise DegenerateFeatureError("feature vector must not be the zero vector")
        if self.source not in FEATURE_SOURCES:
            raise ShapeMismatchError(
                f"source must be one of {FEATURE_SOURCES}, got {self.source!r}"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def d(self) -> int:
        return int(self.values.size)


def cosine(a: FeatureVector, b: FeatureVector) -> float:
    """Cosine similarity in [-1, 1]; symmetric, invariant to positive scaling."""

    if a.d != b.d:
        raise ShapeMismatchError(f"feature dimensions differ: {a.d} vs {b.d}")
    va = a.values.astype(np.float64)
    vb = b.values.astype(np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("cosine undefined for zero vector")
    return float(np.dot(va, vb) / (na * nb))


@dataclass(frozen=True)
class BalanceReport:
    """The four balance/novelty numbers for one candidate.

    Balances are absolute similarity gaps (0 = perfectly balanced, at most 2);
    averages are mean similarities (lower = further from both originals, i.e.
    more novel).
    """

    text_balance: float
    image_balance: float
    text_avg_sim: float
    image_avg_sim: float

    def __post_init__(self):
        eps = 1e-9
        if not (-eps <= self.text_balance <= 2 + eps):
            raise ValueError(f"text_balance out of [0, 2]: {self.text_balance}")
        if not (-eps <= self.image_balance <= 2 + eps):
            raise ValueError(f"image_balance out of [0, 2]: {self.image_balance}")
        for name in ("text_avg_sim", "image_avg_sim"):
            v = getattr(self, name)
            if not (-1 - eps <= v <= 1 + eps):
                raise ValueError(f"{name} out of [-1, 1]: {v}")


def report_from_similarities(
    sim_p1: float,
    sim_p2: float,
    sim_i1: float,
    sim_i2: float,
    *,
    image_avg_from_difference: bool = False,
) -> BalanceReport:
    """Assemble a BalanceReport from the four precomputed cosine similarities."""

    if image_avg_from_difference:
        image_avg = (sim_i1 - sim_i2) / 2.0
    else:
        image_avg = (sim_i1 + sim_i2) / 2.0
    return BalanceReport(
        text_balance=abs(sim_p1 - sim_p2),
        image_balance=abs(sim_i1 - sim_i2),
        text_avg_sim=(sim_p1 + sim_p2) / 2.0,
        image_avg_sim=image_avg,
    )


def balance_report(
    f_cand: FeatureVector,
    f_p1: FeatureVector,
    f_p2: FeatureVector,
    f_i1: FeatureVector,
    f_i2: FeatureVector,
    *,
    image_avg_from_difference: bool = False,
) -> BalanceReport:
    """Balance gaps and average similarities of a candidate against both originals.

    ``image_avg_from_difference`` switches the image average to
    (sim_i1 - sim_i2) / 2.  That variant exists only to replicate an
    alternative published formula; the default mean matches the text-side
    definition and is what the aggregate tables assume.
    """

    return report_from_similarities(
        cosine(f_cand, f_p1),
        cosine(f_cand, f_p2),
        cosine(f_cand, f_i1),
        cosine(f_cand, f_i2),
        image_avg_from_difference=image_avg_from_difference,
    )
