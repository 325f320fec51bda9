"""Balance-region filtering and segmentation-component selection.

A run generates N candidate images from random column swaps, then narrows
them coarse-to-fine:

1. coarse gate on text-side balance: |sim_p1 - sim_p2| <= theta;
2. fine gate on image-side balance, keeping candidates whose anchor-image
   similarity gap is small and whose total anchor similarity is low (close
   to neither original), with thresholds read off order statistics of the
   surviving population;
3. final choice by the highest mean pairwise component similarity against
   the two anchors' segmented components.

All operations here are pure over a materialized candidate list and keep
results independent of the list's input order: kept sets are reported sorted
by candidate id, and ties always break toward the lowest id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backend import GeneratedImage
from .embedding import SwapVector
from .errors import ConfigError
from .metrics import FeatureVector

FILTER_QUANTILE = "quantile"
FILTER_LITERAL = "literal"

DEFAULT_N = 200
DEFAULT_THETA = 0.05
DEFAULT_ALPHA_BAR = 0.4
DEFAULT_BETA_BAR = 0.1
DEFAULT_TEMPLATE = "A photo of {}"


@dataclass(frozen=True)
class PipelineConfig:
    """Tunables of one sampling run; defaults are the recommended operating point."""

    n: int = DEFAULT_N
    theta: float = DEFAULT_THETA
    alpha_bar: float = DEFAULT_ALPHA_BAR
    beta_bar: float = DEFAULT_BETA_BAR
    seed: int = 0
    filter_mode: str = FILTER_QUANTILE
    prompt_template: str = DEFAULT_TEMPLATE
    seed_per_candidate: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if math.isnan(self.theta) or self.theta < 0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if not 0.0 <= self.alpha_bar <= 1.0:
            raise ConfigError(f"alpha_bar must lie in [0, 1], got {self.alpha_bar}")
        if not 0.0 <= self.beta_bar <= 1.0:
            raise ConfigError(f"beta_bar must lie in [0, 1], got {self.beta_bar}")
        if self.filter_mode not in (FILTER_QUANTILE, FILTER_LITERAL):
            raise ConfigError(f"unknown filter_mode {self.filter_mode!r}")
        if "{}" not in self.prompt_template:
            raise ConfigError("prompt_template needs exactly one '{}' placeholder")

    def format_prompt(self, text: str) -> str:
        return self.prompt_template.format(text)


@dataclass
class CandidateScores:
    """Cosine similarities of one candidate against prompts and anchor images."""

    sim_p1: float
    sim_p2: float
    sim_i1: float
    sim_i2: float
    r_score: float | None = None

    @property
    def gap_text(self) -> float:
        return abs(self.sim_p1 - self.sim_p2)

    @property
    def gap_image(self) -> float:
        return abs(self.sim_i1 - self.sim_i2)

    @property
    def sum_image(self) -> float:
        return self.sim_i1 + self.sim_i2


@dataclass
class Candidate:
    """One generated image: swap vector, artifact, features, scores."""

    swap: SwapVector
    image: GeneratedImage
    feat: FeatureVector
    scores: CandidateScores
    components: tuple[FeatureVector, ...] | None = None  # None until segmented
    mask_areas_px: tuple[int, ...] | None = None

    @property
    def id(self) -> int:
        return self.swap.id


@dataclass
class FilterTrace:
    """Audit record of one filter application."""

    mode: str
    input_ids: list[int]
    kept_ids: list[int]
    threshold_used: dict[str, float | None] = field(default_factory=dict)
    empty_input: bool = False

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "input_ids": list(self.input_ids),
            "kept_ids": list(self.kept_ids),
            "threshold_used": dict(self.threshold_used),
            "empty_input": self.empty_input,
        }


def _ceil_fraction(m: int, fraction: float) -> int:
    # round() first kills binary-float fuzz such as 150 * 0.4 = 60.000000000000014,
    # which would otherwise push the ceiling one rank too deep
    return int(math.ceil(round(m * fraction, 9)))


def _by_id(cands: list[Candidate]) -> list[Candidate]:
    return sorted(cands, key=lambda c: c.id)


def coarse_filter(cands: list[Candidate], theta: float) -> FilterTrace:
    """Text-side balance gate: keep candidates with |sim_p1 - sim_p2| <= theta."""

    ordered = _by_id(cands)
    kept = [c.id for c in ordered if c.scores.gap_text <= theta]
    return FilterTrace(
        mode="coarse",
        input_ids=[c.id for c in ordered],
        kept_ids=kept,
        threshold_used={"theta": float(theta)},
        empty_input=not cands,
    )


def fine_filter(
    cands: list[Candidate],
    alpha_bar: float,
    beta_bar: float,
    mode: str = FILTER_QUANTILE,
) -> FilterTrace:
    """Image-side balance gate with order-statistic thresholds.

    quantile mode (default): keep the intersection of the ceil(m*alpha_bar)
    candidates with the smallest anchor-similarity gap and the
    ceil(m*beta_bar) candidates with the smallest anchor-similarity sum,
    ties broken by candidate id.  Recorded thresholds are the gap/sum values
    at the two cut ranks.

    literal mode: thresholds are the values at stated ranks of the
    *descending* sorted gap and sum lists (alpha at rank ceil(m*alpha_bar),
    beta at rank ceil(m*beta_bar), both clamped to rank >= 1), and every
    candidate with gap <= alpha and sum <= 2*beta is kept.  This keeps
    roughly the (1 - alpha_bar) most balanced fraction and exists for
    replicating the as-printed threshold arithmetic.
    """

    if mode not in (FILTER_QUANTILE, FILTER_LITERAL):
        raise ConfigError(f"unknown filter mode {mode!r}")
    ordered = _by_id(cands)
    input_ids = [c.id for c in ordered]
    if not ordered:
        return FilterTrace(
            mode=f"fine-{mode}",
            input_ids=[],
            kept_ids=[],
            threshold_used={"alpha": None, "beta": None},
            empty_input=True,
        )

    m = len(ordered)
    if mode == FILTER_QUANTILE:
        k_gap = _ceil_fraction(m, alpha_bar)
        k_sum = _ceil_fraction(m, beta_bar)
        by_gap = sorted(ordered, key=lambda c: (c.scores.gap_image, c.id))
        by_sum = sorted(ordered, key=lambda c: (c.scores.sum_image, c.id))
        gap_ids = {c.id for c in by_gap[:k_gap]}
        sum_ids = {c.id for c in by_sum[:k_sum]}
        kept = sorted(gap_ids & sum_ids)
        alpha = by_gap[k_gap - 1].scores.gap_image if k_gap >= 1 else None
        beta = by_sum[k_sum - 1].scores.sum_image if k_sum >= 1 else None
    else:
        r_gap = max(1, _ceil_fraction(m, alpha_bar))
        r_sum = max(1, _ceil_fraction(m, beta_bar))
        gaps_desc = sorted((c.scores.gap_image for c in ordered), reverse=True)
        sums_desc = sorted((c.scores.sum_image for c in ordered), reverse=True)
        alpha = gaps_desc[r_gap - 1]
        beta = sums_desc[r_sum - 1]
        kept = [
            c.id
            for c in ordered
            if c.scores.gap_image <= alpha and c.scores.sum_image <= 2 * beta
        ]
    return FilterTrace(
        mode=f"fine-{mode}",
        input_ids=input_ids,
        kept_ids=kept,
        threshold_used={"alpha": alpha, "beta": beta},
    )


def pairwise_mean_similarity(
    set_a: tuple[FeatureVector, ...] | list[FeatureVector],
    set_b: tuple[FeatureVector, ...] | list[FeatureVector],
) -> float:
    """Mean cosine similarity over all cross pairs of two component sets."""

    if not set_a or not set_b:
        raise ValueError("pairwise mean needs non-empty component sets")
    a = np.stack([f.values.astype(np.float64) for f in set_a])
    b = np.stack([f.values.astype(np.float64) for f in set_b])
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return float(np.mean(a @ b.T))


def component_score(
    components: tuple[FeatureVector, ...] | list[FeatureVector],
    c1: tuple[FeatureVector, ...] | list[FeatureVector],
    c2: tuple[FeatureVector, ...] | list[FeatureVector],
) -> float:
    """r = mean of the candidate's pairwise component similarity to each anchor."""

    s1 = pairwise_mean_similarity(components, c1)
    s2 = pairwise_mean_similarity(components, c2)
    return (s1 + s2) / 2.0


@dataclass
class SelectionOutcome:
    """Winner of one selection pool plus per-candidate bookkeeping."""

    selected: Candidate | None
    skipped_no_components: list[int]


def select_optimal(
    pool: list[Candidate],
    c1: tuple[FeatureVector, ...] | list[FeatureVector],
    c2: tuple[FeatureVector, ...] | list[FeatureVector],
) -> SelectionOutcome:
    """Pick the candidate maximizing r over the pool; ties go to the lowest id.

    Candidates without segmentation components cannot be scored and are
    skipped (reported in the outcome).  r is stored on every scored
    candidate.  Returns selected=None when nothing in the pool is scorable.
    """

    skipped: list[int] = []
    best: Candidate | None = None
    for cand in _by_id(pool):
        if not cand.components:
            skipped.append(cand.id)
            continue
        cand.scores.r_score = component_score(cand.components, c1, c2)
        if best is None or cand.scores.r_score > best.scores.r_score:
            best = cand
    return SelectionOutcome(selected=best, skipped_no_components=skipped)
