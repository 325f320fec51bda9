"""End-to-end run: encode, swap, generate, filter coarse-to-fine, select.

The pipeline is deterministic given (config.seed, backend identity): swap
vectors come from the run seed, generation seeds are fixed policy, and all
reductions are ordered by candidate id regardless of how batched backend
calls complete.  A backend failure that survives retries aborts the run and
yields a manifest flagged incomplete with everything materialized so far.
"""

from __future__ import annotations

import time
from datetime import datetime, timezone

from .backend import Backend, GeneratedImage
from .embedding import PromptEmbedding, embedding_to_bytes, swap_columns, generate_swap_set
from .errors import BackendError, ConfigError
from .metrics import cosine
from .runstore import AnchorRecord, CandidateRecord, RunManifest
from .sampler import (
    Candidate,
    CandidateScores,
    PipelineConfig,
    coarse_filter,
    fine_filter,
    select_optimal,
)
from .cache import content_digest


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _candidate_gen_seed(config: PipelineConfig, candidate_id: int) -> int:
    if config.seed_per_candidate:
        return config.seed + 1 + candidate_id
    return config.seed


def _anchor_record(
    raw: str,
    templated: str,
    image: GeneratedImage,
    embedding: PromptEmbedding,
    index: int,
    n_components: int | None,
    mask_areas_px: tuple[int, ...] | None,
) -> AnchorRecord:
    emb_bytes = embedding_to_bytes(embedding)
    return AnchorRecord(
        prompt_raw=raw,
        prompt_templated=templated,
        image_digest=image.ref.digest,
        media_type=image.ref.media_type,
        byte_length=image.ref.byte_length,
        image_path=f"anchors/anchor-{index}.png",
        embedding_path=f"anchors/anchor-{index}.emb",
        embedding_digest=content_digest(emb_bytes),
        n_components=n_components,
        mask_areas_px=list(mask_areas_px) if mask_areas_px is not None else None,
    )


def _candidate_record(cand: Candidate) -> CandidateRecord:
    return CandidateRecord(
        id=cand.id,
        bits=cand.swap.as_string(),
        image_digest=cand.image.ref.digest,
        media_type=cand.image.ref.media_type,
        byte_length=cand.image.ref.byte_length,
        image_path=f"candidates/{cand.id}.png",
        sim_p1=cand.scores.sim_p1,
        sim_p2=cand.scores.sim_p2,
        sim_i1=cand.scores.sim_i1,
        sim_i2=cand.scores.sim_i2,
        gap_text=cand.scores.gap_text,
        gap_image=cand.scores.gap_image,
        sum_image=cand.scores.sum_image,
        r_score=cand.scores.r_score,
        n_components=len(cand.components) if cand.components is not None else None,
        mask_areas_px=list(cand.mask_areas_px)
        if cand.mask_areas_px is not None
        else None,
        excluded_no_components=cand.components is not None and not cand.components,
    )


def run_bass(
    prompt_a: str,
    prompt_b: str,
    config: PipelineConfig,
    backend: Backend,
) -> RunManifest:
    """Run the full sampling pipeline for one prompt pair.

    Returns the run manifest; ``manifest.status`` is ``"incomplete"`` when a
    backend failure aborted the run partway.
    """

    if not prompt_a or not prompt_b:
        raise ConfigError("both prompts must be non-empty")

    started_at = _utc_now()
    t0 = time.perf_counter()

    p1 = config.format_prompt(prompt_a)
    p2 = config.format_prompt(prompt_b)

    info = backend.info()
    error: str | None = None

    embeddings: list[PromptEmbedding] = []
    anchor_images: list[GeneratedImage] = []
    anchor_segs: list = [None, None]
    candidates: list[Candidate] = []
    traces: dict = {}
    selection: dict = {
        "selected_id": None,
        "fallback_level": None,
        "from_set": None,
        "skipped_no_components": [],
    }

    try:
        embeddings = backend.encode_text_batch([p1, p2])
        e1, e2 = embeddings
        if e1.w < 2:
            raise ConfigError(f"backend embedding width {e1.w} leaves nothing to swap")

        anchor_images = backend.generate_image_batch(
            [(e1, config.seed), (e2, config.seed)]
        )
        text_feats = backend.text_features_batch([p1, p2])
        anchor_feats = backend.image_features_batch(anchor_images)

        swaps = generate_swap_set(e1.w, config.n, config.seed)
        jobs = [
            (swap_columns(e1, e2, f), _candidate_gen_seed(config, f.id)) for f in swaps
        ]
        images = backend.generate_image_batch(jobs)
        feats = backend.image_features_batch(images)

        candidates = [
            Candidate(
                swap=f,
                image=img,
                feat=ft,
                scores=CandidateScores(
                    sim_p1=cosine(ft, text_feats[0]),
                    sim_p2=cosine(ft, text_feats[1]),
                    sim_i1=cosine(ft, anchor_feats[0]),
                    sim_i2=cosine(ft, anchor_feats[1]),
                ),
            )
            for f, img, ft in zip(swaps, images, feats)
        ]
        by_id = {c.id: c for c in candidates}

        coarse_trace = coarse_filter(candidates, config.theta)
        traces["coarse"] = coarse_trace.to_json_dict()
        coarse = [by_id[i] for i in coarse_trace.kept_ids]

        fine_trace = fine_filter(
            coarse, config.alpha_bar, config.beta_bar, config.filter_mode
        )
        traces["fine"] = fine_trace.to_json_dict()
        fine = [by_id[i] for i in fine_trace.kept_ids]

        anchor_segs = backend.segment_batch(anchor_images)
        c1 = anchor_segs[0].features
        c2 = anchor_segs[1].features

        skipped: set[int] = set()
        ladder = (("fine", 0, fine), ("coarse", 1, coarse), ("all", 2, candidates))
        for name, level, pool in ladder:
            if not pool:
                continue
            pending = [c for c in pool if c.components is None]
            segs = backend.segment_batch([c.image for c in pending])
            for cand, seg in zip(pending, segs):
                cand.components = seg.features
                cand.mask_areas_px = seg.mask_areas_px
            outcome = select_optimal(pool, c1, c2)
            skipped.update(outcome.skipped_no_components)
            if outcome.selected is not None:
                selection = {
                    "selected_id": outcome.selected.id,
                    "fallback_level": level,
                    "from_set": name,
                    "skipped_no_components": sorted(skipped),
                }
                break
        else:
            # nothing anywhere produced components; flag a last-resort pick
            winner = min(candidates, key=lambda c: c.id)
            selection = {
                "selected_id": winner.id,
                "fallback_level": 3,
                "from_set": "none",
                "skipped_no_components": sorted(skipped),
            }
        status = "complete"
    except BackendError as exc:
        status = "incomplete"
        error = str(exc)

    finished_at = _utc_now()
    wall_ms = (time.perf_counter() - t0) * 1000.0

    anchors = []
    for index, (raw, templated) in enumerate(((prompt_a, p1), (prompt_b, p2)), start=1):
        if len(embeddings) == 2 and len(anchor_images) == 2:
            seg = anchor_segs[index - 1]
            anchors.append(
                _anchor_record(
                    raw,
                    templated,
                    anchor_images[index - 1],
                    embeddings[index - 1],
                    index,
                    len(seg.features) if seg is not None else None,
                    seg.mask_areas_px if seg is not None else None,
                )
            )

    artifacts: dict[str, bytes] = {}
    for index, record in enumerate(anchors, start=1):
        artifacts[record.image_path] = anchor_images[index - 1].data
        artifacts[record.embedding_path] = embedding_to_bytes(embeddings[index - 1])
    for cand in candidates:
        artifacts[f"candidates/{cand.id}.png"] = cand.image.data
    if selection["selected_id"] is not None:
        winner = next(c for c in candidates if c.id == selection["selected_id"])
        artifacts["selected.png"] = winner.image.data

    manifest = RunManifest(
        config=config,
        backend=info.to_payload(),
        prompts={"raw": [prompt_a, prompt_b], "templated": [p1, p2]},
        anchors=anchors,
        candidates=[_candidate_record(c) for c in sorted(candidates, key=lambda c: c.id)],
        filters=traces,
        selection=selection,
        status=status,
        error=error,
        timing={
            "started_at": started_at,
            "finished_at": finished_at,
            "wall_ms": wall_ms,
        },
        artifacts=artifacts,
    )
    if status == "complete":
        manifest.validate()
    return manifest
