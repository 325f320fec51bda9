import pytest

from bass.backend import (
    Backend,
    BackendHandle,
    CachingBackend,
    HttpBackend,
    RetryPolicy,
)
from bass.errors import BackendError, ConfigError
from bass.mockbackend import MockBackend
from bass.pipeline import run_bass
from bass.sampler import PipelineConfig

from reference_bass import reference_pipeline


def run_mock(seed=5, n=40, mock_seed=7, max_inflight=1, **kwargs):
    backend = CachingBackend(MockBackend(mock_seed, max_inflight=max_inflight))
    config = PipelineConfig(n=n, seed=seed, **kwargs)
    return run_bass("frog", "broccoli", config, backend)


class TestDeterminism:
    def test_same_seed_identical_manifests(self):
        a = run_mock(seed=11)
        b = run_mock(seed=11)
        assert a.to_canonical_json(include_timing=False) == b.to_canonical_json(
            include_timing=False
        )
        assert a.artifacts == b.artifacts

    def test_max_inflight_does_not_change_results(self):
        a = run_mock(seed=3, max_inflight=1)
        b = run_mock(seed=3, max_inflight=16)
        assert a.to_canonical_json(include_timing=False) == b.to_canonical_json(
            include_timing=False
        )

    def test_different_seed_changes_swap_set(self):
        a = run_mock(seed=1)
        b = run_mock(seed=2)
        assert [c.bits for c in a.candidates] != [c.bits for c in b.candidates]

    def test_seed_per_candidate_changes_images(self):
        a = run_mock(seed=4, seed_per_candidate=False)
        b = run_mock(seed=4, seed_per_candidate=True)
        assert [c.bits for c in a.candidates] == [c.bits for c in b.candidates]
        assert [c.image_digest for c in a.candidates] != [
            c.image_digest for c in b.candidates
        ]


class TestStructure:
    def test_nesting_and_manifest_validation(self):
        manifest = run_mock(seed=8, n=60)
        manifest.validate()
        all_ids = {c.id for c in manifest.candidates}
        coarse = set(manifest.filters["coarse"]["kept_ids"])
        fine = set(manifest.filters["fine"]["kept_ids"])
        assert fine <= coarse <= all_ids
        sel = manifest.selection
        pool = {"fine": fine, "coarse": coarse, "all": all_ids, "none": all_ids}[
            sel["from_set"]
        ]
        assert sel["selected_id"] in pool

    def test_prompts_templated(self):
        manifest = run_mock(seed=1, n=5)
        assert manifest.prompts["raw"] == ["frog", "broccoli"]
        assert manifest.prompts["templated"] == [
            "A photo of frog",
            "A photo of broccoli",
        ]

    def test_anchor_records_complete(self):
        manifest = run_mock(seed=1, n=5)
        assert len(manifest.anchors) == 2
        for anchor in manifest.anchors:
            assert anchor.n_components == 4
            assert len(anchor.mask_areas_px) == 4
            assert anchor.image_digest
            assert anchor.embedding_digest

    def test_candidate_table_sorted_and_scored(self):
        manifest = run_mock(seed=2, n=30)
        ids = [c.id for c in manifest.candidates]
        assert ids == sorted(ids) == list(range(30))
        for c in manifest.candidates:
            assert c.gap_text == pytest.approx(abs(c.sim_p1 - c.sim_p2))
            assert c.gap_image == pytest.approx(abs(c.sim_i1 - c.sim_i2))
            assert c.sum_image == pytest.approx(c.sim_i1 + c.sim_i2)
        winner = manifest.candidate_by_id(manifest.selection["selected_id"])
        assert winner.r_score is not None
        assert winner.n_components == 4

    def test_selected_artifact_present(self):
        manifest = run_mock(seed=2, n=10)
        assert "selected.png" in manifest.artifacts
        winner = manifest.candidate_by_id(manifest.selection["selected_id"])
        assert manifest.artifacts["selected.png"] == manifest.artifacts[winner.image_path]

    def test_empty_prompt_rejected(self):
        with pytest.raises(ConfigError):
            run_bass("", "broccoli", PipelineConfig(n=5), CachingBackend(MockBackend(0)))


class TestReferenceAgreement:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_straight_line_script(self, seed):
        backend = CachingBackend(MockBackend(seed))
        config = PipelineConfig(n=60, seed=seed)
        manifest = run_bass("frog", "broccoli", config, backend)
        expected = reference_pipeline(backend, "frog", "broccoli", config)
        assert manifest.filters["coarse"]["kept_ids"] == expected["coarse_ids"]
        assert manifest.filters["fine"]["kept_ids"] == expected["fine_ids"]
        assert manifest.selection["selected_id"] == expected["selected_id"]
        assert manifest.selection["fallback_level"] == expected["fallback_level"]
        winner = manifest.candidate_by_id(manifest.selection["selected_id"])
        assert winner.r_score == pytest.approx(expected["r_score"], abs=1e-6)


class TestOverHttp:
    def test_http_run_equals_in_process_run(self, mock_server):
        config = PipelineConfig(n=15, seed=9)
        http = CachingBackend(
            HttpBackend(
                BackendHandle(endpoint=mock_server.base_url, max_inflight=8)
            )
        )
        local = CachingBackend(MockBackend(7))
        a = run_bass("frog", "broccoli", config, http)
        b = run_bass("frog", "broccoli", config, local)
        assert a.to_canonical_json(include_timing=False) == b.to_canonical_json(
            include_timing=False
        )


class TestFailureHandling:
    class FailsGeneration(Backend):
        max_inflight = 1

        def __init__(self, inner):
            self.inner = inner

        def info(self):
            return self.inner.info()

        def encode_text(self, prompt):
            return self.inner.encode_text(prompt)

        def generate_image(self, e, gen_seed):
            raise BackendError("generator down")

        def text_features(self, prompt):
            return self.inner.text_features(prompt)

    def test_backend_failure_yields_incomplete_manifest(self):
        backend = self.FailsGeneration(MockBackend(0))
        manifest = run_bass("frog", "broccoli", PipelineConfig(n=5), backend)
        assert manifest.status == "incomplete"
        assert "generator down" in manifest.error
        assert manifest.selection["selected_id"] is None
        assert manifest.candidates == []

    def test_fallback_to_all_when_filters_empty(self):
        # theta=0 on the mock leaves the coarse set empty (continuous gaps),
        # forcing the ladder down to the full candidate set
        manifest = run_mock(seed=6, n=12, theta=0.0)
        assert manifest.filters["coarse"]["kept_ids"] == []
        assert manifest.selection["from_set"] == "all"
        assert manifest.selection["fallback_level"] == 2
        manifest.validate()
