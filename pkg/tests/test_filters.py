import math
import random

import pytest

from bass.errors import ConfigError
from bass.sampler import (
    FILTER_LITERAL,
    FILTER_QUANTILE,
    coarse_filter,
    fine_filter,
)

from conftest import candidate_from_gaps, make_candidate
from reference_bass import naive_coarse, naive_fine_literal, naive_fine_quantile


def text_candidates(gaps):
    """Candidates whose text gaps equal the given values, ids 0..n-1."""

    return [
        make_candidate(i, sim_p1=gap, sim_p2=0.0) for i, gap in enumerate(gaps)
    ]


class TestCoarseFilter:
    def test_direct_inequality(self):
        trace = coarse_filter(text_candidates([0.01, 0.06, 0.03]), theta=0.05)
        assert trace.kept_ids == [0, 2]
        assert trace.input_ids == [0, 1, 2]
        assert trace.threshold_used == {"theta": 0.05}

    def test_theta_two_keeps_all(self):
        cands = [
            make_candidate(i, sim_p1=random.Random(i).uniform(-1, 1),
                           sim_p2=random.Random(i + 99).uniform(-1, 1))
            for i in range(20)
        ]
        assert coarse_filter(cands, theta=2.0).kept_ids == list(range(20))

    def test_theta_inf_keeps_all(self):
        cands = text_candidates([0.5, 1.5, 2.0])
        assert coarse_filter(cands, theta=math.inf).kept_ids == [0, 1, 2]

    def test_empty_output_is_legal(self):
        trace = coarse_filter(text_candidates([0.5, 0.4]), theta=0.1)
        assert trace.kept_ids == []
        assert not trace.empty_input

    def test_empty_input_flagged(self):
        trace = coarse_filter([], theta=0.05)
        assert trace.kept_ids == []
        assert trace.empty_input


class TestFineFilterQuantile:
    def test_worked_example(self):
        # (gap, sum): a=(0.10,1.2) b=(0.02,0.8) c=(0.05,1.5) d=(0.01,0.9) e=(0.20,0.7)
        # k_gap = ceil(5*0.4) = 2 keeps {d, b}; k_sum = 2 keeps {e, b}; intersection {b}
        spec = {0: (0.10, 1.2), 1: (0.02, 0.8), 2: (0.05, 1.5), 3: (0.01, 0.9), 4: (0.20, 0.7)}
        cands = [candidate_from_gaps(i, g, s) for i, (g, s) in spec.items()]
        trace = fine_filter(cands, alpha_bar=0.4, beta_bar=0.4, mode=FILTER_QUANTILE)
        assert trace.kept_ids == [1]
        assert trace.threshold_used["alpha"] == pytest.approx(0.02)
        assert trace.threshold_used["beta"] == pytest.approx(0.8)

    def test_full_fractions_keep_all(self):
        cands = [candidate_from_gaps(i, 0.1 * i, 1 - 0.05 * i) for i in range(10)]
        trace = fine_filter(cands, alpha_bar=1.0, beta_bar=1.0, mode=FILTER_QUANTILE)
        assert trace.kept_ids == list(range(10))

    def test_zero_fraction_keeps_none(self):
        cands = [candidate_from_gaps(i, 0.1, 0.5) for i in range(5)]
        assert fine_filter(cands, 0.0, 0.5, FILTER_QUANTILE).kept_ids == []
        assert fine_filter(cands, 0.5, 0.0, FILTER_QUANTILE).kept_ids == []

    def test_empty_input_flagged(self):
        trace = fine_filter([], 0.4, 0.1, FILTER_QUANTILE)
        assert trace.kept_ids == []
        assert trace.empty_input
        assert trace.threshold_used == {"alpha": None, "beta": None}

    def test_ties_broken_by_id(self):
        cands = [candidate_from_gaps(i, 0.5, 1.0) for i in range(4)]  # all identical
        trace = fine_filter(cands, alpha_bar=0.5, beta_bar=0.5, mode=FILTER_QUANTILE)
        assert trace.kept_ids == [0, 1]  # exactly k lowest ids, not all ties

    def test_float_fuzz_in_rank_arithmetic(self):
        # 150 * 0.4 must rank 60 candidates, not 61
        cands = [candidate_from_gaps(i, i / 1000.0, 1.0) for i in range(150)]
        trace = fine_filter(cands, alpha_bar=0.4, beta_bar=1.0, mode=FILTER_QUANTILE)
        assert len(trace.kept_ids) == 60

    def test_output_bounds_at_operating_point(self):
        # 150 inputs at the default fractions: kept count can never exceed
        # min(ceil(150*0.4), ceil(150*0.1)) = 15, and never go below 0
        rng = random.Random(2)
        for trial in range(20):
            cands = [
                candidate_from_gaps(i, rng.uniform(0, 1), rng.uniform(0, 2))
                for i in range(150)
            ]
            kept = fine_filter(cands, 0.4, 0.1, FILTER_QUANTILE).kept_ids
            assert 0 <= len(kept) <= 15


class TestFineFilterLiteral:
    def test_thresholds_from_descending_ranks(self):
        # gaps desc: .20 .10 .05 .02 .01 / sums desc: 1.5 1.2 .9 .8 .7
        # alpha_bar=0.4 -> rank 2 -> alpha=.10 ; beta_bar=0.4 -> rank 2 -> beta=1.2
        spec = {0: (0.10, 1.2), 1: (0.02, 0.8), 2: (0.05, 1.5), 3: (0.01, 0.9), 4: (0.20, 0.7)}
        cands = [candidate_from_gaps(i, g, s) for i, (g, s) in spec.items()]
        trace = fine_filter(cands, alpha_bar=0.4, beta_bar=0.4, mode=FILTER_LITERAL)
        assert trace.threshold_used["alpha"] == pytest.approx(0.10)
        assert trace.threshold_used["beta"] == pytest.approx(1.2)
        # keep gap <= .10 and sum <= 2.4: ids 0,1,3 (.10/.02/.01 gaps) plus 2? gap .05 sum 1.5 ok
        assert trace.kept_ids == [0, 1, 2, 3]

    def test_keeps_roughly_complement_fraction(self):
        rng = random.Random(0)
        cands = [
            candidate_from_gaps(i, rng.uniform(0, 0.5), rng.uniform(0.2, 1.8))
            for i in range(200)
        ]
        kept = fine_filter(cands, 0.4, 0.1, FILTER_LITERAL).kept_ids
        # alpha cuts ~40% off the top of the gap list; the sum bound 2*beta is
        # loose at beta_bar=0.1, so roughly 60% survive
        assert 90 <= len(kept) <= 150

    def test_zero_fractions_clamp_to_rank_one(self):
        cands = [candidate_from_gaps(i, 0.1 * (i + 1), 0.5) for i in range(5)]
        trace = fine_filter(cands, 0.0, 0.0, FILTER_LITERAL)
        assert trace.threshold_used["alpha"] == pytest.approx(0.5)  # largest gap
        assert trace.kept_ids == [0, 1, 2, 3, 4]


class TestOracleEquivalence:
    def _random_instance(self, rng, n):
        return [
            candidate_from_gaps(i, rng.uniform(0, 1.0), rng.uniform(-1.0, 2.0))
            for i in range(n)
        ]

    def test_coarse_matches_naive_on_random_instances(self):
        rng = random.Random(42)
        for _ in range(300):
            n = rng.randint(0, 50)
            cands = [
                make_candidate(i, sim_p1=rng.uniform(-1, 1), sim_p2=rng.uniform(-1, 1))
                for i in range(n)
            ]
            theta = rng.choice([0.0, 0.01, 0.05, 0.2, 1.0, 2.0])
            expected = naive_coarse(
                [(c.id, c.scores.gap_text) for c in cands], theta
            )
            assert coarse_filter(cands, theta).kept_ids == expected

    def test_fine_quantile_matches_naive(self):
        rng = random.Random(7)
        for _ in range(300):
            n = rng.randint(0, 50)
            cands = self._random_instance(rng, n)
            a, b = rng.random(), rng.random()
            expected = naive_fine_quantile(
                [(c.id, c.scores.gap_image, c.scores.sum_image) for c in cands], a, b
            )
            assert fine_filter(cands, a, b, FILTER_QUANTILE).kept_ids == expected

    def test_fine_literal_matches_naive(self):
        rng = random.Random(13)
        for _ in range(300):
            n = rng.randint(0, 50)
            cands = self._random_instance(rng, n)
            a, b = rng.random(), rng.random()
            expected = naive_fine_literal(
                [(c.id, c.scores.gap_image, c.scores.sum_image) for c in cands], a, b
            )
            assert fine_filter(cands, a, b, FILTER_LITERAL).kept_ids == expected


class TestInvariants:
    def test_cardinality_bounds_quantile(self):
        rng = random.Random(5)
        for _ in range(200):
            m = rng.randint(1, 60)
            cands = [
                candidate_from_gaps(i, rng.uniform(0, 1), rng.uniform(0, 2))
                for i in range(m)
            ]
            a, b = rng.random(), rng.random()
            kept = fine_filter(cands, a, b, FILTER_QUANTILE).kept_ids
            k_gap = math.ceil(round(m * a, 9))
            k_sum = math.ceil(round(m * b, 9))
            assert len(kept) <= min(k_gap, k_sum)
            assert len(kept) >= max(0, k_gap + k_sum - m)

    def test_monotone_in_theta(self):
        rng = random.Random(11)
        cands = [
            make_candidate(i, sim_p1=rng.uniform(-1, 1), sim_p2=rng.uniform(-1, 1))
            for i in range(40)
        ]
        previous = set()
        for theta in (0.0, 0.01, 0.05, 0.1, 0.5, 2.0):
            kept = set(coarse_filter(cands, theta).kept_ids)
            assert previous <= kept
            previous = kept

    def test_monotone_in_fractions_quantile(self):
        rng = random.Random(17)
        cands = [
            candidate_from_gaps(i, rng.uniform(0, 1), rng.uniform(0, 2))
            for i in range(40)
        ]
        previous = set()
        for a in (0.0, 0.1, 0.3, 0.6, 1.0):
            kept = set(fine_filter(cands, a, 0.5, FILTER_QUANTILE).kept_ids)
            assert previous <= kept
            previous = kept
        previous = set()
        for b in (0.0, 0.1, 0.3, 0.6, 1.0):
            kept = set(fine_filter(cands, 0.5, b, FILTER_QUANTILE).kept_ids)
            assert previous <= kept
            previous = kept

    def test_permutation_invariance(self):
        rng = random.Random(23)
        cands = [
            candidate_from_gaps(i, rng.uniform(0, 1), rng.uniform(0, 2))
            for i in range(30)
        ]
        base_coarse = coarse_filter(cands, 0.5).kept_ids
        base_fine = fine_filter(cands, 0.4, 0.3, FILTER_QUANTILE).kept_ids
        for _ in range(10):
            shuffled = cands[:]
            rng.shuffle(shuffled)
            assert coarse_filter(shuffled, 0.5).kept_ids == base_coarse
            assert fine_filter(shuffled, 0.4, 0.3, FILTER_QUANTILE).kept_ids == base_fine

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            fine_filter([], 0.4, 0.1, mode="middle")
