import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bass.embedding import (
    MixStrategy,
    PromptEmbedding,
    SwapVector,
    complement,
    embedding_from_bytes,
    embedding_to_bytes,
    generate_swap_set,
    mix,
    swap_columns,
)
from bass.errors import (
    EncoderMismatchError,
    InfeasibleCountError,
    SerializationError,
    ShapeMismatchError,
)

GOLDEN = Path(__file__).parent / "data" / "swapset_w16_n200_seed42.json"


def emb(matrix, prompt="p", encoder="enc") -> PromptEmbedding:
    return PromptEmbedding(matrix=np.asarray(matrix), prompt_text=prompt, encoder_id=encoder)


finite_f32 = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, width=32
)


@st.composite
def embedding_pairs(draw):
    h = draw(st.integers(min_value=1, max_value=6))
    w = draw(st.integers(min_value=2, max_value=8))
    m1 = draw(arrays(np.float32, (h, w), elements=finite_f32))
    m2 = draw(arrays(np.float32, (h, w), elements=finite_f32))
    bits = draw(arrays(np.uint8, w, elements=st.integers(0, 1)))
    return emb(m1), emb(m2), SwapVector(bits=bits, id=0)


class TestSwapColumns:
    def test_all_ones_returns_first(self):
        e1 = emb([[1, 2], [3, 4]])
        e2 = emb([[5, 6], [7, 8]])
        out = swap_columns(e1, e2, SwapVector(bits=[1, 1]))
        assert np.array_equal(out.matrix, e1.matrix)

    def test_all_zeros_returns_second(self):
        e1 = emb([[1, 2], [3, 4]])
        e2 = emb([[5, 6], [7, 8]])
        out = swap_columns(e1, e2, SwapVector(bits=[0, 0]))
        assert np.array_equal(out.matrix, e2.matrix)

    def test_direct_evaluation(self):
        e1 = emb([[1, 2], [3, 4]])
        e2 = emb([[5, 6], [7, 8]])
        out = swap_columns(e1, e2, SwapVector(bits=[1, 0]))
        assert out.matrix.tolist() == [[1, 6], [3, 8]]

    def test_carries_both_prompts_and_swap_id(self):
        e1 = emb([[1.0, 2.0]], prompt="frog")
        e2 = emb([[3.0, 4.0]], prompt="broccoli")
        out = swap_columns(e1, e2, SwapVector(bits=[1, 0], id=17))
        assert "frog" in out.prompt_text
        assert "broccoli" in out.prompt_text
        assert "17" in out.prompt_text

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            swap_columns(emb([[1, 2]]), emb([[1, 2], [3, 4]]), SwapVector(bits=[1, 0]))
        with pytest.raises(ShapeMismatchError):
            swap_columns(emb([[1, 2]]), emb([[1, 2]]), SwapVector(bits=[1, 0, 1]))

    def test_encoder_mismatch_rejected(self):
        with pytest.raises(EncoderMismatchError):
            swap_columns(
                emb([[1, 2]], encoder="a"),
                emb([[1, 2]], encoder="b"),
                SwapVector(bits=[1, 0]),
            )

    @settings(max_examples=150, deadline=None)
    @given(embedding_pairs())
    def test_complement_identity(self, pair):
        e1, e2, f = pair
        lhs = swap_columns(e1, e2, f).matrix + swap_columns(e1, e2, complement(f)).matrix
        assert np.array_equal(lhs, e1.matrix + e2.matrix)

    @settings(max_examples=100, deadline=None)
    @given(embedding_pairs())
    def test_self_swap(self, pair):
        e1, _, f = pair
        assert np.array_equal(swap_columns(e1, e1, f).matrix, e1.matrix)

    @settings(max_examples=100, deadline=None)
    @given(embedding_pairs())
    def test_column_provenance(self, pair):
        e1, e2, f = pair
        out = swap_columns(e1, e2, f)
        for j in range(e1.w):
            source = e1 if f.bits[j] else e2
            assert out.matrix[:, j].tobytes() == source.matrix[:, j].tobytes()


class TestMix:
    def test_interpolation_endpoints(self):
        e1 = emb([[1.5, -2.25]])
        e2 = emb([[7.0, 0.125]])
        assert np.array_equal(
            mix(e1, e2, MixStrategy.linear_interpolation(1.0)).matrix, e1.matrix
        )
        assert np.array_equal(
            mix(e1, e2, MixStrategy.linear_interpolation(0.0)).matrix, e2.matrix
        )

    def test_interpolation_midpoint(self):
        out = mix(emb([[2.0]]), emb([[4.0]]), MixStrategy.linear_interpolation(0.5))
        assert out.matrix.tolist() == [[3.0]]

    def test_weight_out_of_range_rejected(self):
        with pytest.raises(ShapeMismatchError):
            MixStrategy.linear_interpolation(1.5)

    def test_row_swap(self):
        e1 = emb([[1, 2], [3, 4]])
        e2 = emb([[5, 6], [7, 8]])
        out = mix(e1, e2, MixStrategy.row_swap([1, 0]))
        assert out.matrix.tolist() == [[1, 2], [7, 8]]

    def test_row_mask_length_checked(self):
        with pytest.raises(ShapeMismatchError):
            mix(emb([[1, 2]]), emb([[3, 4]]), MixStrategy.row_swap([1, 0]))

    def test_column_swap_via_mix(self):
        e1 = emb([[1, 2], [3, 4]])
        e2 = emb([[5, 6], [7, 8]])
        strategy = MixStrategy.column_swap(SwapVector(bits=[0, 1]))
        assert mix(e1, e2, strategy).matrix.tolist() == [[5, 2], [7, 4]]


class TestComplement:
    def test_examples(self):
        f = SwapVector(bits=[1, 0, 1], id=3)
        assert complement(f).bits.tolist() == [0, 1, 0]
        assert complement(complement(f)).bits.tolist() == f.bits.tolist()
        assert complement(f).id == 3


class TestGenerateSwapSet:
    def test_width_two_exhausts_admissible_set(self):
        out = generate_swap_set(2, 2, seed=9)
        assert sorted(v.as_string() for v in out) == ["01", "10"]

    def test_deterministic(self):
        a = generate_swap_set(10, 50, seed=1234)
        b = generate_swap_set(10, 50, seed=1234)
        assert [v.as_string() for v in a] == [v.as_string() for v in b]

    def test_ids_in_draw_order(self):
        out = generate_swap_set(8, 20, seed=5)
        assert [v.id for v in out] == list(range(20))

    def test_no_duplicates_no_degenerates(self):
        out = generate_swap_set(6, 62, seed=0)  # the entire admissible set
        strings = [v.as_string() for v in out]
        assert len(set(strings)) == 62
        assert "000000" not in strings
        assert "111111" not in strings

    def test_infeasible_count_rejected(self):
        with pytest.raises(InfeasibleCountError):
            generate_swap_set(3, 7, seed=0)  # admissible set has 6 members
        generate_swap_set(3, 6, seed=0)

    def test_bad_sizes_rejected(self):
        with pytest.raises(InfeasibleCountError):
            generate_swap_set(1, 1, seed=0)
        with pytest.raises(InfeasibleCountError):
            generate_swap_set(4, 0, seed=0)

    def test_golden_regression(self):
        # Frozen output of this generator; any change to the draw procedure
        # is a breaking change for reproducibility.
        expected = json.loads(GOLDEN.read_text())
        got = [v.as_string() for v in generate_swap_set(16, 200, seed=42)]
        assert got == expected


class TestSerialization:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(3)
        e = emb(
            rng.standard_normal((8, 16)).astype(np.float32),
            prompt="A photo of frog",
            encoder="enc-v1",
        )
        back = embedding_from_bytes(embedding_to_bytes(e))
        assert back.matrix.tobytes() == e.matrix.tobytes()
        assert back.prompt_text == e.prompt_text
        assert back.encoder_id == e.encoder_id

    def test_unicode_prompt(self):
        e = emb([[1.0, 2.0]], prompt="proposé — 蛙")
        assert embedding_from_bytes(embedding_to_bytes(e)).prompt_text == e.prompt_text

    def test_bad_magic_rejected(self):
        with pytest.raises(SerializationError):
            embedding_from_bytes(b"NOTMAGIC" + b"\x00" * 32)

    def test_truncated_payload_rejected(self):
        blob = embedding_to_bytes(emb([[1.0, 2.0], [3.0, 4.0]]))
        with pytest.raises(SerializationError):
            embedding_from_bytes(blob[:-4])


class TestValidation:
    def test_non_finite_rejected(self):
        with pytest.raises(ShapeMismatchError):
            emb([[1.0, float("nan")]])
        with pytest.raises(ShapeMismatchError):
            emb([[1.0, float("inf")]])

    def test_matrix_is_immutable(self):
        e = emb([[1.0, 2.0]])
        with pytest.raises(ValueError):
            e.matrix[0, 0] = 5.0

    def test_swap_vector_bits_validated(self):
        with pytest.raises(ShapeMismatchError):
            SwapVector(bits=[0, 2, 1])
