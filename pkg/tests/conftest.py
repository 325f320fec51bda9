import numpy as np
import pytest

from bass.backend import Backend, GeneratedImage
from bass.embedding import SwapVector
from bass.metrics import FeatureVector
from bass.sampler import Candidate, CandidateScores


def make_candidate(
    cid: int,
    *,
    sim_p1=0.0,
    sim_p2=0.0,
    sim_i1=0.0,
    sim_i2=0.0,
    components=None,
    w: int = 4,
) -> Candidate:
    """Synthetic candidate with prescribed similarity scores."""

    bits = np.zeros(w, dtype=np.uint8)
    bits[cid % w] = 1
    image = GeneratedImage.from_bytes(
        f"image-{cid}".encode("ascii"), media_type="image/x-test"
    )
    feat = FeatureVector(
        values=np.ones(3, dtype=np.float32), source="image", extractor_id="test"
    )
    return Candidate(
        swap=SwapVector(bits=bits, id=cid),
        image=image,
        feat=feat,
        scores=CandidateScores(
            sim_p1=sim_p1, sim_p2=sim_p2, sim_i1=sim_i1, sim_i2=sim_i2
        ),
        components=components,
    )


def candidate_from_gaps(cid: int, gap_image: float, sum_image: float) -> Candidate:
    """Candidate whose image gap/sum equal the given values exactly."""

    sim_i1 = (sum_image + gap_image) / 2.0
    sim_i2 = (sum_image - gap_image) / 2.0
    return make_candidate(cid, sim_i1=sim_i1, sim_i2=sim_i2)


def feature(values, source="component", extractor_id="test") -> FeatureVector:
    return FeatureVector(
        values=np.asarray(values, dtype=np.float32),
        source=source,
        extractor_id=extractor_id,
    )


class CountingBackend(Backend):
    """Wrapper counting how many calls reach the wrapped backend."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.max_inflight = inner.max_inflight
        self.calls: dict[str, int] = {}

    def _count(self, op: str) -> None:
        self.calls[op] = self.calls.get(op, 0) + 1

    @property
    def total_calls(self) -> int:
        return sum(self.calls.values())

    def info(self):
        return self.inner.info()

    def encode_text(self, prompt):
        self._count("encode_text")
        return self.inner.encode_text(prompt)

    def generate_image(self, e, gen_seed):
        self._count("generate_image")
        return self.inner.generate_image(e, gen_seed)

    def image_features(self, img):
        self._count("image_features")
        return self.inner.image_features(img)

    def text_features(self, prompt):
        self._count("text_features")
        return self.inner.text_features(prompt)

    def segment(self, img):
        self._count("segment")
        return self.inner.segment(img)


@pytest.fixture
def mock_server():
    """A live wire-protocol server around mock seed 7; shut down after the test."""

    from bass.mockbackend import MockBackend
    from bass.mockserver import start_server

    server, _thread = start_server(MockBackend(7))
    yield server
    server.shutdown()
