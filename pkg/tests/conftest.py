import numpy as np
import pytest

from vidbossa.descriptors import DescriptorSet, pack_bits
from vidbossa.synth import CorpusSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_set(rng, n, D):
    """DescriptorSet of ``n`` uniformly random ``D``-bit descriptors."""
    return DescriptorSet(D, pack_bits(rng.integers(0, 2, (n, D)).astype(bool)))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """8 videos per class, 4 folds, 64x64 frames."""
    out = tmp_path_factory.mktemp("corpus")
    spec = CorpusSpec(seed=3, n_videos_per_class=8, frames_per_video=(3, 5), image_size=64, n_folds=4)
    return generate(spec, out)


# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
