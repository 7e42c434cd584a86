import numpy as np
import pytest

from hremrg.model import FeatureBundle, ModelConfig, ReportModel


def tiny_model(seed=0, vocab_size=11, d_raw=6, d_model=8, depth=2, max_len=12, beam=2):
    config = ModelConfig(vocab_size=vocab_size, d_raw=d_raw, d_model=d_model, depth=depth, max_len=max_len, beam=beam)
    return ReportModel.initialize(config, seed)


def random_bundle(seed=0, n_regions=3, d_raw=6, scale=1.0):
    rng = np.random.default_rng(seed)
    return FeatureBundle(scale * rng.normal(size=(n_regions, d_raw)))


@pytest.fixture
def model():
    return tiny_model()


@pytest.fixture
def bundle():
    return random_bundle()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
