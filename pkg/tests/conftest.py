import numpy as np
import pytest
from hypothesis import settings

from echoview.dataset import synth_generate, uniform_spec

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """13 classes x 4 echos (3 train, 1 test) x 4 frames of 64 px sector scans."""
    out = tmp_path_factory.mktemp("tiny")
    synth_generate(out, uniform_spec(4), frames_per_echo=(4, 4), image_size=64, seed=3)
    return out


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
