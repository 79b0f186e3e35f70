import numpy as np
import pytest
import torch

from batinet import dataprep
from batinet.gn import Gn
from batinet.pdn import Pdn
from batinet.text import caption_for

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scenes32():
    return dataprep.generate(12, dataprep.SceneParams(32, 32), seed=3)


@pytest.fixture(scope="session")
def scenes64():
    return dataprep.generate(8, dataprep.SceneParams(64, 64), seed=4)


@pytest.fixture(scope="session")
def tiny_pdn():
    return Pdn(resolution=32, seed=0)


@pytest.fixture(scope="session")
def tiny_gn():
    return Gn(resolution=16, seed=0)


@pytest.fixture
def caption():
    return caption_for("red", "ellipse")


def random_image(rng, h=16, w=16):
    return rng.uniform(0, 1, (3, h, w))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance_log.RESULTS):
        passed, detail = acceptance_log.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
