import numpy as np
import pytest

from xbodyid.data import SyntheticConfig, generate_synthetic_dataset
from xbodyid.model import ModelConfig

TINY = dict(image_height=64, image_width=32, patch_size=16, embed_dim=32, depth=2, heads=4,
            region_rows=((0, 1), (1, 2), (2, 4)), n_classes=5)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = SyntheticConfig(n_subjects=6, n_test_subjects=2, images_per_subject_per_domain=2,
                          image_height=64, image_width=32, seed=3)
    return generate_synthetic_dataset(cfg, out), out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
