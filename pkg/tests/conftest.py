import numpy as np
import pytest

from lmclab.dataio import SplitSpec, split, synth_blobs
from lmclab.mlp import Arch, init
from lmclab.ndcore import make_rng
from lmclab.trainer import TrainConfig, train


@pytest.fixture(scope="session")
def blobs():
    """Small 4-class problem: (train, test)."""
    full = synth_blobs(make_rng(11), 1600, 16, 4, 3.0, "blobs")
    parts = split(full, SplitSpec((("train", 0.75), ("test", 0.25)), 5))
    return parts["train"], parts["test"]


@pytest.fixture(scope="session")
def small_arch():
    return Arch((16, 32, 32, 4))


@pytest.fixture(scope="session")
def trained_pair(blobs, small_arch):
    """Two independently trained 16-32-32-4 checkpoints."""
    tr, te = blobs
    return tuple(train(small_arch, TrainConfig(epochs=8, batch_size=64, seed=s), tr, te) for s in (0, 1))


@pytest.fixture
def random_params(small_arch):
    return init(small_arch, make_rng(3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CONFIG = {
    "dataset": {"n": 900, "dim": 8, "classes": 3, "sep": 3.0, "seed": 1},
    "base_dims": [8, 16, 16, 3],
    "multipliers": ["1/2", "1", "2"],
    "seeds": [0, 1],
    "train": {"epochs": 3, "batch_size": 64},
    "grid": 5,
}


@pytest.fixture(scope="session")
def tiny_cfg():
    """A config that trains its whole 3x2 grid in about a second."""
    from lmclab.config import config_from_dict

    return config_from_dict(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_yaml(tmp_path_factory):
    import yaml

    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY_CONFIG))
    return p


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.skipped or rep.failed):
        return
    status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
    detail = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
    number, title = mark.args
    _ACCEPTANCE.setdefault(item.nodeid, [number, title, status, detail])[2:] = [status, detail]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_ACCEPTANCE.values(), key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"{status} [{number:>2}] {title}" + (f"  ({detail})" if detail else ""))
