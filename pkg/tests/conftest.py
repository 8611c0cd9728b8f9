import numpy as np
import pytest

from syfar.data import SyntheticSpec, generate_synthetic, split
from syfar.nn import Model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(k=4, dims=16, samples_per_class=40, image_shape=(4, 4), seed=3)
    return split(generate_synthetic(spec), seed=0)


@pytest.fixture
def small_model():
    return Model.initialize(16, (8,), 4, seed=0)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(name, passed, detail)``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
