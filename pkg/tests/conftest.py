import numpy as np
import pytest

from action_lattice.pipeline import build_instance, load_config

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


@pytest.fixture(scope="session")
def inst():
    return build_instance(load_config())


@pytest.fixture(scope="session")
def inst_perturbed():
    return build_instance(load_config(overrides={"embedding": {"amplitudes": [0.15]},
                                                 "bounds": {"a": -1.61}}))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
