import numpy as np
import pytest

from hypverify.model import HypothesisModel, load_bundled


@pytest.fixture(scope="session")
def setup1():
    return load_bundled("setup1")[0]


@pytest.fixture(scope="session")
def setup2():
    return load_bundled("setup2")[0]


@pytest.fixture(scope="session")
def identical():
    """Three hypotheses that no experiment can tell apart."""
    row = [0.3, 0.7]
    prob = np.array([[row, row], [row, row], [row, row]])
    return HypothesisModel(("a", "b", "c"), ("u1", "u2"), ("0", "1"), prob)


@pytest.fixture(scope="session")
def scenarios(setup1, setup2):
    return {"setup1": setup1, "setup2": setup2}


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
