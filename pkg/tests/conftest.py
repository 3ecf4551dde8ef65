import numpy as np
import pytest

from cric.data import EnvDataset, MultiEnvDataset, SemConfig, generate_sem

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gaussian_envs():
    """Two 2-D Gaussian environments with a mean shift."""
    r = np.random.default_rng(7)
    a = r.normal(size=(400, 2))
    b = r.normal(size=(300, 2)) + [0.7, -0.4]
    return MultiEnvDataset({
        "a": EnvDataset(a, a @ [1.0, 0.5] + r.normal(size=400)),
        "b": EnvDataset(b, b @ [1.0, 0.5] + r.normal(size=300)),
    })


@pytest.fixture(scope="session")
def fou_small():
    return generate_sem(SemConfig.for_setting("FOU", (0.2, 2.0, 5.0), 267, seed=3))
