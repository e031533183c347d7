import numpy as np
import pytest

from islandsched.config import load_config
from islandsched.pspb import DsgUnit

# acceptance lines collected during the run, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def units():
    return [DsgUnit(1, 4, 0.2, 1, cost_marginal=3.32, cost_fixed=0.026, cost_startup=3, bus=1),
            DsgUnit(2, 3, 0.4, 2, cost_marginal=2.55, cost_fixed=0.033, cost_startup=1, bus=15)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
