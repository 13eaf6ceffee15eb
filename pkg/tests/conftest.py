import numpy as np
import pytest

from wsn_deploy.model import reference_scenario

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scenario():
    """Reference layout shrunk to a 30x30 grid for quick end-to-end runs."""
    return reference_scenario(grid=30)


def square_config(n_aps=1, n_bss=1, side=1000.0, grid=20, **overrides):
    """Uniform square with unit gains everywhere."""
    base = reference_scenario(
        grid=grid,
        n_aps=n_aps,
        n_bss=n_bss,
        region=((0.0, 0.0), (side, 0.0), (side, side), (0.0, side)),
        ap_tx_gain=(2.0,) * n_aps,
        ap_rx_gain=(2.0,) * n_aps,
        ap_loss=(1.0,) * n_aps,
        bs_rx_gain=(2.0,) * n_bss,
    )
    return base.with_(**overrides)
