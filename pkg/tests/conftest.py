import numpy as np
import pytest

from ubmlsmc import bip_model as bm
from ubmlsmc.smc import KernelConfig


@pytest.fixture(scope="session")
def toy():
    """Toy model with M = 50, data from u = 0.5 at theta* = 2."""
    spec = bm.toy_example()
    return spec.with_data(bm.generate_data(spec, [0.5], 2.0, truth_level=12, seed=1))


@pytest.fixture(scope="session")
def general():
    """K = 2 elliptic example, data from u = (0.5, -0.3) at theta = 0.3."""
    spec = bm.general_example()
    return spec.with_data(bm.generate_data(spec, [0.5, -0.3], 0.3, truth_level=12, seed=0))


@pytest.fixture
def kernel():
    return KernelConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def record(number, name, ok, detail):
        line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
