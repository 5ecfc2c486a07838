import sys
from pathlib import Path

import pytest

from probmem.netdsl import load_circuit
from probmem.statespace import enumerate_states, lump_states

HERE = Path(__file__).parent
CIRCUITS = HERE.parent / "circuits"
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))

CRITERIA: list[str] = []


def circuit_path(name: str) -> Path:
    return CIRCUITS / f"{name}.mn"


@pytest.fixture(scope="session")
def binary_ac():
    return load_circuit(circuit_path("binary_ac"))


@pytest.fixture(scope="session")
def five_series():
    return load_circuit(circuit_path("five_series_dc"))


@pytest.fixture(scope="session")
def tristate_ac():
    return load_circuit(circuit_path("tristate_ac"))


@pytest.fixture(scope="session")
def two_tristate():
    return load_circuit(circuit_path("two_tristate_dc"))


@pytest.fixture(scope="session")
def five_full(five_series):
    return enumerate_states(five_series)


@pytest.fixture(scope="session")
def five_lumped(five_full):
    return lump_states(five_full)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
