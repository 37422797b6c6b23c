from pathlib import Path

import pytest

import mirrorsim as ms
from mirrorsim.netlist import DcSweepDirective, FourDirective, TranDirective

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def directive(circuit, cls):
    matches = [d for d in circuit.directives if isinstance(d, cls)]
    assert matches, f"{circuit.title!r} has no {cls.__name__}"
    return matches[0]


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS


@pytest.fixture(scope="session")
def basic_cm():
    return ms.parse_file(CORPUS / "basic_cm.cir")


@pytest.fixture(scope="session")
def widlar():
    return ms.parse_file(CORPUS / "widlar.cir")


@pytest.fixture(scope="session")
def widlar_mem():
    return ms.parse_file(CORPUS / "widlar_mem.cir")


@pytest.fixture(scope="session")
def memristor_sine():
    return ms.parse_file(CORPUS / "memristor_sine.cir")


# The transients below are the expensive runs; share them across tests.

@pytest.fixture(scope="session")
def widlar_tran(widlar):
    return ms.run_transient(widlar, directive(widlar, TranDirective))


@pytest.fixture(scope="session")
def widlar_mem_tran(widlar_mem):
    return ms.run_transient(widlar_mem, directive(widlar_mem, TranDirective))


@pytest.fixture(scope="session")
def memristor_sine_tran(memristor_sine):
    return ms.run_transient(memristor_sine,
                            directive(memristor_sine, TranDirective))
