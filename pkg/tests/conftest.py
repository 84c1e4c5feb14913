import numpy as np
import pytest

from mrpswing.lattice import FactorSpec, build_lattice, default_lattice

HEADER = ("respondent_id", "day", "gender", "race", "age", "education", "state", "party", "intent")


@pytest.fixture
def lattice():
    return default_lattice()


@pytest.fixture
def tiny_lattice():
    return build_lattice([FactorSpec("g", ("a", "b")), FactorSpec("h", ("x", "y", "z"))])


def make_row(rid, day, intent="CAND_A", party="DEM", cell=("male", "white", "18-29", "hs_grad", "CA")):
    return dict(zip(HEADER, (rid, str(day), *cell, party, intent)))


@pytest.fixture
def row():
    return make_row


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
