import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from modechoice.synthgen import SynthConfig, generate


@pytest.fixture(scope="session")
def small_synth():
    """A 1,200-session synthetic dataset shared by read-only tests."""
    return generate(SynthConfig(seed=11, n_sessions=1200, n_profiles=30, n_pois=800))


@pytest.fixture(scope="session")
def small_sessions(small_synth):
    return small_synth.sessions


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary and return the outcome."""
    lines = request.config.stash[_VERDICTS]

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {criterion}" + (f": {detail}" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
