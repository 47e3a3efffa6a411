"""Shared fixtures and the per-criterion summary printed at the end of a run."""
from __future__ import annotations

from dataclasses import replace

import pytest

from dsplan.formulation import build_all_recourse, build_first_stage
from dsplan.generate import random_instance
from dsplan.network import equiprobable, load_bundled

import criteria


@pytest.fixture(scope="session")
def bundled():
    return load_bundled()


@pytest.fixture(scope="session")
def bundled_model(bundled):
    fs = build_first_stage(bundled)
    return bundled, fs, build_all_recourse(bundled, fs.index)


@pytest.fixture(scope="session")
def small():
    """Random 4-6 node instance with few scenarios, reused by the unit tests."""
    return random_instance(2)


@pytest.fixture(scope="session")
def small_model(small):
    fs = build_first_stage(small)
    return small, fs, build_all_recourse(small, fs.index)


@pytest.fixture(scope="session")
def tiny():
    """Bundled network restricted to one scenario and one time block."""
    inst = load_bundled()
    return replace(inst.with_scenarios(equiprobable([1.0])), time_blocks=inst.time_blocks[:1])


def pytest_terminal_summary(terminalreporter):
    if criteria.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in criteria.summary_lines():
            terminalreporter.write_line(line)
