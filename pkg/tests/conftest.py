"""Shared fixtures.  Branches at the reference setting are traced once per session."""

from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skt_morse.config import RunConfig
from skt_morse.diagram import Tracer
from skt_morse.model import Grid, reference_setting

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<4} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def params():
    return reference_setting()


@pytest.fixture(scope="session")
def grid400():
    return Grid(400, 0.5)


@pytest.fixture(scope="session")
def tracer():
    return Tracer(RunConfig())


@pytest.fixture(scope="session")
def coexistence(tracer):
    return tracer.coexistence()


@pytest.fixture(scope="session")
def trivial(tracer):
    return tracer.trivial()


@pytest.fixture(scope="session")
def segregation_2(tracer):
    """(plus, minus) halves leaving beta_2, traced to lambda = 60."""
    return tracer.segregation(2, lambda_max=60.0)


@pytest.fixture(scope="session")
def segregation_3(tracer):
    """(plus, minus) halves leaving beta_3, traced to lambda = 92."""
    return tracer.segregation(3, lambda_max=92.0)


def coexistence_events(branch):
    """Map (index_before, index_after) -> first event with that index change."""
    out = {}
    for e in branch.events:
        out.setdefault((e.index_before, e.index_after), e)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
