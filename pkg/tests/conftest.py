"""Shared fixtures: small grids, seeds and a quiet hypothesis profile."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from beltrami.seeds import FourierBesselSpec
from beltrami.surface import make_sphere_grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid16():
    return make_sphere_grid(n_theta=16, n_phi=32)


@pytest.fixture(scope="session")
def grid32():
    return make_sphere_grid(n_theta=32, n_phi=64)


@pytest.fixture(scope="session")
def low_degree_spec():
    """A fixed degree-2 spec with lambda = 1 (drawn once from a seeded generator)."""
    return FourierBesselSpec.random(1.0, 2, np.random.default_rng(3))


@pytest.fixture(scope="session")
def scenario_spec():
    """The calibrated degree-0 seed of the shipped iteration scenario."""
    return FourierBesselSpec(1.0, {(0, 0): np.array([0.0, 0.0, 10.0], complex)})


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion that ran in this session."""
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", {}) if mod else {}
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n].line())
