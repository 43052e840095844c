import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csinas.channel import ScenarioConfig, generate_dataset
from csinas.search import prepare_feedback_data

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_scene():
    return ScenarioConfig(n_antennas=8, n_subcarriers=32, n_delay=8, max_delay=0.5e-6, seed=5, name="tiny")


@pytest.fixture(scope="session")
def tiny_dataset(tiny_scene):
    return generate_dataset(tiny_scene, 120)


@pytest.fixture(scope="session")
def tiny_data(tiny_dataset):
    return prepare_feedback_data(tiny_dataset, 0.25, 8, (0.5, 0.3, 0.2), seed=9)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
