import os

import numpy as np
import pytest
from hypothesis import settings

from xfire.traffic import ScenarioConfig, synthesize_dataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criteria report here and are printed at the end of the session
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture(scope="session")
def small_scenario():
    return ScenarioConfig(n_servers=80, n_attacked=80, n_instances=20, master_seed=7)


@pytest.fixture(scope="session")
def small_instances(small_scenario):
    return synthesize_dataset(small_scenario, n_jobs=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
