import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))
# every NetLASSO run in the suite asserts tracking conservation and the
# consensus recursion at each iteration
os.environ.setdefault("NETLASSO_CHECK_INVARIANTS", "1")

from netlasso import ModelConfig, build_topology, generate_model, mixing_matrix  # noqa: E402

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def small_model():
    return generate_model(ModelConfig(d=40, s=4, m=5, n=12, seed=3))


@pytest.fixture
def er_mixing():
    g = build_topology("erdos_renyi", 5, {"p": 0.6}, seed=1)
    return mixing_matrix(g, "metropolis")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        status, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}: {title} ({detail})")
