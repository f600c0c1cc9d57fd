import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conformal_lab.mesh import build_disc_mesh

settings.register_profile("lab", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@functools.lru_cache(maxsize=None)
def disc(level: int):
    return build_disc_mesh(level)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
    n = sum(line.startswith("PASS") for line in ACCEPTANCE.values())
    terminalreporter.write_line(f"{n}/{len(ACCEPTANCE)} criteria pass")
