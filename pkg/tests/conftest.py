import functools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qsl.quantizer import build_space

settings.register_profile("qsl", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("qsl")

# criterion number -> (status, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}

HEAVY = os.environ.get("QSL_HEAVY", "") not in ("", "0")


@functools.lru_cache(maxsize=None)
def space(k: int, oversample: float = 1.5):
    return build_space(k, oversample)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
