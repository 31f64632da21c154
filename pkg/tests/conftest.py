import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("bpls", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bpls")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="bpls")


def random_spd(rng, q, ridge=0.5):
    a = rng.normal(size=(q, q + 2))
    m = a @ a.T + ridge * np.eye(q)
    return (m + m.T) / 2


def logistic_data(rng, n, q, scale=1.0, intercept=True):
    x = rng.normal(size=(n, q - 1 if intercept else q))
    design = np.column_stack([np.ones(n), x]) if intercept else x
    theta = rng.normal(scale=scale, size=q)
    p = 1 / (1 + np.exp(-design @ theta))
    y = (rng.random(n) < p).astype(float)
    return design, y, theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)``; printed at the end of the session."""

    def record(number: int, passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE[number] = (status, detail)
        print(f"criterion {number:2d}: {status}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
