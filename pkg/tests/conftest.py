import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ubsr.loss import ExponentialLoss, PolynomialLoss

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

LOSSES = [ExponentialLoss(0.5), ExponentialLoss(1.0), PolynomialLoss(2.0), PolynomialLoss(3.0)]
LOSS_IDS = [str(l) for l in LOSSES]


@pytest.fixture(params=LOSSES, ids=LOSS_IDS)
def loss(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
