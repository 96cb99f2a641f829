import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distimpute.records import Sample

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_sample(seed: int, n: int = 500, d: int = 2, p_obs: float = 0.7) -> Sample:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = 1.0 + x[:, 0] - 0.5 * x[:, -1] ** 2 + 0.3 * rng.standard_normal(n)
    delta = rng.random(n) < p_obs
    delta[0] = True
    return Sample(x, y, delta)


@pytest.fixture
def small_sample():
    return random_sample(0, n=120, d=2)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.REPORT, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
