import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# (criterion, verdict, detail) lines collected by the acceptance tests
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiment")
    config.addinivalue_line("markers", "acceptance: acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record():
    def _record(criterion: str, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append((criterion, verdict, detail))
        print(f"[acceptance {criterion}] {verdict}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, verdict, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{crit:<6} {verdict}  {detail}")
