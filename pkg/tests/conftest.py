import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# property suites run a fixed, reproducible sequence of 1000 cases each
settings.register_profile(
    "props",
    max_examples=1000,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, rank=None):
    A = crandn(rng, n, rank or n)
    return A @ A.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# bookkeeping for the acceptance report

ACCEPTANCE_LINES = []
PROPERTY_RESULTS = {}
PROPERTY_COLLECTED = set()


def _is_property(nodeid):
    return "tests/properties/" in nodeid or nodeid.startswith("properties/")


def pytest_collection_modifyitems(session, config, items):
    PROPERTY_COLLECTED.update(i.nodeid for i in items if _is_property(i.nodeid))


def pytest_runtest_logreport(report):
    if not _is_property(report.nodeid):
        return
    outcome, duration = PROPERTY_RESULTS.get(report.nodeid, ("passed", 0.0))
    if report.failed:
        outcome = "failed"
    PROPERTY_RESULTS[report.nodeid] = (outcome, duration + report.duration)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
