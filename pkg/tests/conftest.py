import numpy as np
import pytest

from corebody import BodyPose, BodyShape, generate_test_assets

_acceptance_results: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): names an acceptance criterion for the summary"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        marker = item.get_closest_marker("acceptance")
        if marker:
            _acceptance_results[marker.args[0]] = report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_results:
        terminalreporter.section("acceptance criteria")
        for name, passed in _acceptance_results.items():
            terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")


@pytest.fixture(scope="session")
def assets():
    """Default ~1k-vertex test body, shared across the suite (immutable)."""
    return generate_test_assets(n_ring=8, seed=1)


@pytest.fixture(scope="session")
def big_assets():
    """SMPL-scale test body for the performance budget."""
    return generate_test_assets(n_ring=22, seed=1, ring_spacing=0.0157)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def zero_shape():
    return BodyShape.zeros()


@pytest.fixture
def zero_pose():
    return BodyPose.zeros()


def random_pose(rng, scale=0.3):
    return BodyPose.from_vector(rng.normal(0.0, scale, 72))


def random_shape(rng, scale=1.0):
    return BodyShape.from_vector(rng.normal(0.0, scale, 10))
