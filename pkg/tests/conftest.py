import pytest

from nknn.model import SyntheticATModel, SyntheticNATModel
from nknn.synthetic import make_world

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    # a criterion fails if any of its phases fails
    if ACCEPTANCE_RESULTS.get(number, ("PASS",))[0] != "FAIL":
        ACCEPTANCE_RESULTS[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, title = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")


@pytest.fixture(scope="session")
def memorize_world():
    return make_world(seed=17, n_train=200, n_eval=0, profile="memorize")


@pytest.fixture(scope="session")
def small_world():
    return make_world(seed=17, n_train=300, n_eval=40)


@pytest.fixture(scope="session")
def at_model(small_world):
    return SyntheticATModel(small_world.model_config)


@pytest.fixture(scope="session")
def nat_model(small_world):
    return SyntheticNATModel(small_world.model_config)
