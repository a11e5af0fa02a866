import numpy as np
import pytest

from taskgrasp.hand import synthetic_hand_model
from taskgrasp.scenegen import default_catalog


@pytest.fixture(scope="session")
def hand_model():
    return synthetic_hand_model(0)


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance reporting

CALL_REPORT = pytest.StashKey[pytest.TestReport]()
ACCEPTANCE = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.stash[CALL_REPORT] = rep


@pytest.fixture(autouse=True)
def _acceptance_line(request, capsys):
    """Print one PASS/FAIL line for tests marked with ``criterion(n, title)``."""
    marker = request.node.get_closest_marker("criterion")
    notes = []
    request.node.notes = notes
    yield
    if marker is None:
        return
    n, title = marker.args
    rep = request.node.stash.get(CALL_REPORT, None)
    ok = rep is not None and rep.passed and not hasattr(rep, "wasxfail")
    line = f"ACCEPTANCE {n}. {title}: {'PASS' if ok else 'FAIL'}"
    if notes:
        line += " | " + "; ".join(notes)
    request.config.stash.setdefault(ACCEPTANCE, {})[n] = line
    with capsys.disabled():
        print("\n" + line)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
