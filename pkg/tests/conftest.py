import os

import pytest

from advrot import mnist

MNIST_CANDIDATES = [
    os.environ.get("MNIST_DIR"),
    os.path.join(os.path.dirname(__file__), "..", "data", "mnist"),
    "/root/data/mnist",
]


def find_mnist_dir():
    for path in MNIST_CANDIDATES:
        if path and os.path.exists(os.path.join(path, mnist.DEFAULT_FILES["test"][0])):
            return os.path.abspath(path)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    path = find_mnist_dir()
    if path is None:
        pytest.skip("MNIST IDX files not found; set MNIST_DIR")
    return path


@pytest.fixture(scope="session")
def test_set(mnist_dir):
    return mnist.load_test(mnist_dir)


ACCEPTANCE = {
    1: "numerical correctness",
    2: "model quality",
    3: "attack efficacy",
    4: "defense recovery",
    5: "curve shape",
    6: "rotation oracle",
    7: "format fidelity",
    8: "determinism",
}
_outcomes = {}
_details = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


@pytest.fixture
def report_metric(request):
    """Attach a measured value to the summary line of the test's acceptance criterion."""
    marker = request.node.get_closest_marker("acceptance")

    def record(text):
        _details.setdefault(marker.args[0], []).append(text)
    return record


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when not in ("setup", "call"):
        return
    n = marker.args[0]
    if call.excinfo is None:
        _outcomes.setdefault(n, "PASS")
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        _outcomes[n] = _outcomes.get(n) if _outcomes.get(n) == "FAIL" else "SKIP"
    else:
        _outcomes[n] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE.items():
        status = _outcomes.get(n, "NOT RUN")
        detail = "; ".join(_details.get(n, []))
        terminalreporter.write_line(f"criterion {n} ({name}): {status}" + (f"  [{detail}]" if detail else ""))
