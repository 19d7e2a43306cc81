import numpy as np
import pytest

from ipscurve.dataset import AnalysisFrame


@pytest.fixture
def write_csv(tmp_path):
    """Write ``text`` to a CSV file under the test's temp dir and return its path."""

    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def make_frame(n=400, p=2, seed=0):
    """Small logistic-model frame with a real exposure effect."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    pi = 1 / (1 + np.exp(-(0.3 + 0.8 * x[:, 0])))
    a = (rng.random(n) < pi).astype(int)
    mu = 1 / (1 + np.exp(-(-0.2 + 0.6 * x[:, 1] + 0.9 * a)))
    y = (rng.random(n) < mu).astype(int)
    return AnalysisFrame(x=x, a=a, y=y)


@pytest.fixture
def frame():
    return make_frame()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def verdict(request, capsys):
    """Record and print one ``PASS``/``FAIL`` line for an acceptance criterion."""

    def _report(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].lstrip("P").rstrip(":"))):
            terminalreporter.write_line(line)
