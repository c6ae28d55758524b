import warnings

import numpy as np
import pytest

from mflpaths.types import SnapshotSeries


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_series(rng, T=3, n=5, d=2, times=None):
    times = np.linspace(0.0, 1.0, T) if times is None else times
    return SnapshotSeries.from_arrays([rng.standard_normal((n, d)) for _ in range(T)], times)


@pytest.fixture(autouse=True)
def _no_unconverged_noise():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="recovering a coupling from an unconverged")
        yield


_acceptance = {}


@pytest.fixture
def record():
    """Store a pass/fail line for an acceptance criterion."""
    def _record(name, ok, detail=""):
        _acceptance[name] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda s: int(s[1:])):
        ok, detail = _acceptance[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
