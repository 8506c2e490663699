import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trapgibbs import trapspec as ts

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture(scope="session", autouse=True)
def spectral_cache(tmp_path_factory):
    """Route the on-disk eigenpair cache to a fresh directory unless the caller set one."""
    if os.environ.get(ts.CACHE_ENV):
        yield os.environ[ts.CACHE_ENV]
        return
    path = tmp_path_factory.mktemp("spectra")
    os.environ[ts.CACHE_ENV] = str(path)
    yield str(path)
    del os.environ[ts.CACHE_ENV]


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Callable recording one summary line per acceptance criterion."""
    store = request.config.stash[_ACCEPTANCE_KEY]

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[k] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(store[k])


# ------------------------------------------------------------ shared spectra


@pytest.fixture(scope="session")
def harmonic_1d():
    """d = 1, s = 2 with eigenvectors; exact eigenvalues 2n + 1."""
    return ts.solve_below(1, 2.0, 200.0, 2048, vectors=True, cache=True)


@pytest.fixture(scope="session")
def harmonic_1d_fine():
    """d = 1, s = 2 eigenvalues up to 800 on 4096 points, extrapolated."""
    return ts.solve_below(1, 2.0, 800.0, 4096, extrapolate=True, cache=True)


@pytest.fixture(scope="session")
def harmonic_3d():
    return ts.solve_below(3, 2.0, 200.0, 2048, vectors=True, cache=True)


@pytest.fixture(scope="session")
def subharmonic():
    """d = 1, s = 1.5 with eigenvectors, 164 modes."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", ts.TruncationWarning)
        return ts.solve_below(1, 1.5, 150.0, 4096, vectors=True, cache=True)


@pytest.fixture(scope="session")
def subharmonic_long():
    """d = 1, s = 1.5 eigenvalues only, about 1700 modes; trace increments need this many."""
    return ts.solve_below(1, 1.5, 1100.0, 16384, cache=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
