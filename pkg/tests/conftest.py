import json
from pathlib import Path

import numpy as np
import pytest

from hfce import _kernels
from hfce.dictionary import build_angular, build_joint, build_polar
from hfce.geometry import ArrayConfig

FIXTURES = Path(__file__).parent / "fixtures"
BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(prev)


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


@pytest.fixture(scope="session")
def cfg200():
    return ArrayConfig(200, 0.01)


@pytest.fixture(scope="session")
def dicts200(cfg200):
    dj = build_joint(cfg200, 5)
    return dj, build_angular(cfg200), build_polar(cfg200, 5, dj.rho)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}
    config.addinivalue_line("markers", "acceptance(n): numbered acceptance criterion")


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict and fail the test when it does not hold."""
    marker = request.node.get_closest_marker("acceptance")
    n = marker.args[0]

    def report(ok: bool, detail: str):
        request.config.stash[_ACCEPTANCE][n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"
    return report


def pytest_terminal_summary(terminalreporter, config):
    res = config.stash.get(_ACCEPTANCE, {})
    if not res:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(res):
        ok, detail = res[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
