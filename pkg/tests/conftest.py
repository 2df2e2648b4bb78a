from importlib.resources import files

import numpy as np
import pytest

from octconv import rng


SPEC_DIR = files("octconv") / "specs"


@pytest.fixture
def gen():
    return rng.stream(1234, "tests")


@pytest.fixture
def toy_spec_path():
    return str(SPEC_DIR / "toy.spec")


@pytest.fixture
def six_conv_spec_path():
    return str(SPEC_DIR / "six_conv.spec")


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(b))), 1e-300) if b.size else 1.0
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


_CRITERIA = {}


def record_criterion(n, ok, detail):
    _CRITERIA[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
