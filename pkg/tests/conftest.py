import numpy as np
import pytest

from morphpd.bonds import MaterialParams
from morphpd.mesh import generate_structured_quad_mesh

GLASS = dict(E=72e3, rho=2.44e-9, G0=0.135)  # G0 in N/mm

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def glass():
    return MaterialParams(delta=3.0, **GLASS)


@pytest.fixture
def patch4():
    return generate_structured_quad_mesh(((0.0, 0.0), (4.0, 4.0)), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, msg = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {msg}")
