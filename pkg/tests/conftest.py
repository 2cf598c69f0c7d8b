import numpy as np
import pytest

from recurlab.system_model import NoiseSpec, linear_system

ACCEPTANCE = {}


def scalar_lq(a=1.0, b=1.0, l=0.2, q=1.0, r=1.0, var=1.0, name="scalar"):
    noise = NoiseSpec.gaussian([0.0], [[var]])
    return linear_system([[a]], [[b]], [[l]], [[q]], [[r]], noise, name=name)


@pytest.fixture
def fixture_spec():
    """x+ = x + u + 0.2 v, v ~ N(0, 1), cost x^2 + u^2."""
    return scalar_lq()


@pytest.fixture
def two_state_spec():
    A = [[1.0, 0.1], [0.0, 1.0]]
    B = [[0.0], [0.1]]
    L = [[0.05, 0.0], [0.0, 0.1]]
    noise = NoiseSpec.gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 0.5]])
    return linear_system(A, B, L, np.diag([1.0, 0.5]), [[0.2]], noise, name="double-integrator")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
