import numpy as np
import pytest

from coulomb_zpo import coulomb_ot
from coulomb_zpo.density import make_power_tail


@pytest.fixture(scope="session")
def cauchy_density():
    return make_power_tail(2.0)


@pytest.fixture(scope="session")
def cauchy_sol(cauchy_density):
    return coulomb_ot.solve(cauchy_density)


@pytest.fixture(scope="session")
def cauchy_dom4(cauchy_sol):
    return coulomb_ot.build_domain(cauchy_sol, 4.0)


def cauchy_T(x):
    return -1.0 / np.asarray(x, dtype=float)


def cauchy_ddu(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * np.abs(x) * (x * x - 1.0) / (1.0 + x * x) ** 3


def cauchy_q(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * np.abs(x) * (1.0 + x**4) / (1.0 + x * x) ** 3
