import warnings

import numpy as np
import pytest
from scipy.special import ellipk

from nnmstab import systems
from nnmstab.orbits import find_periodic_orbit

# Orbits of the rotating spring-mass system at omega = 0.942, frozen from a
# backbone continuation and re-converged in the fixtures: [q1, q2, p1, p2, tau].
GYRO_HIGH = [0.38364677233812333, 0.0053000592170253024, 0.01153386914125485, 0.7922306935668418, 6.670048096793616]
GYRO_LOW = [0.19862409269190454, -0.006161420067167762, -0.00019629747621003867, 0.28086054731088966, 6.670048096793616]
CHAIN3_OMEGA0 = 0.30394379

# acceptance criterion number -> result line, filled by test_acceptance.py
ACCEPTANCE = {}


def duffing_period(h, k3=1.0):
    """Period of ``q'' + q + k3 q^3 = 0`` at energy ``h`` (complete elliptic integral)."""
    A2 = (-1.0 + np.sqrt(1.0 + 4.0 * k3 * h)) / k3
    m = k3 * A2 / (2.0 * (1.0 + k3 * A2))
    return 4.0 * ellipk(m) / np.sqrt(1.0 + k3 * A2)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical checks")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(autouse=True)
def _quiet_numerics():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def gyro():
    return systems.gyroscopic()


def _refine(sys_, row):
    row = np.asarray(row)
    return find_periodic_orbit(sys_, row[:-1], row[-1], constraint=("period", row[-1]))


@pytest.fixture(scope="session")
def gyro_high(gyro):
    return _refine(gyro, GYRO_HIGH)


@pytest.fixture(scope="session")
def gyro_low(gyro):
    return _refine(gyro, GYRO_LOW)


@pytest.fixture(scope="session")
def pert_alpha(gyro):
    return systems.gyroscopic_perturbation(gyro, alpha=0.76376, beta=0.0, e=1.0)


@pytest.fixture(scope="session")
def pert_beta(gyro):
    return systems.gyroscopic_perturbation(gyro, alpha=0.0, beta=0.32, e=1.0)


@pytest.fixture(scope="session")
def duffing():
    return systems.duffing(1.0, 1.0)


@pytest.fixture(scope="session")
def duffing_orbit(duffing):
    h = 0.5
    A = np.sqrt(-1.0 + np.sqrt(1.0 + 4.0 * h))
    tau = duffing_period(h)
    return find_periodic_orbit(duffing, np.array([A, 0.0]), tau, constraint=("energy", h))


@pytest.fixture(scope="session")
def duffing_forcing(duffing):
    return systems.generic_perturbation(duffing, alpha=0.1, forcing=[dict(dof=0, amplitude=1.0, harmonic=1)])
