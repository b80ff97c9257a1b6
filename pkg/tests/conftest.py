import numpy as np
import pytest

from apsing import Domain, construct_sigmoid_bump, construct_wiggle
from apsing._cache import free_modes, operator_for


@pytest.fixture(scope="session")
def interval199():
    return Domain("interval", (0.0, 1.0), "dirichlet", 199)


@pytest.fixture(scope="session")
def op199(interval199):
    return operator_for(interval199)


@pytest.fixture(scope="session")
def mu12(interval199):
    pairs = free_modes(interval199, 2)
    return pairs[0][0], pairs[1][0]


@pytest.fixture(scope="session")
def psi1(interval199):
    return free_modes(interval199, 1)[0][1]


@pytest.fixture(scope="session")
def bump_family():
    """Reference non-convex family: hypotheses (1)-(4) hold on [0, 1] Dirichlet."""
    return construct_sigmoid_bump(2.0, 15.0, 1.5, 0.6, -8.0)


@pytest.fixture(scope="session")
def convex_family():
    """Convex control: same slope range, no bump."""
    return construct_sigmoid_bump(2.0, 15.0, 0.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def wiggle_family(mu12):
    """Level-crossing family tuned to the discrete ground eigenvalue."""
    return construct_wiggle(mu12[0], 30.0, 0.0, 1.0)


def smooth_field(domain, rng, amp=1.0, modes=6):
    """Deterministic random smooth grid function (low free modes)."""
    x = domain.coords()
    if domain.dim != 1:
        raise ValueError("1D helper")
    a, b = domain.bounds
    ks = np.arange(1, modes + 1)
    coef = rng.standard_normal(modes) / ks
    v = np.sin(np.pi * np.outer((x - a) / (b - a), ks)) @ coef
    w0 = domain.cell_measure
    return amp * v / (np.sqrt(w0) * np.linalg.norm(v))
