import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cssmpc import model

HERE = os.path.dirname(os.path.abspath(__file__))
SCENARIOS = os.path.join(HERE, os.pardir, "scenarios")


@pytest.fixture(scope="session")
def example1():
    return model.load_scenario(os.path.join(SCENARIOS, "example1.yaml"))


@pytest.fixture(scope="session")
def vehicle():
    return model.load_scenario(os.path.join(SCENARIOS, "vehicle.yaml"))


@pytest.fixture(scope="session")
def example1_ingredients(example1):
    from cssmpc import terminal
    return terminal.build(example1)


@pytest.fixture(scope="session")
def vehicle_ingredients(vehicle):
    from cssmpc import terminal
    return terminal.build(vehicle)


def random_system(rng, n_x=None, n_u=None, n_w=None, stable=False):
    """Random finite LTI triple with modest norms for property tests."""
    n_x = n_x or rng.integers(1, 5)
    n_u = n_u or rng.integers(1, 4)
    n_w = n_w or rng.integers(1, 4)
    A = rng.standard_normal((n_x, n_x)) * 0.5
    if stable:
        from cssmpc import linalg
        rho = linalg.spectral_radius(A)
        if rho >= 0.95:
            A *= 0.9 / rho
    B = rng.standard_normal((n_x, n_u))
    D = rng.standard_normal((n_x, n_w)) * 0.3
    return model.LtiSystem(A=A, B=B, D=D)
