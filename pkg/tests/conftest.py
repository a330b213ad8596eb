import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dichotomy_lab import build_model, constant, make_driver, make_rate
from dichotomy_lab.cocycle import FieldSpec
from dichotomy_lab.grid import GridSpec, SampleGrid

settings.register_profile("lab", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")

ORTHO_P = np.diag([1.0, 0.0])
OBLIQUE_P = np.array([[1.0, 0.5], [0.0, 0.0]])
HASHED_K = FieldSpec("point_hashed", (1.0, 5.0), salt="K")


class Scenario:
    def __init__(self, kind, lam, P=ORTHO_P, D=2.0, K=HASHED_K, driver="irrational_rotation",
                 grid=GridSpec()):
        self.rate = make_rate(kind)
        self.driver = make_driver(driver)
        self.points = SampleGrid.sample(self.driver, grid).points()
        self.horizon = grid.horizon
        self.lam = lam
        self.P = np.asarray(P, dtype=float)
        lam_f = lam if callable(lam) else constant(lam)
        D_f = D if callable(D) else constant(D)
        self.system, self.norm, self.cert = build_model(self.rate, self.driver, self.P, lam_f,
                                                        D_f, K)


@pytest.fixture(scope="session")
def exp_model():
    return Scenario("exponential", 1.0)


@pytest.fixture(scope="session")
def poly_model():
    return Scenario("polynomial", 2.0)


@pytest.fixture(scope="session")
def log_model():
    return Scenario("logarithmic", 1.0, P=OBLIQUE_P)


@pytest.fixture(scope="session")
def small_exp():
    """Two orbits, ell <= 4, horizon 12: quick enough for dense oracles."""
    return Scenario("exponential", 1.0, grid=GridSpec(orbits=2, ell_max=4, horizon=12))


@pytest.fixture(scope="session")
def small_poly():
    return Scenario("polynomial", 1.0, P=OBLIQUE_P, grid=GridSpec(orbits=2, ell_max=4, horizon=12))
