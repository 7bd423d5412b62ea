import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from routepl.data import ChoiceData, features_from_groups
from routepl.datagen import GeneratorConfig, generate_dataset
from routepl.model import TABLE1_MEANS
from routepl.scaling import RouteScaler

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_features(rng, n):
    return np.stack([
        features_from_groups(int(rng.integers(3)), rng.uniform(), int(rng.integers(2)), rng.uniform(),
                             int(rng.integers(3)))
        for _ in range(n)
    ])


def random_data(rng, n, k=8):
    routes = rng.uniform(0.0, 50.0, (n, k, 3))
    routes[..., 2] = np.minimum(routes[..., 2], routes[..., 0])
    return ChoiceData(random_features(rng, n), routes, rng.integers(0, k, n))


@pytest.fixture(scope="session")
def small_data():
    return generate_dataset(GeneratorConfig(params=TABLE1_MEANS, seed=11), 400)


@pytest.fixture(scope="session")
def unit_scaler():
    return RouteScaler.from_moments(np.zeros(3), np.ones(3))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
