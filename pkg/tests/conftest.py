import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from projsde import build_error_table, catalog

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DESK_N = 100_000
SEED = 1234

# (catalog name, params, dt or dt list, t_max, reference, crn); one table per
# manifold, all three algorithms, shared by the acceptance and property tests
DESK_RUNS = {
    "kubo": ("kubo", {"omega0": 2.5, "b": 1.0}, [0.1, 0.05], 5.0, "oracle", False),
    "catenoid": ("catenoid", {}, 0.05, 5.0, "oracle", False),
    "hypersphere": ("hypersphere", {"n": 10}, 0.05, 5.0, "oracle", False),
    "spheroid": ("spheroid", {"c": 0.25, "theta0": 1.0, "phi0": 1.0}, 0.01, 1.0,
                 "intrinsic", False),
    "hyperboloid": ("hyperboloid", {"c": 0.25, "v0": 0.0, "theta0": 0.0}, 0.01, 1.0,
                    "intrinsic", False),
    "polynomial": ("polynomial", {"N": 4, "n": 3, "axial_force": 2.0}, 0.05, 5.0,
                   "fine", True),
    "sphere_plane": ("sphere_plane", {"omega0": 0.0, "b": 1.0}, 0.05, 5.0, "oracle", False),
}


class DeskTables:
    """Lazily computed desk-scale error tables, one per manifold."""

    def __init__(self):
        self._cache = {}

    def __getitem__(self, key):
        if key not in self._cache:
            name, params, dts, t_max, ref, crn = DESK_RUNS[key]
            entry = catalog(name, **params)
            obs = [next(iter(entry.observables))]
            self._cache[key] = build_error_table(
                entry, ["cEP", "tMP", "cMP"], list(np.atleast_1d(dts)), DESK_N, t_max, SEED,
                reference=ref, observables=obs, common_random_numbers=crn,
            )
        return self._cache[key]


def desk_dt(key):
    """The step-size the acceptance criteria use for ``key``."""
    return float(np.atleast_1d(DESK_RUNS[key][2])[-1])


@pytest.fixture(scope="session")
def desk_tables():
    return DeskTables()


@pytest.fixture
def report(capsys):
    """Print one line to the terminal regardless of output capture."""
    def emit(line):
        with capsys.disabled():
            print(f"\n{line}")
    return emit


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
