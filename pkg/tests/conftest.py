import numpy as np
import pytest
from hypothesis import settings

from bipfacloc.instance import Instance, generate_instance

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_metric_instance(rng: np.random.Generator, n_f: int, n_c: int, f_max: int = 30) -> Instance:
    """L1 instance from an arbitrary generator stream (independent of ``generate_instance``)."""
    span = int(rng.integers(2, 20))
    pts = rng.integers(0, span + 1, size=(n_f + n_c, 2))
    D = np.abs(pts[:n_f, None, :] - pts[None, n_f:, :]).sum(axis=2)
    return Instance(rng.integers(1, f_max + 1, size=n_f), D)


def small_instances(count: int, max_f: int = 8, max_c: int = 16, seed: int = 0):
    rng = np.random.default_rng(seed)
    for s in range(count):
        n_f = int(rng.integers(1, max_f + 1))
        n_c = int(rng.integers(1, max_c + 1))
        geometry = "clustered" if s % 3 == 0 else "uniform"
        yield generate_instance(n_f, n_c, seed * 100_000 + s, geometry=geometry)


@pytest.fixture
def golden_path():
    from pathlib import Path

    return Path(__file__).parent / "data" / "instance_8_32_7.json"
