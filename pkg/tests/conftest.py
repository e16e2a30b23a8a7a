import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from cpfscope.geometry import compute_sdf, extract_surface, voxelize  # noqa: E402
from cpfscope.models import builtin_model, cube_mesh  # noqa: E402


@pytest.fixture(scope="session")
def cube():
    """2 cm cube at 5 mm voxels: a 4x4x4 occupied block inside a 6x6x6 grid."""
    grid = voxelize(cube_mesh(0.02), 0.005)
    sdf = compute_sdf(grid)
    return grid, sdf, extract_surface(sdf)


@pytest.fixture(scope="session")
def hex_key():
    return builtin_model("hex_key")


@pytest.fixture(scope="session")
def poker():
    return builtin_model("poker")


@pytest.fixture(scope="session")
def wrench_model():
    return builtin_model("wrench")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
