import numpy as np
import pytest

from xrpose.phantoms import build_phantom, nominal_poses, validity_polygons
from xrpose.sampling import EVALUATION_SPECS, generate_dataset


@pytest.fixture(scope="session")
def bone():
    return build_phantom(0, "perlin-bone")


@pytest.fixture(scope="session")
def screw_records(bone):
    """A dozen rendered evaluation records (screw in the perlin-bone phantom)."""
    return generate_dataset(bone, "screw", nominal_poses("perlin-bone", "screw"), EVALUATION_SPECS, 12,
                            validity_polygons(bone), seed=3, split="test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
