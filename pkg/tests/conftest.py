import numpy as np
import pytest

from rails import (
    BlobSpec,
    IdentityMapper,
    LabeledDataset,
    RailsConfig,
    RandomProjectionMapper,
    make_blobs,
)


@pytest.fixture
def identity():
    return IdentityMapper(dim=2)


@pytest.fixture
def projection():
    return RandomProjectionMapper("proj:3", input_dim=4, output_dim=3, seed=99)


@pytest.fixture
def five_point_dataset():
    # two well-separated classes in the unit square
    X = np.array(
        [
            [0.0, 0.0],
            [0.5, 0.0],
            [0.0, 0.5],
            [1.0, 1.0],
            [0.9, 1.0],
        ]
    )
    y = np.array([0, 0, 0, 1, 1])
    return LabeledDataset(X, y)


@pytest.fixture(scope="session")
def easy_blobs():
    """Well-separated two-class blobs for accuracy comparisons."""
    means = np.full((2, 4), 0.25)
    means[1] = 0.75
    spec = BlobSpec(means=means, sigma=0.05, n_train=100, n_test=100, seed=5)
    return make_blobs(spec)


@pytest.fixture
def small_config():
    return RailsConfig(
        k=2, T=12, G=3, tau=0.3, rho=0.1, delta_min=0.0, delta_max=0.1,
        seed=11, layers=("identity",), n_classes=2,
    )
