import pytest

from mlcondense.io import make_planted_dataset


@pytest.fixture(scope="session")
def planted():
    return make_planted_dataset(nodes=300, classes=4, overlap=0.3, seed=0)


@pytest.fixture(scope="session")
def small_planted():
    return make_planted_dataset(nodes=60, classes=3, overlap=0.3, seed=1, dim=6)
