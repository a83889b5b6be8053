import numpy as np
import pytest

from cyclefed.data import synth_dataset


@pytest.fixture(scope="session")
def desk_train():
    return synth_dataset(10, 200, 0, "train")


@pytest.fixture(scope="session")
def desk_test():
    return synth_dataset(10, 100, 0, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
