import numpy as np
import pytest

from stylescope.schema import default_city_table, load_schema


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture(scope="session")
def cities():
    return default_city_table()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
