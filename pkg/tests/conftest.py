import pytest

from tactigraph.skin import default_skin


@pytest.fixture(scope="session")
def skin():
    return default_skin()
