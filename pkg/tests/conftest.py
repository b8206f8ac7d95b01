import pytest

from hjbport.alpha import build_alpha_table
from hjbport.market import synthetic_five_asset


@pytest.fixture(scope="session")
def synth_model():
    return synthetic_five_asset(epsilon=1.0)


@pytest.fixture(scope="session")
def synth_table(synth_model):
    return build_alpha_table(synth_model, -1.0 + 1e-6, 15.0, 0.05)
