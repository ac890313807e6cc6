import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robust_transit.maps import MapSpec, TrigTerm

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def doubling():
    return MapSpec(1, ((2,),), (), "doubling")


@pytest.fixture
def tripling():
    return MapSpec(1, ((3,),), (), "tripling")


@pytest.fixture
def rotation_product():
    alpha = (np.sqrt(5) - 1) / 2
    return MapSpec(2, ((2, 0), (0, 1)), (TrigTerm((0, 0), alpha, np.pi / 2, 1),), "rotation_product")


@pytest.fixture
def nonlinear2d():
    return MapSpec(2, ((2, 1), (1, 2)), (TrigTerm((1, 0), 0.05, 0.3, 1), TrigTerm((0, 1), 0.04, 1.1, 0)), "nl")
