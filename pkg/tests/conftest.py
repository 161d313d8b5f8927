import numpy as np
import pytest

from depquant.innovations import Gaussian, Logistic, SmoothedUniform, StudentT, Uniform


@pytest.fixture(scope="session")
def all_families():
    return [
        Gaussian(),
        Uniform(),
        SmoothedUniform(),
        StudentT(nu=3.0),
        Logistic(),
    ]


@pytest.fixture(scope="session")
def smooth_families(all_families):
    return [m for m in all_families if m.smooth]
