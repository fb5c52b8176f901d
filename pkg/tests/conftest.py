import numpy as np
import pytest
from hypothesis import settings

from bdflow import geometry
from bdflow.dtn import build_dtn_circle, build_dtn_general
from bdflow.stationary import make_problem

settings.register_profile("bdflow", deadline=None, max_examples=40)
settings.load_profile("bdflow")


@pytest.fixture(scope="session")
def circle64():
    return geometry.make_curve("circle", {}, 64)


@pytest.fixture(scope="session")
def ellipse256():
    return geometry.make_curve("ellipse", {"a": 1.0, "b": 0.5}, 256)


@pytest.fixture(scope="session")
def ellipse_dtn(ellipse256):
    return build_dtn_general(ellipse256)


def circle_problem(N, p, a_value):
    curve = geometry.make_curve("circle", {}, N)
    return make_problem(curve, build_dtn_circle(N), p, np.full(N, float(a_value)))
