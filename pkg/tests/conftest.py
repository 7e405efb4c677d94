import numpy as np
import pytest

from f2fvo.se3 import CameraIntrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_K():
    return CameraIntrinsics(fx=120.0, fy=110.0, cx=40.0, cy=30.0, width=80, height=60)


def random_rotation(rng, max_angle=np.pi):
    from f2fvo.se3 import so3_exp

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))
