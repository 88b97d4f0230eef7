import math

import pytest

from lpsv.params import ModelParams


@pytest.fixture
def x4():
    """``k theta / xi^2 = 4`` with every correlation on."""
    return ModelParams(k=2.0, theta=1.0, xi=math.sqrt(0.5), r=0.03, rho1=0.4, rho2=0.4, rho3=0.3,
                       h_lo=0.2, h_hi=1.0)
