"""Named parameter sets, grids and initial laws used by the checks and demos."""
from __future__ import annotations

import math

from scipy import stats

from .grid import GridSpec
from .params import ModelParams
from .pool import DEFAULT_X0_LAW

#: smooth variance law on ``[0.5, 1.5]`` (the uniform default has jumps at its ends)
SMOOTH_SIGMA0_LAW = stats.beta(4, 4, loc=0.5, scale=1.0)

#: ``k theta / xi^2 = 4`` with every correlation switched on
COUPLED = ModelParams(k=2.0, theta=1.0, xi=math.sqrt(0.5), r=0.03, rho1=0.4, rho2=0.4, rho3=0.3,
                      h_lo=0.2, h_hi=1.0)

#: same coefficients, all correlations zero and constant ``h``
DECOUPLED = COUPLED.replace(rho1=0.0, rho2=0.0, rho3=0.0, h_lo=0.5, h_hi=0.5)

#: coupled set with ``rho1 = 0.3`` so the refined identity grid keeps its transport ratio below 1
IDENTITY = COUPLED.replace(rho1=0.3)

#: coupled set without the W0-B0 correlation
UNCORRELATED = COUPLED.replace(rho3=0.0)

PARAMS = {"coupled": COUPLED, "decoupled": DECOUPLED, "identity": IDENTITY, "uncorrelated": UNCORRELATED}

#: 200 x 100 grid on which particles and the SPDE are compared
COMPARISON_GRID = GridSpec(x_max=4.0, n_x=200, y_max=4.5, n_y=100, dt=1e-4)
DECOUPLED_GRID = GridSpec(x_max=4.0, n_x=200, y_max=4.5, n_y=100, dt=2e-4)
#: coarse grid of the identity refinement study
IDENTITY_GRID = GridSpec(x_max=4.0, n_x=80, y_max=4.5, n_y=60, dt=5e-4)
IDENTITY_EPSILON = 0.2

X0_LAW = DEFAULT_X0_LAW
