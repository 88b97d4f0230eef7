"""One-dimensional SPDE given a frozen variance path, checked against a closed form.

With constant volatility and no common noise the solution is the density of
a Brownian motion with drift killed at zero, known by the method of images.
"""
import numpy as np

from lpsv.params import ModelParams
from lpsv.pde1d import absorbed_bm_density, solve_conditional_spde

c, x0, t0, T = 0.5, 1.0, 0.05, 0.5
p = ModelParams(k=2.0, theta=1.0, xi=0.7, r=0.03, h_lo=c, h_hi=c)
mu = p.r - c * c / 2
for n_x, dt in ((100, 4e-4), (200, 2e-4), (400, 1e-4)):
    n = int(round((T - t0) / dt))
    sol = solve_conditional_spde(p, np.ones(n), np.zeros(n), 4.0, n_x, dt,
                                 lambda x: absorbed_bm_density(x0, mu, c, t0, x), record_every=n)
    err = np.abs(sol.u[-1] - absorbed_bm_density(x0, mu, c, T, sol.x)).max()
    print(f"n_x={n_x:4d} dt={dt:.0e}: sup error {err:.2e}")
