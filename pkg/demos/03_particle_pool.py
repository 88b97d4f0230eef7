"""Finite pool of defaultable names under common and idiosyncratic noise.

Each name's distance to default follows a stochastic-volatility diffusion and
is absorbed at zero.  The loss curve is the defaulted fraction.
"""
from lpsv.benchmarks import COUPLED as p, SMOOTH_SIGMA0_LAW, X0_LAW
from lpsv.grid import GridSpec
from lpsv.noise import make_noise
from lpsv.pool import empirical_density_2d, loss_curve, simulate_pool

noise = make_noise(base_seed=7, scenario=0, dt=1e-3, n_steps=500, rho3=p.rho3)
traj = simulate_pool(p, noise, 5000, X0_LAW, SMOOTH_SIGMA0_LAW, snapshot_times=[0.1, 0.25, 0.5])
lc = loss_curve(traj)
for t in (0.1, 0.25, 0.5):
    print(f"t={t:4.2f}: loss {lc.at(t):.4f}, survivors {int(traj.state(t).alive.sum())}")

emp = empirical_density_2d(traj.final, GridSpec(4.0, 80, 4.5, 45, 1e-3))
print(f"surviving mass on the grid: {emp.values.sum() * emp.grid.dx * emp.grid.dy:.4f}")
