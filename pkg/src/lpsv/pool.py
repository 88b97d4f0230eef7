"""Finite pool of names driven by common and idiosyncratic noise.

Each name follows

    dX = (r - h(sigma)^2/2) dt + h(sigma) (sqrt(1 - rho1^2) dW^i + rho1 dW0)

with the variance stepped by the same scheme as :mod:`lpsv.cirlab`, and is
absorbed the first time ``X <= 0`` on the step grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .cirlab import cir_step, silverman_bandwidth
from .grid import GridSpec
from .noise import NoiseBundle, particle_uniforms
from .params import ModelParams

#: default law of the initial distance to default
DEFAULT_X0_LAW = stats.lognorm(s=0.25, loc=0.2, scale=0.8)


@dataclass
class PoolState:
    t: float
    X: np.ndarray
    sigma: np.ndarray
    alive: np.ndarray

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def alive_fraction(self) -> float:
        return float(self.alive.mean())

    def permuted(self, perm) -> "PoolState":
        return PoolState(self.t, self.X[perm], self.sigma[perm], self.alive[perm])


@dataclass
class PoolTrajectory:
    """Alive counts on every step plus full snapshots at the requested times."""

    times: np.ndarray
    alive_count: np.ndarray
    n: int
    snapshots: dict = field(default_factory=dict)
    noise: NoiseBundle | None = None

    def state(self, t: float) -> PoolState:
        for s, st in self.snapshots.items():
            if math.isclose(s, t, rel_tol=1e-9, abs_tol=1e-12):
                return st
        raise KeyError(f"no snapshot at t={t}; available {sorted(self.snapshots)}")

    @property
    def final(self) -> PoolState:
        return self.snapshots[max(self.snapshots)]


def _draw(sampler, u: np.ndarray) -> np.ndarray:
    """Map lineage uniforms through a frozen distribution, a callable or a constant."""
    if hasattr(sampler, "ppf"):
        return np.asarray(sampler.ppf(u), dtype=float)
    if callable(sampler):
        return np.asarray(sampler(u), dtype=float)
    return np.full(len(u), float(sampler))


def simulate_pool(p: ModelParams, noise: NoiseBundle, n: int, x0_sampler=None, sigma0_sampler=None,
                  n_steps: int | None = None, snapshot_times=None, chunk: int = 32) -> PoolTrajectory:
    """Euler scheme for the pool with absorption checked after every step.

    Parameters
    ----------
    x0_sampler, sigma0_sampler
        Frozen scipy distribution (sampled through its ``ppf``), callable of
        uniforms, or constant.  Defaults: shifted lognormal for ``X0`` and
        uniform on ``[sigma0_lo, sigma0_hi]`` for ``sigma0``.
    snapshot_times
        Times at which to keep the full state (always includes the horizon).
    """
    if n <= 0:
        raise ValueError("particle count must be positive")
    n_steps = noise.n_steps if n_steps is None else n_steps
    dt = noise.dt
    x0_sampler = DEFAULT_X0_LAW if x0_sampler is None else x0_sampler
    if sigma0_sampler is None:
        sigma0_sampler = stats.uniform(loc=p.sigma0_lo, scale=p.sigma0_hi - p.sigma0_lo)
    X = _draw(x0_sampler, particle_uniforms(noise.base_seed, noise.scenario, "x0", n))
    sigma = _draw(sigma0_sampler, particle_uniforms(noise.base_seed, noise.scenario, "sigma0", n))
    if np.any(X <= 0.0):
        raise ValueError("initial distance to default must be positive")
    if np.any(sigma <= 0.0):
        raise ValueError("initial variance must be positive")

    snap_steps = {n_steps}
    for t in snapshot_times or ():
        j = int(round(t / dt))
        if j < 0 or j > n_steps or not math.isclose(j * dt, t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"snapshot time {t} is not on the step grid")
        snap_steps.add(j)

    alive = np.ones(n, dtype=bool)
    y = np.sqrt(sigma)
    counts = np.empty(n_steps + 1, dtype=np.int64)
    counts[0] = n
    snaps = {}
    if 0 in snap_steps:
        snaps[0.0] = PoolState(0.0, X.copy(), sigma.copy(), alive.copy())

    idio_W = noise.idio("idio_W", n)
    idio_B = noise.idio("idio_B", n)
    cW, cB = math.sqrt(1.0 - p.rho1**2), math.sqrt(1.0 - p.rho2**2)
    step = 0
    while step < n_steps:
        m = min(chunk, n_steps - step)
        dWi, dBi = idio_W.next(m), idio_B.next(m)
        for j in range(m):
            h = p.h(y * y)
            dX = (p.r - 0.5 * h * h) * dt + h * (cW * dWi[j] + p.rho1 * noise.common_W0[step])
            X = np.where(alive, X + dX, X)
            alive &= X > 0.0
            y = cir_step(y, p.rho2 * noise.common_B0[step] + cB * dBi[j], p, dt)
            step += 1
            counts[step] = np.count_nonzero(alive)
            if step in snap_steps:
                snaps[step * dt] = PoolState(step * dt, X.copy(), y * y, alive.copy())
    return PoolTrajectory(times=dt * np.arange(n_steps + 1), alive_count=counts, n=n,
                          snapshots=snaps, noise=noise)


# -- empirical measures ----------------------------------------------------------

@dataclass
class Empirical2D:
    """Kernel-smoothed sub-probability density of the alive particles on a grid.

    ``values[i, j]`` is the density at ``(x[i], y[j])``.
    """

    grid: GridSpec
    values: np.ndarray
    total_mass: float
    alive_fraction: float
    bandwidths: tuple[float, float]
    n_alive: int
    reliable: bool = True
    bin_edges: np.ndarray | None = None
    unreliable_bins: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def y(self) -> np.ndarray:
        return self.grid.y

    def marginal_x(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dy

    def marginal_y(self) -> np.ndarray:
        return self.values.T @ self.grid.x_weights


def _cell_kernel(samples: np.ndarray, edges: np.ndarray, bw: float, lo: float, hi: float) -> np.ndarray:
    """Gaussian kernel mass of each sample in each cell, renormalized to ``[lo, hi]``.

    Returns ``(n_cells, n_samples)``.
    """
    cdf = ndtr((edges[:, None] - samples[None, :]) / bw)
    inside = ndtr((hi - samples) / bw) - ndtr((lo - samples) / bw)
    return np.diff(cdf, axis=0) / np.maximum(inside, 1e-300)


def _kernel_matrices(X, S, grid: GridSpec, bx: float, by: float):
    Kx = _cell_kernel(X, grid.x_edges, bx, 0.0, grid.x_max) / grid.x_weights[:, None]
    Ky = _cell_kernel(S, grid.y_faces, by, 0.0, grid.y_max) / grid.dy
    return Kx, Ky


def empirical_density_2d(state: PoolState, grid: GridSpec, bandwidths=None) -> Empirical2D:
    """Product-Gaussian kernel estimate over alive particles, mass = alive fraction.

    Each particle's kernel is integrated over the grid cells and renormalized
    to its mass inside the truncated domain, so no mass leaks through
    ``x = 0`` or the outer edges.
    """
    X, S = state.X[state.alive], state.sigma[state.alive]
    n_alive = len(X)
    reliable = n_alive >= 1000
    if not reliable:
        warnings.warn(f"only {n_alive} alive particles; density estimate is noisy", RuntimeWarning)
    if bandwidths is None:
        bandwidths = (_bandwidth(X), _bandwidth(S))
    bx, by = (float(b) for b in bandwidths)
    if not (bx > 0 and by > 0):
        raise ValueError("bandwidths must be positive")
    if n_alive == 0:
        values = np.zeros((grid.n_x + 1, grid.n_y))
    else:
        Kx, Ky = _kernel_matrices(X, S, grid, bx, by)
        values = Kx @ Ky.T / state.n
    return Empirical2D(grid=grid, values=values, total_mass=float(grid.integrate(values)),
                       alive_fraction=state.alive_fraction, bandwidths=(bx, by),
                       n_alive=n_alive, reliable=reliable)


def _bandwidth(v: np.ndarray) -> float:
    if len(v) < 2 or np.ptp(v) == 0.0:
        return 1e-2
    return silverman_bandwidth(v)


def factorized_density(state: PoolState, grid: GridSpec, y_bins=5, bandwidths=None,
                       min_count: int = 50) -> Empirical2D:
    """``p(y) * E[x-density of alive names | sigma_t in the y-bin of y]``.

    ``p`` is the kernel estimate of the variance law over all particles;
    the x-factor is the alive sub-density within each bin (an integer
    ``y_bins`` gives equal-count bins).  Bins with fewer than ``min_count``
    particles fall back to the pooled x-factor and are listed as unreliable.
    """
    X, S, alive = state.X, state.sigma, state.alive
    if bandwidths is None:
        bandwidths = (_bandwidth(X[alive]) if alive.any() else 1e-2, _bandwidth(S))
    bx, by = (float(b) for b in bandwidths)
    if np.isscalar(y_bins):
        edges = np.quantile(S, np.linspace(0.0, 1.0, int(y_bins) + 1))
        edges[0], edges[-1] = -np.inf, np.inf
    else:
        edges = np.asarray(y_bins, dtype=float)
    which = np.clip(np.searchsorted(edges, S, side="right") - 1, 0, len(edges) - 2)
    Ky = _cell_kernel(S, grid.y_faces, by, 0.0, grid.y_max) / grid.dy
    p_y = Ky.mean(axis=1)

    def x_factor(mask):
        xs = X[mask & alive]
        if len(xs) == 0:
            return np.zeros(grid.n_x + 1)
        Kx = _cell_kernel(xs, grid.x_edges, bx, 0.0, grid.x_max) / grid.x_weights[:, None]
        return Kx.sum(axis=1) / max(np.count_nonzero(mask), 1)

    pooled = x_factor(np.ones_like(alive))
    cell_bin = np.clip(np.searchsorted(edges, grid.y, side="right") - 1, 0, len(edges) - 2)
    values = np.empty((grid.n_x + 1, grid.n_y))
    unreliable = []
    for b in range(len(edges) - 1):
        mask = which == b
        if np.count_nonzero(mask) < min_count:
            unreliable.append(b)
            fx = pooled
        else:
            fx = x_factor(mask)
        cols = cell_bin == b
        values[:, cols] = fx[:, None] * p_y[None, cols]
    return Empirical2D(grid=grid, values=values, total_mass=float(grid.integrate(values)),
                       alive_fraction=state.alive_fraction, bandwidths=(bx, by),
                       n_alive=int(alive.sum()), reliable=not unreliable,
                       bin_edges=edges, unreliable_bins=unreliable)


@dataclass
class LossCurve:
    times: np.ndarray
    L: np.ndarray

    def at(self, t: float) -> float:
        return float(self.L[int(round(t / (self.times[1] - self.times[0])))])


def loss_curve(traj: PoolTrajectory) -> LossCurve:
    """Defaulted fraction ``1 - alive/n`` on every step."""
    return LossCurve(times=traj.times, L=1.0 - traj.alive_count / traj.n)
