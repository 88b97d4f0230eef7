"""CIR volatility paths, their first Malliavin derivative, and density bounds.

The variance follows ``d sigma = k(theta - sigma) dt + xi sqrt(sigma) dB``
with ``dB = rho2 dB0 + sqrt(1 - rho2^2) dB^i``.  Paths are produced by the
drift-implicit square-root Euler scheme: for ``Y = sqrt(sigma)`` the step

    (1 + k dt/2) Y'^2 - (Y + xi dB/2) Y' - (k theta/2 - xi^2/8) dt = 0

has exactly one positive root whenever ``4 k theta > xi^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .noise import NoiseBundle, particle_uniforms
from .params import ExponentSet, ModelParams


class PositivityError(ArithmeticError):
    """A variance path touched zero; the step is too large for the scheme."""


@dataclass
class CIRPaths:
    """A batch of variance paths sharing one common-noise stream.

    ``sigma[j, i]`` is path ``i`` at ``times[j]``.
    """

    times: np.ndarray
    sigma: np.ndarray
    noise: NoiseBundle | None = None

    @property
    def n_paths(self) -> int:
        return self.sigma.shape[1]

    def index_of(self, t: float) -> int:
        j = int(round(t / (self.times[1] - self.times[0])))
        if j < 0 or j >= len(self.times) or not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t={t} is not on the path grid (horizon {self.times[-1]})")
        return j

    def __getitem__(self, i) -> "CIRPaths":
        return CIRPaths(self.times, self.sigma[:, np.atleast_1d(i)], self.noise)


def cir_step(y, dB, p: ModelParams, dt: float):
    """One drift-implicit step on ``Y = sqrt(sigma)``."""
    a = p.k * p.theta / 2.0 - p.xi**2 / 8.0
    A = 1.0 + 0.5 * p.k * dt
    b = y + 0.5 * p.xi * dB
    return (b + np.sqrt(b * b + 4.0 * A * a * dt)) / (2.0 * A)


def initial_variance(p: ModelParams, noise: NoiseBundle, n: int) -> np.ndarray:
    """Default initial law: uniform on ``[sigma0_lo, sigma0_hi]``, one draw per particle."""
    u = particle_uniforms(noise.base_seed, noise.scenario, "sigma0", n)
    return p.sigma0_lo + (p.sigma0_hi - p.sigma0_lo) * u


def sample_cir_paths(p: ModelParams, noise: NoiseBundle, n_paths: int, sigma0=None,
                     n_steps: int | None = None, record_every: int = 1,
                     chunk: int = 64) -> CIRPaths:
    """Simulate ``n_paths`` variance paths driven by ``noise``.

    Parameters
    ----------
    sigma0 : float or array, optional
        Initial variance(s); drawn from the default initial law if omitted.
    n_steps : int, optional
        Horizon in steps (default: the whole bundle).
    record_every : int
        Keep every ``record_every``-th time point; intermediate points are
        still simulated.
    """
    n_steps = noise.n_steps if n_steps is None else n_steps
    if sigma0 is None:
        sigma0 = initial_variance(p, noise, n_paths)
    s0 = np.broadcast_to(np.asarray(sigma0, dtype=float), (n_paths,)).copy()
    if np.any(s0 <= 0):
        raise PositivityError("initial variance must be positive")
    y = np.sqrt(s0)
    rec = [s0]
    idio = noise.idio("idio_B", n_paths)
    c_common, c_idio = p.rho2, math.sqrt(1.0 - p.rho2**2)
    step = 0
    while step < n_steps:
        m = min(chunk, n_steps - step)
        dBi = idio.next(m)
        for j in range(m):
            dB = c_common * noise.common_B0[step] + c_idio * dBi[j]
            y = cir_step(y, dB, p, noise.dt)
            step += 1
            if step % record_every == 0:
                rec.append(y * y)
    sigma = np.array(rec)
    if not np.all(sigma > 0.0):
        raise PositivityError("variance path touched zero; reduce dt")
    times = noise.dt * record_every * np.arange(sigma.shape[0])
    return CIRPaths(times=times, sigma=sigma, noise=noise)


def cir_mean(p: ModelParams, sigma0, t):
    return p.theta + (np.asarray(sigma0) - p.theta) * np.exp(-p.k * t)


def cir_variance(p: ModelParams, sigma0, t):
    """Conditional variance of ``sigma_t`` given ``sigma_0``."""
    e = np.exp(-p.k * t)
    return (np.asarray(sigma0) * p.xi**2 / p.k * (e - e * e)
            + p.theta * p.xi**2 / (2.0 * p.k) * (1.0 - e) ** 2)


def _exponent_rate(p: ModelParams, sigma):
    return (p.k * p.theta / 2.0 - p.xi**2 / 8.0) / sigma + p.k / 2.0


def malliavin_norm_sq(paths: CIRPaths, p: ModelParams, t: float) -> np.ndarray:
    """``||D sigma_t||^2`` over ``[0, t]`` for every path (idiosyncratic direction).

    Closed form along the path:
    ``int_0^t xi^2 (1-rho2^2) exp(-2 int_{t'}^t [(k theta/2 - xi^2/8)/sigma_s + k/2] ds) sigma_t dt'``,
    both integrals by the trapezoid rule on the path grid.
    """
    if t > paths.times[-1] + 1e-12:
        raise ValueError(f"t={t} exceeds the path horizon {paths.times[-1]}")
    j = paths.index_of(t)
    if j == 0:
        return np.zeros(paths.n_paths)
    dt = paths.times[1] - paths.times[0]
    g = _exponent_rate(p, paths.sigma[: j + 1])
    G = np.concatenate([np.zeros((1, g.shape[1])), np.cumsum(0.5 * dt * (g[1:] + g[:-1]), axis=0)])
    integrand = np.exp(-2.0 * (G[j] - G))
    inner = dt * (integrand.sum(axis=0) - 0.5 * (integrand[0] + integrand[-1]))
    return p.xi**2 * (1.0 - p.rho2**2) * paths.sigma[j] * inner


def ratio_moment_samples(paths: CIRPaths, p: ModelParams, e: ExponentSet, t: float) -> np.ndarray:
    """Summands ``sigma_t^{q r~ alpha} / ||D sigma_t||^{2 q r~}``."""
    if paths.n_paths == 0:
        raise ValueError("empty path set")
    qr = e.q * e.r_tilde
    norm = malliavin_norm_sq(paths, p, t)
    return paths.sigma[paths.index_of(t)] ** (qr * e.alpha) / norm**qr


def ratio_moment(paths: CIRPaths, p: ModelParams, e: ExponentSet, t: float) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of the ratio moment."""
    s = ratio_moment_samples(paths, p, e, t)
    return float(s.mean()), float(s.std(ddof=1) / math.sqrt(len(s))) if len(s) > 1 else math.nan


# -- conditional density -----------------------------------------------------------

@dataclass
class DensityEstimate:
    centers: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_samples: int
    mass_below_zero: float = 0.0

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.centers))

    def weighted_sup(self, alpha: float) -> float:
        return float(np.max(self.centers**alpha * self.values))

    def cdf(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(self.centers) * (self.values[1:] + self.values[:-1]))])
        return c


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    a = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * a * len(x) ** (-0.2)


def gaussian_kde(samples: np.ndarray, grid: np.ndarray, bandwidth: float, chunk: int = 4096) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    out = np.zeros(len(grid))
    for s in range(0, len(samples), chunk):
        z = (grid[:, None] - samples[None, s: s + chunk]) / bandwidth
        out += np.exp(-0.5 * z * z).sum(axis=1)
    return out / (len(samples) * bandwidth * math.sqrt(2.0 * math.pi))


def conditional_vol_density(sigma_t: np.ndarray, bandwidth: float | None = None,
                            n_grid: int = 401, grid: np.ndarray | None = None) -> DensityEstimate:
    """Gaussian-kernel estimate of ``p_t(y | B0)`` from paths sharing one ``B0``.

    The grid covers ``[0, quantile_99.9%]`` unless given.
    """
    sigma_t = np.asarray(sigma_t, dtype=float)
    if bandwidth is None:
        bandwidth = silverman_bandwidth(sigma_t)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(0.0, float(np.quantile(sigma_t, 0.999)), n_grid)
    values = gaussian_kde(sigma_t, grid, bandwidth)
    below = float(ndtr(-sigma_t / bandwidth).mean())
    return DensityEstimate(centers=grid, values=values, bandwidth=bandwidth,
                           n_samples=len(sigma_t), mass_below_zero=below)


@dataclass
class MAlphaReport:
    """Weighted sup ``M^alpha(t, scenario) = sup_y y^alpha p_t(y|B0)`` and its moments."""

    times: np.ndarray
    values: np.ndarray  # (n_times, n_scenarios)
    alpha: float
    q: float

    @property
    def mean_q_power(self) -> np.ndarray:
        return (self.values**self.q).mean(axis=1)

    @property
    def time_integral(self) -> float:
        return float(np.trapezoid(self.mean_q_power, self.times))

    def fit_shape(self) -> tuple[float, float, float]:
        """Nonnegative least-squares fit of ``c1 + c2 t^{-q/2}``.

        Returns ``(c1, c2, relative_residual)`` with the residual measured as
        ``||fit - data|| / ||data||``.
        """
        from scipy.optimize import nnls

        y = self.mean_q_power
        A = np.column_stack([np.ones_like(self.times), self.times ** (-self.q / 2.0)])
        coef, _ = nnls(A, y)
        resid = np.linalg.norm(A @ coef - y) / np.linalg.norm(y)
        return float(coef[0]), float(coef[1]), float(resid)


def malpha_report(estimates, times, alpha: float, q: float) -> MAlphaReport:
    """``estimates[i][s]`` is the :class:`DensityEstimate` at ``times[i]`` for scenario ``s``."""
    values = np.array([[est.weighted_sup(alpha) for est in row] for row in estimates])
    return MAlphaReport(times=np.asarray(times, dtype=float), values=values, alpha=alpha, q=q)
