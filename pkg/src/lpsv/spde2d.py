"""Two-dimensional SPDE for the joint density of (distance to default, variance).

    du = [ -((r - h^2/2) u)_x + (h^2/2) u_xx - (k(theta - y) u)_y + (xi^2/2)(y u)_yy
           + rho (h sqrt(y) u)_xy ] dt - rho1 h u_x dW0 - xi rho2 (sqrt(y) u)_y dB0

on ``[0, x_max] x [0, y_max]`` with ``u = 0`` at ``x = 0``.  One Lie-split
step applies the explicit terms (both stochastic transports and the mixed
derivative), then the implicit x-operator per y-slice, then the implicit
y-operator per x-slice.  Every term is in flux form, so the only way mass
leaves the grid is through ``x = 0``.

By default the transports are second order in the noise (Lax-Wendroff
fluxes, limited only where a cell would turn negative) and carry the
common-noise shares of both diffusions; see :func:`solve_spde`.

The y-operator uses exponentially fitted (Scharfetter-Gummel) face fluxes,
which stay monotone where the diffusion ``xi^2 y/2`` degenerates; the face
``y = 0`` carries no flux because the drift there points inward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from .grid import GridSpec
from .noise import NoiseBundle
from .params import ModelParams
from .pde1d import (CFLError, drift_diffusion_tridiag, flux_divergence, limited_transport_increment,
                    positivity_limit, transport_increment)


@dataclass
class GridField:
    """Solution snapshots ``u[n, i, j]`` at ``times[n]`` plus per-step diagnostics."""

    grid: GridSpec
    params: ModelParams
    rho: float
    scenario: int
    times: np.ndarray
    u: np.ndarray
    dW0: np.ndarray
    dB0: np.ndarray
    record_every: int
    mass_curve: np.ndarray = field(default=None)
    y0_flux: np.ndarray = field(default=None)
    min_value: float = 0.0
    reflecting: bool = False

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def y(self) -> np.ndarray:
        return self.grid.y

    def index_of(self, t: float) -> int:
        j = int(round(t / (self.grid.dt * self.record_every)))
        if j < 0 or j >= len(self.times) or not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"t={t} is not a recorded time")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.u[self.index_of(t)]

    def mass(self, t: float | None = None):
        """Quadrature of ``u`` at time ``t`` (all records if omitted)."""
        if t is None:
            return self.grid.integrate(self.u)
        return float(self.grid.integrate(self.at(t)))

    @property
    def max_y0_flux_rate(self) -> float:
        """Largest flux through ``y = 0`` per unit time, relative to the current mass."""
        return float(np.max(self.y0_flux / np.maximum(self.mass_curve[:-1], 1e-300)))


def sg_bernoulli(z):
    """``z / (exp(z) - 1)`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-8
    out[big] = z[big] / np.expm1(z[big])
    return out


def y_operator(p: ModelParams, grid: GridSpec, diffusion_share: float = 1.0) -> np.ndarray:
    """Dense generator of ``-(k(theta - y)u)_y + (xi^2/2)(y u)_yy`` on the cell centers.

    Face flux ``J = b u - d u_y`` with ``b = k theta - k y - xi^2/2`` and
    ``d = diffusion_share * xi^2 y/2`` is discretized by Scharfetter-Gummel;
    faces at ``y = 0`` and ``y_max`` carry no flux.  A share below one
    leaves the rest of ``d`` to the pathwise transport step.
    """
    n, dy = grid.n_y, grid.dy
    yf = grid.y_faces[1:-1]
    b = p.k * p.theta - p.k * yf - 0.5 * p.xi**2
    d = diffusion_share * 0.5 * p.xi**2 * yf
    P = b * dy / d
    cl = d / dy * sg_bernoulli(-P)  # coefficient of the left cell in J
    cr = -d / dy * sg_bernoulli(P)  # coefficient of the right cell
    A = np.zeros((n, n))
    idx = np.arange(n - 1)
    # cell j loses J_{j+1/2}; cell j+1 gains it
    A[idx, idx] -= cl
    A[idx, idx + 1] -= cr
    A[idx + 1, idx] += cl
    A[idx + 1, idx + 1] += cr
    return A / dy


def x_operator(p: ModelParams, grid: GridSpec, milstein: bool, reflecting: bool):
    """Block-diagonal x generator, one tridiagonal block per y-slice (y-major order)."""
    h = p.h(grid.y)
    mu = p.r - 0.5 * h * h
    diff = 0.5 * h * h * ((1.0 - p.rho1**2) if milstein else 1.0)
    lo, di, up = drift_diffusion_tridiag(grid.n_x, grid.dx, mu, diff, absorbing=not reflecting)
    m = di.shape[0]
    # flatten column-major so each y-slice is contiguous
    main = di.T.ravel()
    lower = lo.T.copy()
    upper = up.T.copy()
    lower[:, 0] = 0.0
    upper[:, -1] = 0.0
    sub = lower.ravel()[1:]
    sup = upper.ravel()[:-1]
    return sparse.diags([sub, main, sup], [-1, 0, 1], shape=(m * grid.n_y, m * grid.n_y), format="csc")


def mixed_fluxes(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """x-face fluxes whose divergence is the conservative ``(v)_xy``, ``v = h(y) sqrt(y) u``.

    Corner values are 4-point averages at the (x-face, y-face) crossings
    and vanish on the outer boundary.  Returns the fluxes through the
    ``n_x`` faces between consecutive x-nodes, positive toward larger x.
    """
    nx1, ny = v.shape
    C = np.zeros((nx1 - 1, ny + 1))  # interior x-face f (between nodes f, f+1), y-face g
    C[:, 1:ny] = 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
    return -(C[:, 1:] - C[:, :-1]) / grid.dy


def mixed_increment(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Conservative ``(v)_xy`` on the grid (see :func:`mixed_fluxes`)."""
    return flux_divergence(mixed_fluxes(v, grid), grid.x_weights[:, None])


def y_transport_increment(u: np.ndarray, shift_faces: np.ndarray, dy: float, milstein: bool = True) -> np.ndarray:
    """Explicit ``-(c(y) u)_y dB`` on the interior y-faces; outer faces closed.

    With ``milstein`` the positivity-limited Lax-Wendroff flux is used,
    otherwise centered face values.
    """
    if milstein:
        return limited_transport_increment(u.T, shift_faces[:, None], dy, dy).T
    G = shift_faces[None, :] * 0.5 * (u[:, :-1] + u[:, 1:])
    du = np.zeros_like(u)
    du[:, 1:] += G
    du[:, :-1] -= G
    return du / dy


def initial_from_laws(grid: GridSpec, x_law, y_law) -> np.ndarray:
    """Cell averages of the product density of two frozen scipy laws.

    The x control volume of node 0 is dropped (absorbing value), so the
    mass is ``P(X in [dx/2, x_max]) * P(Y in [0, y_max])`` exactly.
    """
    ex = grid.x_edges
    fx = np.diff(x_law.cdf(ex)) / grid.x_weights
    fx[0] = 0.0
    fy = np.diff(y_law.cdf(grid.y_faces)) / grid.dy
    return fx[:, None] * fy[None, :]


def solve_spde(p: ModelParams, noise: NoiseBundle, grid: GridSpec, U0, rho: float | None = None,
               n_steps: int | None = None, record_every: int = 1, milstein: bool = True,
               reflecting: bool = False, callback=None) -> GridField:
    """Solve one common-noise scenario.

    Parameters
    ----------
    noise : NoiseBundle
        Supplies ``dW0``/``dB0``; its ``dt`` must equal ``grid.dt``.
    U0 : array ``(n_x + 1, n_y)`` or callable ``U0(x, y)`` on the mesh.
    rho : float, optional
        Mixed-derivative coefficient, default ``xi rho3 rho1 rho2``.
    milstein : bool
        Carry the common-noise shares of both diffusions, ``rho1^2 h^2/2 u_xx``
        and ``rho2^2 xi^2/2 (y u_y)_y``, pathwise in the transport steps
        (positivity-limited Lax-Wendroff) instead of in the implicit solves.
        The x- and y-transports are then applied one after the other, and
        their product carries the mixed term ``xi rho3 rho1 rho2 (h sqrt(y) u)_xy``;
        only ``rho`` minus that value is applied as an explicit mixed term.
        Otherwise every explicit term is evaluated at ``u^n`` (Euler-Maruyama)
        and the full mixed term is explicit.
    reflecting : bool
        Test mode: zero flux through ``x = 0`` instead of absorption.
    callback : callable, optional
        ``callback(n, u, dW, dB)`` before step ``n``.

    Raises
    ------
    CFLError
        If an explicit term exceeds its stability ratio on some step.
    """
    if not math.isclose(noise.dt, grid.dt, rel_tol=1e-12):
        raise ValueError(f"noise dt {noise.dt} differs from grid dt {grid.dt}")
    rho = p.rho_mixed if rho is None else float(rho)
    n_steps = noise.n_steps if n_steps is None else n_steps
    dt, dx, dy = grid.dt, grid.dx, grid.dy
    x, y = grid.x, grid.y
    u = np.array(U0(x[:, None], y[None, :]) if callable(U0) else U0, dtype=float)
    if u.shape != (grid.n_x + 1, grid.n_y):
        raise ValueError(f"U0 has shape {u.shape}, expected {(grid.n_x + 1, grid.n_y)}")
    if np.any(u < 0.0):
        raise ValueError("U0 must be nonnegative")
    if not reflecting:
        u[0] = 0.0

    h = p.h(y)
    hsy = h * np.sqrt(y)
    widths = grid.x_weights
    c_y = p.xi * p.rho2 * np.sqrt(grid.y_faces[1:-1])
    rho_extra = rho - p.rho_mixed
    wcol = widths[:, None]
    ratio_mixed = abs(rho_extra if milstein else rho) * dt * hsy.max() / (dx * dy)
    if ratio_mixed > 1.0:
        raise CFLError(f"mixed-term ratio {ratio_mixed:.3g} > 1")

    first = 0 if reflecting else 1
    Ax = x_operator(p, grid, milstein, reflecting)
    lu_x = splu((sparse.identity(Ax.shape[0], format="csc") - dt * Ax).tocsc())
    Ay = y_operator(p, grid, (1.0 - p.rho2**2) if milstein else 1.0)
    lu_y = lu_factor(np.eye(grid.n_y) - dt * Ay)
    b0 = p.k * p.theta - 0.5 * p.xi**2

    dW = noise.common_W0[:n_steps]
    dB = noise.common_B0[:n_steps]
    rec_t, rec_u = [0.0], [u.copy()]
    masses = np.empty(n_steps + 1)
    masses[0] = grid.integrate(u)
    flux0 = np.empty(n_steps)
    u_min = float(u.min())
    for n in range(n_steps):
        if callback is not None:
            callback(n, u, dW[n], dB[n])
        shift = p.rho1 * h * dW[n]
        ax = np.max(np.abs(shift)) / dx
        ay = np.max(np.abs(c_y * dB[n])) / dy if grid.n_y > 1 else 0.0
        if ax > 1.0 or ay > 1.0:
            raise CFLError(f"stochastic transport ratio {max(ax, ay):.3g} > 1 at step {n}")
        if milstein:
            # composing the two transports supplies rho3 * (BA) dt, the mixed
            # term with coefficient xi rho3 rho1 rho2, through dW0 * dB0
            rhs = u + transport_increment(u, shift, widths, absorbing=not reflecting)
            rhs += y_transport_increment(rhs, c_y * dB[n], dy)
            if rho_extra != 0.0:
                G = rho_extra * dt * mixed_fluxes(hsy[None, :] * u, grid)
                rhs += flux_divergence(positivity_limit(rhs, G, wcol), wcol)
        else:
            rhs = u + transport_increment(u, shift, widths, absorbing=not reflecting, milstein=False)
            rhs += y_transport_increment(u, c_y * dB[n], dy, milstein=False)
            if rho != 0.0:
                rhs += rho * dt * mixed_increment(hsy[None, :] * u, grid)
        if not reflecting:
            rhs[0] = 0.0
        # x-implicit: y-major flattening of the unknown rows
        sol = lu_x.solve(np.ascontiguousarray(rhs[first:].T).ravel())
        u = np.zeros_like(u)
        u[first:] = sol.reshape(grid.n_y, -1).T
        # y-implicit, all x-slices at once
        u = lu_solve(lu_y, u.T).T
        if not reflecting:
            u[0] = 0.0
        masses[n + 1] = grid.integrate(u)
        flux0[n] = b0 * float(np.abs(1.5 * u[:, 0] - 0.5 * u[:, 1]) @ widths)
        u_min = min(u_min, float(u.min()))
        if (n + 1) % record_every == 0:
            rec_t.append((n + 1) * dt)
            rec_u.append(u.copy())
    return GridField(grid=grid, params=p, rho=rho, scenario=noise.scenario, times=np.array(rec_t),
                     u=np.array(rec_u), dW0=np.array(dW), dB0=np.array(dB), record_every=record_every,
                     mass_curve=masses, y0_flux=flux0, min_value=u_min, reflecting=reflecting)
