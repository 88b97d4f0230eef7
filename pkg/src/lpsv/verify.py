"""Weighted norms, mollified fields and the energy identity for the y^delta-weighted norm.

Weighted spaces use ``w(x) = min(1, sqrt(x))`` in ``x`` and ``y^alpha`` in
``y``.  The identity tracks ``||I(t)||^2`` where ``I`` is ``u`` smoothed in
the variance direction by a compact bump, along with every drift term of
its time derivative, the two stochastic integrals and the residual.

For the identity's coefficients to be exact the smoothing kernel must be a
function of ``sqrt(z) - s``: with ``phi(z, s) = psi_eps(sqrt(z) - s)`` one
has ``sqrt(z) d/dz phi = -1/2 d/ds phi``, which is what turns the
degenerate y-operator into the constant-coefficient s-terms below.  The
evaluation coordinate ``s`` is therefore a square-root-variance coordinate
and the weights ``s^delta`` apply there.  ``MollifierSpec(coordinate="linear")``
gives the plain ``psi_eps(z - y)`` smoothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.integrate import quad

from .grid import GridSpec, cumulative_2d
from .params import ModelParams
from .pde1d import weight


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


BUMP_NORM = 1.0 / quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)[0]


def bump(s):
    """Normalized bump ``C exp(-1/(1 - s^2))`` on ``|s| < 1``."""
    return BUMP_NORM * _bump(s)


def bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = BUMP_NORM * _bump(si) * (-2.0 * si / (1.0 - si * si) ** 2)
    return out


class MollifierError(ValueError):
    """The grid cannot resolve the requested smoothing."""


@dataclass(frozen=True)
class MollifierSpec:
    """Smoothing in the variance direction.

    ``coordinate="linear"``: ``phi(z, y) = psi_eps(z - y)``, ``int phi dz = 1``.
    ``coordinate="sqrt"``: ``phi(z, s) = psi_eps(sqrt(z) - s)``,
    ``int phi d(sqrt z) = 1``; this is the form the energy identity needs.
    """

    epsilon: float
    coordinate: str = "linear"
    n_s: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.coordinate not in ("linear", "sqrt"):
            raise ValueError(f"unknown coordinate {self.coordinate!r}")

    def kernel(self, z, s):
        """``phi_eps(z, s)`` broadcast over ``z`` and ``s``."""
        a = (self._c(z) - s) / self.epsilon
        return bump(a) / self.epsilon

    def kernel_ds(self, z, s):
        """``d/ds phi_eps(z, s)``."""
        a = (self._c(z) - s) / self.epsilon
        return -bump_prime(a) / self.epsilon**2

    def _c(self, z):
        z = np.asarray(z, dtype=float)
        return np.sqrt(np.maximum(z, 0.0)) if self.coordinate == "sqrt" else z

    def eval_points(self, grid: GridSpec) -> np.ndarray:
        """Default evaluation points: the y-centers, or midpoints in ``s = sqrt(y)``."""
        if self.coordinate == "linear":
            return grid.y
        top = math.sqrt(grid.y_max) + self.epsilon
        n = self.n_s or max(64, int(math.ceil(8.0 * top / self.epsilon)))
        ds = top / n
        return (np.arange(n) + 0.5) * ds

    def normalization_error(self, s_values, n_quad: int = 20001) -> float:
        """``max_s |int phi(z, s) dmu(z) - 1|`` by quadrature (``mu`` per coordinate)."""
        worst = 0.0
        for s in np.atleast_1d(s_values):
            c = np.linspace(s - self.epsilon, s + self.epsilon, n_quad)
            val = np.trapezoid(bump((c - s) / self.epsilon) / self.epsilon, c)
            worst = max(worst, abs(val - 1.0))
        return worst

    def min_resolvable(self, grid: GridSpec) -> float:
        """Smallest ``z`` whose kernel is resolved: ``2 dy`` (linear) or ``(dy/eps)^2`` (sqrt)."""
        if self.coordinate == "linear":
            return max(2.0 * self.epsilon, 2.0 * grid.dy)
        return (grid.dy / self.epsilon) ** 2


WEIGHT_FUNCTIONS = {
    "1": lambda p, z: np.ones_like(z),
    "h2": lambda p, z: p.h(z) ** 2,
    "h": lambda p, z: p.h(z),
    "sqrt": lambda p, z: np.sqrt(z),
    "invsqrt": lambda p, z: 1.0 / np.sqrt(z),
}


def kernel_matrix(p: ModelParams, grid: GridSpec, spec: MollifierSpec, g: str, s=None,
                  derivative: bool = False) -> np.ndarray:
    """``K[j, m] = g(z_j) phi(z_j, s_m) dz`` so that ``I = u @ K``.

    In the linear coordinate the discrete kernel is renormalized to unit
    lattice sum.  The sqrt-coordinate kernel is used as is: rescaling its
    columns would break the relation between its z- and s-derivatives.
    """
    if spec.coordinate == "linear" and spec.epsilon < 2.0 * grid.dy:
        raise MollifierError(f"epsilon {spec.epsilon:g} < 2 dy = {2 * grid.dy:g}")
    s = spec.eval_points(grid) if s is None else np.asarray(s, dtype=float)
    z = grid.y
    phi = spec.kernel_ds(z[:, None], s[None, :]) if derivative else spec.kernel(z[:, None], s[None, :])
    if spec.coordinate == "linear":
        # normalize each column by the kernel's sum over the unbounded cell lattice,
        # so constants are reproduced exactly away from the ends of the y-range
        m = int(math.ceil(spec.epsilon / grid.dy)) + 2
        lattice = (np.floor(s / grid.dy)[None, :] + np.arange(-m, m + 1)[:, None] + 0.5) * grid.dy
        phi = phi / (spec.kernel(lattice, s[None, :]).sum(axis=0) * grid.dy)
    K = WEIGHT_FUNCTIONS[g](p, z)[:, None] * phi * grid.dy
    if g == "invsqrt" and spec.coordinate == "linear":
        K[:, s < spec.min_resolvable(grid)] = 0.0
    if g == "invsqrt" and spec.coordinate == "sqrt":
        K[z < spec.min_resolvable(grid)] = 0.0
    return K


def mollify(field, g: str, spec: MollifierSpec, t: float | None = None, p: ModelParams | None = None,
            grid: GridSpec | None = None) -> np.ndarray:
    """``I(x, s) = sum_z u(t, x, z) g(z) phi_eps(z, s) dz`` at time ``t``.

    ``field`` is a :class:`GridField` (``t`` selects the record, default the
    last) or an array ``(n_x + 1, n_y)`` together with ``grid``.  ``g`` is
    one of ``"1"``, ``"h2"``, ``"h"``, ``"sqrt"``, ``"invsqrt"``; ``p`` is
    needed only for the ``h`` weights.  For ``"invsqrt"`` the unresolved
    neighborhood of ``z = 0`` is excluded.
    """
    if hasattr(field, "grid"):
        grid = field.grid
        p = field.params if p is None else p
        u = field.u[-1] if t is None else field.at(t)
    else:
        if grid is None:
            raise ValueError("an array field needs its grid")
        u = np.asarray(field, dtype=float)
    if g in ("h", "h2") and p is None:
        raise ValueError(f"weight {g!r} needs model parameters")
    return u @ kernel_matrix(p, grid, spec, g)


# -- weighted norms ------------------------------------------------------------

@dataclass
class NormReport:
    alpha: float
    L_alpha: float
    H_alpha: float
    uy_norm_alpha: float
    boundary_x: np.ndarray
    boundary_profile: np.ndarray

    def boundary_ratio(self) -> float:
        """Profile at the smallest interior x over its peak."""
        peak = float(self.boundary_profile.max())
        return float(self.boundary_profile[1] / peak) if peak > 0 else 0.0


def weighted_norms(field, alpha: float, grid: GridSpec | None = None) -> NormReport:
    """Time-averaged weighted norms of a solved field (one scenario).

    ``L_alpha = int int y^alpha u^2``; ``H_alpha`` adds ``int int w^2 y^alpha u_x^2``;
    ``uy_norm_alpha = int int w^2 y^alpha u_y^2``; ``boundary_profile(x)`` is
    ``int y^alpha u(., x, y)^2 dy``, whose limit at ``x = 0`` must vanish.
    ``field`` is a :class:`GridField` or an array ``(n_t, n_x + 1, n_y)`` with ``grid``.
    """
    if grid is None:
        grid, u = field.grid, field.u
    else:
        u = np.asarray(field)
    u = u.reshape((-1, grid.n_x + 1, grid.n_y))
    ya = grid.y**alpha
    w2 = weight(grid.x) ** 2
    wx, dy = grid.x_weights, grid.dy
    ux = np.gradient(u, grid.dx, axis=1, edge_order=1)
    uy = np.gradient(u, dy, axis=2, edge_order=1)
    profile = ((u * u) @ ya * dy).mean(axis=0)
    L = float(profile @ wx)
    Hx = float((((ux * ux) @ ya * dy).mean(axis=0) * w2) @ wx)
    Uy = float((((uy * uy) @ ya * dy).mean(axis=0) * w2) @ wx)
    return NormReport(alpha=alpha, L_alpha=L, H_alpha=L + Hx, uy_norm_alpha=Uy,
                      boundary_x=grid.x, boundary_profile=profile)


# -- the delta identity ---------------------------------------------------------

TERM_NAMES = (
    "extra_transport", "xdrift_pair", "y_drift_delta", "y_drift_deriv", "y_meanrev_delta",
    "y_meanrev_deriv", "x_diffusion", "extra_boundary_strip", "mixed_delta", "w0_quadratic",
    "y_quadratic_delta", "y_diffusion_net", "mismatch",
)


@dataclass
class DeltaTerms:
    """Every term of the identity at time ``t``, averaged over scenarios.

    ``stoch_w0``/``stoch_b0`` are the discrete stochastic integrals;
    ``residual_pathwise`` is the root-mean-square over scenarios of
    ``lhs - initial - sum(terms) - stoch_w0 - stoch_b0`` and
    ``residual_expectation`` is ``lhs - initial - sum(terms)`` on the
    scenario means (stochastic integrals dropped).  ``per_scenario`` keeps
    every quantity per scenario.
    """

    t: float
    delta: float
    epsilon: float
    n_scenarios: int
    initial: float = 0.0
    lhs: float = 0.0
    extra_transport: float = 0.0
    xdrift_pair: float = 0.0
    y_drift_delta: float = 0.0
    y_drift_deriv: float = 0.0
    y_meanrev_delta: float = 0.0
    y_meanrev_deriv: float = 0.0
    x_diffusion: float = 0.0
    extra_boundary_strip: float = 0.0
    mixed_delta: float = 0.0
    w0_quadratic: float = 0.0
    y_quadratic_delta: float = 0.0
    y_diffusion_net: float = 0.0
    mismatch: float = 0.0
    stoch_w0: float = 0.0
    stoch_b0: float = 0.0
    residual_pathwise: float = 0.0
    residual_expectation: float = 0.0
    excluded_mass: float = 0.0
    per_scenario: dict = field(default_factory=dict, repr=False)

    def terms(self) -> dict:
        return {k: getattr(self, k) for k in TERM_NAMES}

    def largest_term(self) -> float:
        vals = [abs(self.initial), abs(self.lhs)] + [abs(v) for v in self.terms().values()]
        return max(vals)

    def relative_pathwise_residual(self) -> float:
        big = self.largest_term()
        return self.residual_pathwise / big if big > 0 else 0.0

    def relative_expectation_residual(self) -> float:
        big = self.largest_term()
        return abs(self.residual_expectation) / big if big > 0 else 0.0

    def to_row(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name != "per_scenario":
                out[f.name] = getattr(self, f.name)
        return out


class DeltaAccumulator:
    """Accumulates the identity's terms along one solve (usable as its callback).

    Time integrals use the left-point rule on the solver grid and the
    stochastic integrals the matching Ito sums, so each step contributes
    ``term(u^n) dt`` and ``term(u^n) dW_n``.
    """

    def __init__(self, p: ModelParams, grid: GridSpec, spec: MollifierSpec, delta: float,
                 rho: float | None = None):
        if not delta > 1.0:
            raise ValueError("delta must exceed 1")
        if spec.coordinate != "sqrt":
            raise MollifierError("the identity requires the sqrt-coordinate mollifier")
        self.p, self.grid, self.spec, self.delta = p, grid, spec, delta
        self.rho = p.rho_mixed if rho is None else rho
        s = spec.eval_points(grid)
        ds = s[1] - s[0]
        self.s = s
        self.K = {g: kernel_matrix(p, grid, spec, g, s) for g in ("1", "h2", "h", "sqrt", "invsqrt")}
        self.dK1 = kernel_matrix(p, grid, spec, "1", s, derivative=True)
        wx = grid.x_weights
        w2 = weight(grid.x) ** 2
        self.W = {e: (w2 * wx)[:, None] * (s**e * ds)[None, :] for e in (delta, delta - 1.0, delta - 2.0)}
        self.strip = ((grid.x <= 1.0) * wx)[:, None] * (s**delta * ds)[None, :]
        self.z_cut = spec.min_resolvable(grid)
        self.sums = dict.fromkeys(TERM_NAMES + ("stoch_w0", "stoch_b0"), 0.0)
        self.initial = None
        self.excluded = 0.0
        self.steps = 0

    def fields_of(self, u: np.ndarray) -> dict:
        dx = self.grid.dx
        I1 = u @ self.K["1"]
        F = {
            "I1": I1,
            "dsI1": u @ self.dK1,
            "dxI1": np.gradient(I1, dx, axis=0, edge_order=1),
            "dxIh": np.gradient(u @ self.K["h"], dx, axis=0, edge_order=1),
            "dxIh2": np.gradient(u @ self.K["h2"], dx, axis=0, edge_order=1),
            "Ip": u @ self.K["sqrt"],
            "Im": u @ self.K["invsqrt"],
        }
        return F

    def norm(self, u: np.ndarray) -> float:
        I1 = u @ self.K["1"]
        return float(np.sum(I1 * I1 * self.W[self.delta]))

    def step_terms(self, u: np.ndarray) -> dict:
        p, d = self.p, self.delta
        F = self.fields_of(u)
        I1, dsI1 = F["I1"], F["dsI1"]
        Wd, Wd1, Wd2 = self.W[d], self.W[d - 1.0], self.W[d - 2.0]
        a = p.k * p.theta - p.xi**2 / 4.0
        return {
            "extra_transport": p.r * np.sum(I1 * I1 * self.strip),
            "xdrift_pair": np.sum(F["dxIh2"] * I1 * Wd),
            "y_drift_delta": d * a * np.sum(F["Im"] * I1 * Wd1),
            "y_drift_deriv": a * np.sum(F["Im"] * dsI1 * Wd),
            "y_meanrev_delta": -d * p.k * np.sum(F["Ip"] * I1 * Wd1),
            "y_meanrev_deriv": -p.k * np.sum(F["Ip"] * dsI1 * Wd),
            "x_diffusion": -np.sum(F["dxIh2"] * F["dxI1"] * Wd),
            "extra_boundary_strip": -np.sum(F["dxIh2"] * I1 * self.strip),
            "mixed_delta": -d * self.rho * np.sum(F["dxIh"] * I1 * Wd1),
            "w0_quadratic": p.rho1**2 * np.sum(F["dxIh"] ** 2 * Wd),
            "y_quadratic_delta": d * (d - 1.0) * p.xi**2 / 8.0 * np.sum(I1 * I1 * Wd2),
            "y_diffusion_net": -p.xi**2 / 4.0 * (1.0 - p.rho2**2) * np.sum(dsI1**2 * Wd),
            "mismatch": -(self.rho - p.rho_mixed) * np.sum(F["dxIh"] * dsI1 * Wd),
            "_w0": -2.0 * p.rho1 * np.sum(F["dxIh"] * I1 * Wd),
            "_b0": -p.xi * p.rho2 * np.sum(dsI1 * I1 * Wd),
        }

    def __call__(self, n: int, u: np.ndarray, dW: float, dB: float) -> None:
        if self.initial is None:
            self.initial = self.norm(u)
        terms = self.step_terms(u)
        dt = self.grid.dt
        for k in TERM_NAMES:
            self.sums[k] += dt * float(terms[k])
        self.sums["stoch_w0"] += float(terms["_w0"]) * dW
        self.sums["stoch_b0"] += float(terms["_b0"]) * dB
        total = float(np.sum(u) * self.grid.dx * self.grid.dy)
        if total > 0:
            cut = self.grid.y < self.z_cut
            self.excluded = max(self.excluded, float(np.sum(u[:, cut]) * self.grid.dx * self.grid.dy) / total)
        self.steps += 1

    def result(self, u_final: np.ndarray) -> dict:
        """Per-scenario values once the solve has finished (``u_final`` at time ``t``)."""
        out = dict(self.sums)
        out["initial"] = self.initial if self.initial is not None else self.norm(u_final)
        out["lhs"] = self.norm(u_final)
        out["excluded_mass"] = self.excluded
        out["t"] = self.steps * self.grid.dt
        return out


def combine_delta(results: list[dict], delta: float, epsilon: float, excluded_tol: float = 1e-3) -> DeltaTerms:
    """Scenario averages of per-scenario accumulator results."""
    if not results:
        raise ValueError("no scenarios")
    keys = TERM_NAMES + ("stoch_w0", "stoch_b0", "initial", "lhs", "excluded_mass")
    per = {k: np.array([r[k] for r in results], dtype=float) for k in keys}
    for k in TERM_NAMES + ("initial", "lhs", "stoch_w0", "stoch_b0"):
        if not np.all(np.isfinite(per[k])):
            raise ArithmeticError(f"term {k} is not finite")
    drift = sum(per[k] for k in TERM_NAMES)
    res_path = per["lhs"] - per["initial"] - drift - per["stoch_w0"] - per["stoch_b0"]
    per["residual_pathwise"] = res_path
    means = {k: float(per[k].mean()) for k in keys}
    out = DeltaTerms(t=float(results[0]["t"]), delta=delta, epsilon=epsilon, n_scenarios=len(results),
                     per_scenario=per, **{k: means[k] for k in keys if k != "excluded_mass"})
    out.excluded_mass = float(per["excluded_mass"].max())
    if out.excluded_mass > excluded_tol:
        raise MollifierError(f"mass {out.excluded_mass:.3g} sits where z^(-1/2) cannot be mollified")
    out.residual_pathwise = float(np.sqrt(np.mean(res_path**2)))
    out.residual_expectation = means["lhs"] - means["initial"] - sum(means[k] for k in TERM_NAMES)
    return out


def delta_identity_terms(fields_, spec: MollifierSpec, delta: float, t: float | None = None) -> DeltaTerms:
    """Evaluate the identity on stored solutions (every step recorded).

    Each field must hold ``u`` at every solver step up to ``t`` together
    with its ``dW0``/``dB0`` increments.
    """
    results = []
    for f in fields_:
        if f.record_every != 1:
            raise ValueError("the identity needs every solver step; solve with record_every=1")
        n_t = len(f.times) - 1 if t is None else f.index_of(t)
        acc = DeltaAccumulator(f.params, f.grid, spec, delta, f.rho)
        for n in range(n_t):
            acc(n, f.u[n], f.dW0[n], f.dB0[n])
        results.append(acc.result(f.u[n_t]))
    return combine_delta(results, delta, spec.epsilon)


# -- particles versus grid ------------------------------------------------------

def compare_particle_grid(emp, field, t: float | None = None) -> float:
    """Sup distance between the bivariate CDFs of a particle estimate and a grid field."""
    grid = emp.grid
    if hasattr(field, "grid"):
        if field.grid.to_dict() | {"dt": 0} != grid.to_dict() | {"dt": 0}:
            raise ValueError("particle estimate and field live on different grids")
        u = field.u[-1] if t is None else field.at(t)
    else:
        u = np.asarray(field)
    return float(np.max(np.abs(cumulative_2d(emp.values, grid) - cumulative_2d(u, grid))))
