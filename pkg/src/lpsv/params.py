"""Model parameters, the parameter gate and the Hoelder exponent sets.

The gate is the ratio ``x = k*theta/xi**2`` compared against ``x*``, the
real root of ``16x^3 - 60x^2 + 24x - 3``.  Exponent sets are the
``(q, r, r_tilde, lambda, lambda_tilde, alpha)`` tuples for which the
ratio-moment bound of the conditional volatility density is finite.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import bisect

CUBIC_COEFFS = (16.0, -60.0, 24.0, -3.0)

#: default q-scan for "all sufficiently small q > 1"
DEFAULT_Q_SCAN = (1.001, 1.01, 1.05, 1.1, 1.5, 2.0)


def cubic(x):
    """Evaluate ``16x^3 - 60x^2 + 24x - 3`` in Horner form."""
    a, b, c, d = CUBIC_COEFFS
    return ((a * x + b) * x + c) * x + d


def _cubic_prime(x):
    return (48.0 * x - 120.0) * x + 24.0


def cubic_root_xstar() -> float:
    """Return ``x*``, the unique real root of the gate cubic.

    The cubic's local maximum (at ``(120 - sqrt(9792))/96``) is negative,
    so the root bracketed in ``[3, 4]`` is the only real one, and hence
    also the largest.
    """
    x_locmax = (120.0 - math.sqrt(9792.0)) / 96.0
    if not cubic(x_locmax) < 0.0:
        raise ArithmeticError("gate cubic has more than one real root")
    if not (cubic(3.0) < 0.0 < cubic(4.0)):
        raise ArithmeticError("gate cubic root not bracketed by [3, 4]")
    root = bisect(cubic, 3.0, 4.0, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    return root - cubic(root) / _cubic_prime(root)


XSTAR = cubic_root_xstar()


@dataclass(frozen=True)
class ModelParams:
    """Coefficient vector of one name plus common-noise correlation.

    ``h`` is the clamp family ``h(y) = clip(sqrt(y), h_lo, h_hi)``.
    """

    k: float
    theta: float
    xi: float
    r: float = 0.0
    rho1: float = 0.0
    rho2: float = 0.0
    rho3: float = 0.0
    h_lo: float = 0.1
    h_hi: float = 1.0
    sigma0_lo: float = 0.5
    sigma0_hi: float = 1.5

    @property
    def ratio(self) -> float:
        return self.k * self.theta / self.xi**2

    @property
    def rho_mixed(self) -> float:
        """Mixed-derivative coefficient ``xi * rho3 * rho1 * rho2``."""
        return self.xi * self.rho3 * self.rho1 * self.rho2

    def h(self, y):
        return np.clip(np.sqrt(np.maximum(y, 0.0)), self.h_lo, self.h_hi)

    def replace(self, **changes) -> "ModelParams":
        return ModelParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    ratio: float
    xstar: float
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.detail for c in self.checks if not c.passed]

    def __str__(self) -> str:
        lines = [f"x = k*theta/xi^2 = {self.ratio:.6g}; x* = {self.xstar:.12g}"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return "\n".join(lines)


def _open_interval(name: str, value: float) -> Check:
    ok = -1.0 < value < 1.0
    detail = f"{name}={value:g} in (-1, 1)" if ok else f"{name} outside open interval (-1, 1)"
    return Check(name, ok, detail)


def validate_params(p: ModelParams) -> ValidationReport:
    """Check ``p`` against the standing assumptions; failures are entries, not errors."""
    x = p.ratio if p.xi > 0 else math.inf
    checks = [
        Check("positivity", p.k > 0 and p.theta > 0 and p.xi > 0,
              "k, theta, xi > 0" if (p.k > 0 and p.theta > 0 and p.xi > 0)
              else "k, theta and xi must be positive"),
        Check("gate", x > XSTAR,
              f"ratio {x:.6g} > x* {XSTAR:.6g}" if x > XSTAR
              else f"ratio below x*: {x:.6g} <= {XSTAR:.6g}"),
        Check("feller", 2.0 * x > 1.0,
              f"2k*theta/xi^2 = {2 * x:.6g} > 1" if 2 * x > 1 else "Feller condition violated"),
        _open_interval("rho1", p.rho1),
        _open_interval("rho2", p.rho2),
        _open_interval("rho3", p.rho3),
        Check("h_bounds", 0.0 < p.h_lo <= p.h_hi < math.inf,
              f"0 < h_lo={p.h_lo:g} <= h_hi={p.h_hi:g}" if 0.0 < p.h_lo <= p.h_hi < math.inf
              else "h clamp bounds must satisfy 0 < h_lo <= h_hi < inf"),
        Check("sigma0_bounds", 0.0 < p.sigma0_lo <= p.sigma0_hi < math.inf,
              f"0 < sigma0_lo={p.sigma0_lo:g} <= sigma0_hi={p.sigma0_hi:g}"
              if 0.0 < p.sigma0_lo <= p.sigma0_hi < math.inf
              else "initial variance support must be positive and bounded"),
    ]
    return ValidationReport(ratio=x, xstar=XSTAR, checks=tuple(checks))


class InfeasibleExponents(ValueError):
    """No admissible exponent set; ``constraint`` names the violated condition."""

    def __init__(self, constraint: str, message: str):
        super().__init__(message)
        self.constraint = constraint


@dataclass(frozen=True)
class ExponentSet:
    q: float
    q_tilde: float
    r: float
    r_tilde: float
    lam: float
    lam_tilde: float
    alpha: float
    v: float
    ratio: float = field(default=float("nan"))

    @property
    def q_rtilde(self) -> float:
        return self.q * self.r_tilde


def rtilde_interval(x: float, q: float = 1.0) -> tuple[float, float]:
    """Open interval of admissible ``r_tilde`` for ratio ``x`` and exponent ``q``.

    ``q*r < 4x/3`` gives the lower end ``4x/(4x - 3q)``; a real square root
    in ``v`` (equivalently the moment condition) gives the upper end
    ``(2x-1)^2 / (2q(4x-1))``.  At ``q = 1`` the interval is nonempty iff
    the gate cubic is positive at ``x``.
    """
    if 4.0 * x <= 3.0 * q:
        return (math.inf, -math.inf)
    lo = 4.0 * x / (4.0 * x - 3.0 * q)
    hi = (2.0 * x - 1.0) ** 2 / (2.0 * q * (4.0 * x - 1.0))
    return lo, hi


def v_exponent(x: float, q: float, r_tilde: float) -> float:
    disc = (2.0 * x - 1.0) ** 2 - 2.0 * q * r_tilde * (4.0 * x - 1.0)
    if disc < 0.0:
        raise InfeasibleExponents("v_real", f"imaginary square root in v (discriminant {disc:.3g})")
    return 0.5 * (-(2.0 * x - 1.0) + math.sqrt(disc))


def feasible_exponents(x: float, alpha: float, q: float, r_tilde: float | None = None) -> ExponentSet:
    """Exponent set with ``r_tilde`` at the midpoint of its admissible interval.

    Raises
    ------
    InfeasibleExponents
        if the interval is empty, ``v`` is not real, or the moment-weight
        inequality ``q*r_tilde*(alpha - 1) > -2x - v`` fails.
    """
    if not x > 1.0:
        raise InfeasibleExponents("x_gt_1", f"ratio {x:g} must exceed 1")
    if alpha < 0.0:
        raise InfeasibleExponents("alpha_nonneg", f"alpha {alpha:g} must be >= 0")
    if not 1.0 <= q <= 2.0:
        raise InfeasibleExponents("q_range", f"q {q:g} must lie in [1, 2]")
    lo, hi = rtilde_interval(x, q)
    if not lo < hi:
        raise InfeasibleExponents("rtilde_interval", f"empty r_tilde interval ({lo:.6g}, {hi:.6g}) at x={x:g}, q={q:g}")
    if r_tilde is None:
        r_tilde = 0.5 * (lo + hi)
    elif not lo < r_tilde < hi:
        raise InfeasibleExponents("rtilde_interval", f"r_tilde {r_tilde:g} outside ({lo:.6g}, {hi:.6g})")
    v = v_exponent(x, q, r_tilde)
    if not q * r_tilde * (alpha - 1.0) > -2.0 * x - v:
        raise InfeasibleExponents("moment_weight", "q*r_tilde*(alpha-1) > -2x - v fails")
    r = r_tilde / (r_tilde - 1.0)
    q_tilde = q / (q - 1.0) if q > 1.0 else math.inf
    # lambda = lambda_tilde = 2 q r_tilde meets q r~/lambda + q r~/lambda~ = 1
    lam = 2.0 * q * r_tilde
    return ExponentSet(q=q, q_tilde=q_tilde, r=r, r_tilde=r_tilde, lam=lam, lam_tilde=lam,
                       alpha=alpha, v=v, ratio=x)


def scan_exponents(x: float, alpha: float, qs=DEFAULT_Q_SCAN) -> list[ExponentSet]:
    """All feasible sets over the q-scan, skipping infeasible q."""
    out = []
    for q in qs:
        try:
            out.append(feasible_exponents(x, alpha, q))
        except InfeasibleExponents:
            continue
    return out
