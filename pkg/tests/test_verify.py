import math

import numpy as np
import pytest
from scipy.integrate import quad

from lpsv.benchmarks import IDENTITY, SMOOTH_SIGMA0_LAW, X0_LAW
from lpsv.grid import GridSpec
from lpsv.noise import make_noise
from lpsv.pool import PoolState, empirical_density_2d
from lpsv.spde2d import initial_from_laws, solve_spde
from lpsv.verify import (BUMP_NORM, TERM_NAMES, DeltaAccumulator, MollifierError, MollifierSpec, bump,
                         combine_delta, compare_particle_grid, delta_identity_terms, mollify, weighted_norms)

# 1 / int_{-1}^{1} exp(-1/(1-s^2)) ds, frozen from a 30-digit quadrature
BUMP_NORM_FROZEN = 2.252283621043581


def _smooth_bump(z, c, w):
    s = (z - c) / w
    return np.where(np.abs(s) < 1, np.exp(-1.0 / np.maximum(1 - s * s, 1e-300)), 0.0)


def test_bump_constant():
    assert BUMP_NORM == pytest.approx(BUMP_NORM_FROZEN, rel=1e-13)
    assert quad(lambda s: float(bump(s)), -1, 1, epsabs=1e-14)[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("coordinate", ["linear", "sqrt"])
def test_kernel_normalization(coordinate):
    spec = MollifierSpec(0.2, coordinate)
    assert spec.normalization_error(np.linspace(0.5, 3.0, 11)) < 1e-8


def test_constant_field_reproduced():
    g = GridSpec(1.0, 4, 4.0, 400, 1.0)
    u = np.full((5, 400), 3.0)
    spec = MollifierSpec(0.1)
    I = mollify(u, "1", spec, grid=g)
    inner = (g.y > 0.2) & (g.y < 3.8)
    np.testing.assert_allclose(I[:, inner], 3.0, rtol=1e-10)


def test_narrow_bump_sqrt_weight():
    g = GridSpec(1.0, 4, 4.0, 4000, 1.0)
    z0, width, eps = 1.5, 0.01, 0.2
    prof = _smooth_bump(g.y, z0, width)
    prof /= prof.sum() * g.dy
    u = np.tile(prof, (5, 1))
    spec = MollifierSpec(eps)
    I = mollify(u, "sqrt", spec, grid=g)[2]
    target = math.sqrt(z0) * spec.kernel(z0, g.y)
    near = np.abs(g.y - z0) < 0.5 * eps
    assert np.max(np.abs(I[near] / target[near] - 1)) < 0.02


def test_mollified_converges_first_order():
    g = GridSpec(1.0, 4, 6.0, 1200, 1.0)
    f = np.exp(-((g.y - 3.0) ** 2)) + 0.3 * g.y
    u = np.tile(f, (5, 1))
    inner = (g.y > 1.0) & (g.y < 5.0)
    dists = []
    for m in (8, 4, 2):
        I = mollify(u, "1", MollifierSpec(m * g.dy), grid=g)[2]
        dists.append(math.sqrt(np.sum((I[inner] - f[inner]) ** 2) * g.dy))
    assert dists[0] > dists[1] > dists[2]
    assert dists[0] / dists[1] > 1.9 and dists[1] / dists[2] > 1.9


def test_under_resolved_mollifier_faults():
    g = GridSpec(1.0, 4, 4.0, 40, 1.0)
    with pytest.raises(MollifierError):
        mollify(np.ones((5, 40)), "1", MollifierSpec(0.15), grid=g)


def test_invsqrt_excludes_zero_neighbourhood():
    g = GridSpec(1.0, 4, 4.0, 400, 1.0)
    spec = MollifierSpec(0.1)
    I = mollify(np.ones((5, 400)), "invsqrt", spec, grid=g)
    assert np.all(I[:, g.y < 0.2] == 0.0)
    assert np.all(np.isfinite(I))


def test_weighted_norms_zero_and_weight_values():
    g = GridSpec(4.0, 40, 4.0, 40, 1.0)
    rep = weighted_norms(np.zeros((3, 41, 40)), 1.0, grid=g)
    assert rep.L_alpha == rep.H_alpha == rep.uy_norm_alpha == 0.0
    assert np.all(rep.boundary_profile == 0.0)


def _separable(n_x, n_y):
    g = GridSpec(4.0, n_x, 4.0, n_y, 1.0)
    fx = lambda x: np.exp(-((x - 2.0) ** 2) / 0.18)
    gy = lambda y: np.exp(-((y - 2.0) ** 2) / 0.18)
    u = np.outer(fx(g.x), gy(g.y))[None]
    return g, u, fx, gy


def _d(f):
    return lambda z: -(z - 2.0) / 0.09 * f(z)


def _q(f, lo, hi):
    return quad(lambda z: float(f(z)), lo, hi, epsabs=1e-14, epsrel=1e-13, limit=400)[0]


@pytest.mark.parametrize("alpha", [0.0, 2.0])
def test_separable_norms_match_quadrature(alpha):
    w2 = lambda x: min(1.0, x)
    # fine in x for the x-derivative, fine in y for the y-derivative
    g, u, fx, gy = _separable(16000, 200)
    rep = weighted_norms(u, alpha, grid=g)
    Ly = _q(lambda y: y**alpha * gy(y) ** 2, 0.0, 4.0)
    L = _q(lambda x: fx(x) ** 2, 0.0, 4.0) * Ly
    Hx = _q(lambda x: w2(x) * _d(fx)(x) ** 2, 0.0, 4.0) * Ly
    assert rep.L_alpha == pytest.approx(L, rel=1e-6)
    assert rep.H_alpha == pytest.approx(L + Hx, rel=1e-6)
    g, u, fx, gy = _separable(200, 16000)
    rep = weighted_norms(u, alpha, grid=g)
    Uy = _q(lambda x: w2(x) * fx(x) ** 2, 0.0, 4.0) * _q(lambda y: y**alpha * _d(gy)(y) ** 2, 0.0, 4.0)
    assert rep.uy_norm_alpha == pytest.approx(Uy, rel=1e-6)


def _identity_fields(n_sc=2, T=0.05, rho=None):
    g = GridSpec(4.0, 40, 4.5, 60, 1e-3)
    U0 = initial_from_laws(g, X0_LAW, SMOOTH_SIGMA0_LAW)
    n = int(round(T / g.dt))
    return [solve_spde(IDENTITY, make_noise(8, s, g.dt, n, IDENTITY.rho3), g, U0, rho=rho) for s in range(n_sc)]


def test_delta_zero_field():
    g = GridSpec(4.0, 40, 4.5, 60, 1e-3)
    f = solve_spde(IDENTITY, make_noise(0, 0, 1e-3, 10, 0.3), g, np.zeros((41, 60)))
    d = delta_identity_terms([f], MollifierSpec(0.3, "sqrt"), 2.0)
    assert all(v == 0.0 for v in d.terms().values())
    assert d.lhs == d.initial == d.residual_pathwise == d.residual_expectation == 0.0


def test_delta_terms_signs_and_mismatch():
    fields = _identity_fields()
    d = delta_identity_terms(fields, MollifierSpec(0.3, "sqrt"), 2.0)
    assert d.mismatch == 0.0
    assert np.all(d.per_scenario["mismatch"] == 0.0)
    assert d.w0_quadratic >= 0 and d.y_quadratic_delta >= 0 and d.y_diffusion_net <= 0
    assert d.x_diffusion <= 0 and d.extra_transport >= 0
    assert all(np.isfinite(v) for v in d.to_row().values())
    assert set(d.terms()) == set(TERM_NAMES)
    # accumulated along the solve gives the same numbers
    acc = DeltaAccumulator(IDENTITY, fields[0].grid, MollifierSpec(0.3, "sqrt"), 2.0)
    for n in range(len(fields[0].times) - 1):
        acc(n, fields[0].u[n], fields[0].dW0[n], fields[0].dB0[n])
    one = combine_delta([acc.result(fields[0].u[-1])], 2.0, 0.3)
    assert one.lhs == pytest.approx(d.per_scenario["lhs"][0], rel=1e-12)


def test_delta_mismatch_nonzero_for_other_rho():
    fields = _identity_fields(n_sc=1, rho=IDENTITY.rho_mixed + 0.05)
    d = delta_identity_terms(fields, MollifierSpec(0.3, "sqrt"), 2.0)
    assert d.mismatch != 0.0


def test_delta_partial_time_and_input_checks():
    fields = _identity_fields(n_sc=1)
    d = delta_identity_terms(fields, MollifierSpec(0.3, "sqrt"), 2.0, t=0.02)
    assert d.t == pytest.approx(0.02)
    with pytest.raises(ValueError):
        DeltaAccumulator(IDENTITY, fields[0].grid, MollifierSpec(0.3, "sqrt"), 1.0)
    with pytest.raises(MollifierError):
        DeltaAccumulator(IDENTITY, fields[0].grid, MollifierSpec(0.3, "linear"), 2.0)


def test_delta_faults_when_mass_sits_near_zero():
    g = GridSpec(4.0, 40, 4.5, 30, 1e-3)
    U0 = np.zeros((41, 30))
    U0[10:20, 0:2] = 1.0
    f = solve_spde(IDENTITY, make_noise(0, 0, 1e-3, 3, 0.3), g, U0)
    with pytest.raises(MollifierError):
        delta_identity_terms([f], MollifierSpec(0.3, "sqrt"), 2.0)


def test_compare_self_and_grid_mismatch():
    g = GridSpec(4.0, 100, 4.5, 50, 1e-3)
    rng = np.random.default_rng(0)
    st = PoolState(0.0, rng.lognormal(0, 0.3, 20_000), rng.uniform(0.5, 1.5, 20_000), np.ones(20_000, bool))
    e = empirical_density_2d(st, g)
    assert compare_particle_grid(e, e.values) == 0.0
    e2 = empirical_density_2d(st, g, bandwidths=(e.bandwidths[0] * 1.1, e.bandwidths[1] * 1.1))
    assert compare_particle_grid(e, e2.values) < 0.01
    f = solve_spde(IDENTITY, make_noise(0, 0, 1e-3, 2, 0.3), GridSpec(4.0, 40, 4.5, 60, 1e-3),
                   np.zeros((41, 60)))
    with pytest.raises(ValueError):
        compare_particle_grid(e, f)
