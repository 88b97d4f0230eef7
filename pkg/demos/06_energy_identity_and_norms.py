"""Energy identity for the mollified, y^delta-weighted L2 norm and weighted Sobolev norms.

Every term of the identity is accumulated along the solve; the residual is
what the discretization fails to balance.  The weighted norms use the weight
min(1, sqrt(x)) near the absorbing boundary.
"""
import numpy as np

from lpsv.benchmarks import IDENTITY as p, IDENTITY_EPSILON, IDENTITY_GRID as g, SMOOTH_SIGMA0_LAW, X0_LAW
from lpsv.noise import make_noise
from lpsv.spde2d import initial_from_laws, solve_spde
from lpsv.verify import DeltaAccumulator, MollifierSpec, combine_delta, weighted_norms

T = 0.2
n = int(round(T / g.dt))
spec = MollifierSpec(IDENTITY_EPSILON, "sqrt")
U0 = initial_from_laws(g, X0_LAW, SMOOTH_SIGMA0_LAW)
results, fields = [], []
for s in range(2):
    acc = DeltaAccumulator(p, g, spec, delta=2.0)
    f = solve_spde(p, make_noise(11, s, g.dt, n, p.rho3), g, U0, record_every=20, callback=acc)
    results.append(acc.result(f.u[-1]))
    fields.append(f)
d = combine_delta(results, 2.0, spec.epsilon)
for name, value in d.terms().items():
    print(f"{name:22s} {value:+.5f}")
print(f"relative pathwise residual {d.relative_pathwise_residual():.4f}")

for alpha in (0, 1, 2, 3):
    r = weighted_norms(fields[0], alpha)
    print(f"alpha={alpha}: L={r.L_alpha:.4f} H={r.H_alpha:.4f} uy={r.uy_norm_alpha:.4f} "
          f"boundary ratio={r.boundary_ratio():.1e}")
