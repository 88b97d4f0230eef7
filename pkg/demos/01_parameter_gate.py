"""Parameter gate and exponent bookkeeping.

The theory applies only when k*theta/xi^2 exceeds the root x* of a cubic.
This demo prints x*, validates a few configurations and scans the
admissible exponent sets for one of them.
"""
from lpsv import XSTAR, ModelParams, validate_params
from lpsv.params import cubic, rtilde_interval, scan_exponents

print(f"x* = {XSTAR:.15f}, cubic(x*) = {cubic(XSTAR):.1e}")

# Below the gate the report names the failing check; above it, it passes.
for k in (2.0, 3.3, 4.0):
    report = validate_params(ModelParams(k=k, theta=1.0, xi=1.0))
    print(f"k*theta/xi^2 = {k:4.1f}: passed={report.passed} failures={report.failures}")

# The admissible r_tilde interval collapses as the ratio approaches x*.
for x in (XSTAR + 1e-6, 3.5, 4.0, 8.0):
    lo, hi = rtilde_interval(x, 1.0)
    print(f"x = {x:.6f}: r_tilde in ({lo:.6f}, {hi:.6f}), width {hi - lo:.2e}")

for e in scan_exponents(4.0, alpha=1.0):
    print(f"q={e.q:5.3f} r_tilde={e.r_tilde:.4f} r={e.r:.3f} lambda={e.lam:.3f} v={e.v:+.4f}")
