"""Vertical and Brownian derivatives of a stochastic integral do not commute.

For u(t) = int_0^t sin(x(s)) dW(s) the Brownian integrand is sin(x(t-)), whose
vertical gradient is cos(x(t-)). The gradient of u itself is zero, so its
bracket with W vanishes too. The two mixed derivatives therefore disagree
wherever cos(x(t-)) is away from zero.
"""
from pathhjb import demo_spec
from pathhjb.verify import check_witness

rep = check_witness(demo_spec(), {"witness_points": 8}, seed=3)
print(f"{'cos(x(t-))':>12} {'grad d_w u':>12} {'d_w grad u':>12} {'3 SE':>8}")
for p in rep.details["points"]:
    print(f"{p['cos']:12.6f} {p['grad_d_w']:12.6f} {p['d_w_grad']:12.6f} {3 * p['std_error']:8.4f}")
print(rep.summary())
