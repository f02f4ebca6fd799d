"""
Surplus functions in sup form
=============================

A team of m agents with types x_1..x_m picks the contract z that maximises
the summed payoff.  The team surplus is b(x) = sup_z sum_i f_i(x_i, z).
This script evaluates b, the maximiser zbar, and the derivative formulas for
a few built-in preference families, and then runs the sampled condition
checker.
"""

import numpy as np

from hedonic_ot import SampleSpec, SurplusOracle, check_conditions, envelope_derivatives, eval_b, solve_zbar

np.set_printoptions(precision=4, suppress=True)

# quadratic preferences f_i = -|x_i - z|^2: zbar is the average type
quad = SurplusOracle.builtin("quadratic", 3, 2)
xs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
zbar, diag = solve_zbar(quad, xs)
print("zbar        ", zbar, "  (mean of the types:", xs.mean(axis=0), ")")
print("b(x)        ", eval_b(quad, xs))
print("Newton      ", diag)

# derivatives all come from one maximisation
d = envelope_derivatives(quad, xs)
print("\nD_x1 b      ", d["grad"][0])
print("D_x1 zbar\n", d["jac"][0])
print("D2_x1x2 b\n", d["cross"][(0, 1)])

# same exercise with f_i = -sqrt(1 + |x_i + z|^2)
bren = SurplusOracle.builtin("brenier", 3, 2)
p = np.array([2.5, 0.0])
z, _ = solve_zbar(bren, np.array([p, [0.0, 0.0], p]))
print("\nBrenier zbar(p, 0, p) =", z, " vs -0.8 p =", -0.8 * p)

# a convex function of the total, h(s) = s^T Q s, written through its conjugate
Q = np.array([[2.0, 0.5], [0.5, 1.0]])
heinich = SurplusOracle.builtin("heinich", 3, 2, Q=Q)
ys = xs + np.array([0.5, 0.2])
s = ys.sum(axis=0)
print("\nh(sum x)    ", s @ Q @ s, "   b(x) =", eval_b(heinich, ys))

# sampled structural checks; a pass only certifies the drawn samples
for name, oracle in [("quadratic", quad), ("brenier", bren), ("heinich", heinich)]:
    rep = check_conditions(oracle, SampleSpec(x_box=(-1.0, 1.0), n_samples=200, n_pairs=200, seed=0))
    margins = "  ".join(f"{k}={c.margin:+.3g}" for k, c in rep.checks.items())
    print(f"\n{name:10s} passed={rep.passed}  {margins}")
print(rep.label)
