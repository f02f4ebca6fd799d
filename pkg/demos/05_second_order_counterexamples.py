"""
Two negative results, checked numerically
=========================================

1. A three-agent second-order condition (the T-matrix test) fails for the
   Brenier-type preference f(x, z) = -sqrt(1 + |x + z|^2) at a specific
   configuration: the largest eigenvalue of T is 1/sqrt(5) - 2/3 < 0.
2. For every sup-form surplus the product S = D2_{x2x3} b [D2_{x1x3} b]^-1 D2_{x1x2} b
   is symmetric.  The bilinear surplus x1.x2 + x1.x3 + x2.A x3 gives S = A, so a
   non-symmetric A rules out any sup-form representation.
"""

import numpy as np

from hedonic_ot import BilinearSurplus, SurplusOracle, condition_III_matrix, symmetry_product
from hedonic_ot.repro import run_all

np.set_printoptions(precision=6, suppress=True)

bren = SurplusOracle.builtin("brenier", 3, 2)
o, p = np.zeros(2), np.array([2.5, 0.0])
T, ev = condition_III_matrix(bren, o, o, o, p, p)
print("T =\n", T)
print("eigenvalues", ev, "  closed form for the top one:", 1 / np.sqrt(5) - 2 / 3)

A = np.array([[1.0, 1.0], [0.0, 1.0]])
x = np.random.default_rng(1).uniform(-1, 1, size=(3, 2))
print("\nS for the bilinear surplus\n", symmetry_product(BilinearSurplus(A), *x))
for name in ["quadratic", "brenier"]:
    S = symmetry_product(SurplusOracle.builtin(name, 3, 2), *x)
    print(f"S for {name}, asymmetry {np.linalg.norm(S - S.T):.1e}\n", S)

# the same numbers, packaged as regression reports
print()
for rep in run_all(samples=200):
    print(rep.table().splitlines()[0])
