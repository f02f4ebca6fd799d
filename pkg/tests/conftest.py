"""Independent oracles shared by the test modules.

None of these helpers call into the solvers they are used to check: the
LP oracle builds its own constraint matrix and enumerates basic solutions,
and the finite-difference helpers only evaluate the surplus.
"""

import itertools

import numpy as np
import pytest

from hedonic_ot.measures import DiscreteMeasure, Problem
from hedonic_ot.surplus import SurplusOracle, eval_b_batch, solve_zbar_batch

GRAD_STEP = 1e-5
SECOND_STEP = 1e-4


def rel_err(approx, exact):
    """|approx - exact| / (1 + |exact|) in the Frobenius norm."""
    approx, exact = np.asarray(approx, float), np.asarray(exact, float)
    return float(np.linalg.norm(approx - exact) / (1.0 + np.linalg.norm(exact)))


def _bumps(m, n, h):
    """Unit perturbations e_{(i,a)} scaled by h, shape (m*n, m, n)."""
    E = np.zeros((m * n, m, n))
    for k, (i, a) in enumerate(itertools.product(range(m), range(n))):
        E[k, i, a] = h
    return E


def fd_grad_b(oracle, xs, h=GRAD_STEP):
    """Central differences of b in every coordinate; returns (m, n)."""
    xs = np.asarray(xs, float)
    m, n = xs.shape
    E = _bumps(m, n, h)
    vals = eval_b_batch(oracle, np.concatenate([xs + E, xs - E]))
    return ((vals[:m * n] - vals[m * n:]) / (2 * h)).reshape(m, n)


def fd_jac_zbar(oracle, xs, h=GRAD_STEP):
    """Central differences of zbar; entry [i] is the (n, n) block d zbar / d x_i."""
    xs = np.asarray(xs, float)
    m, n = xs.shape
    E = _bumps(m, n, h)
    Z, _ = solve_zbar_batch(oracle, np.concatenate([xs + E, xs - E]))
    D = (Z[:m * n] - Z[m * n:]) / (2 * h)          # (m*n, n): row (i, a) is d zbar / d x_{i,a}
    return D.reshape(m, n, n).transpose(0, 2, 1)


def fd_cross_hessian(oracle, xs, i, j, h=SECOND_STEP):
    """Four-point second difference of b in (x_i, x_j); returns (n, n)."""
    xs = np.asarray(xs, float)
    m, n = xs.shape
    batch = []
    for a, c in itertools.product(range(n), range(n)):
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            x = xs.copy()
            x[i, a] += si * h
            x[j, c] += sj * h
            batch.append(x)
    v = eval_b_batch(oracle, np.array(batch)).reshape(n, n, 4)
    return (v[..., 0] - v[..., 1] - v[..., 2] + v[..., 3]) / (4 * h * h)


def transport_polytope(weights):
    """Full (possibly rank-deficient) marginal constraint system, built from scratch."""
    sizes = [len(w) for w in weights]
    tuples = list(itertools.product(*[range(s) for s in sizes]))
    rows, rhs = [], []
    for i, w in enumerate(weights):
        for k in range(sizes[i]):
            rows.append([1.0 if t[i] == k else 0.0 for t in tuples])
            rhs.append(w[k])
    return np.array(rows), np.array(rhs), tuples


def brute_force_lp(weights, values):
    """max sum gamma_t b_t over the transport polytope by enumerating every basic solution.

    Only for tiny problems (at most about a dozen variables).
    """
    A, b, tuples = transport_polytope(weights)
    c = np.array([values[t] for t in tuples])
    N = A.shape[1]
    r = np.linalg.matrix_rank(A)
    best, best_x = -np.inf, None
    for cols in itertools.combinations(range(N), r):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < r:
            continue
        sol, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if np.linalg.norm(sub @ sol - b) > 1e-10 or sol.min() < -1e-12:
            continue
        x = np.zeros(N)
        x[list(cols)] = sol
        if c @ x > best:
            best, best_x = float(c @ x), x
    return best, best_x, tuples


def best_pairing(points, oracle):
    """Best assignment for m=3 uniform marginals of equal size k over all (k!)^2 pairings.

    Returns (value, sigma, tau) where agent-2 atom sigma[a] and agent-3 atom
    tau[a] are matched with agent-1 atom a.
    """
    k = len(points[0])
    best = (-np.inf, None, None)
    perms = list(itertools.permutations(range(k)))
    for s in perms:
        for t in perms:
            X = np.stack([points[0], points[1][list(s)], points[2][list(t)]], axis=1)
            v = float(eval_b_batch(oracle, X).mean())
            if v > best[0] + 1e-14:
                best = (v, s, t)
    return best


def dirac_problem(points, oracle):
    return Problem([DiscreteMeasure.dirac(p) for p in points], oracle)


def uniform_problem(point_sets, oracle):
    return Problem([DiscreteMeasure.uniform(np.asarray(p, float).reshape(len(p), -1)) for p in point_sets], oracle)


BUILTINS = {
    "quadratic": lambda m, n: SurplusOracle.builtin("quadratic", m, n),
    "brenier": lambda m, n: SurplusOracle.builtin("brenier", m, n),
    "concave_sum": lambda m, n: SurplusOracle.builtin("concave_sum", m, n),
    "heinich": lambda m, n: SurplusOracle.builtin("heinich", m, n, Q=np.eye(n) + 0.3 * np.ones((n, n))),
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
