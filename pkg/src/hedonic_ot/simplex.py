"""Two-phase dense-tableau simplex for  max c.x  s.t.  A x = b, x >= 0.

Pivot rules:
  bland    smallest-index entering column and smallest-index leaving
           basic variable among ratio ties; never cycles.
  dantzig  most positive reduced cost; switches to Bland after a long run
           of degenerate pivots, since transportation polytopes are highly
           degenerate and pure Dantzig can cycle on them.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError, ToolkitDefect

PIVOT_TOL = 1e-11


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    basis: list
    stats: dict = field(default_factory=dict)


class _Tableau:
    """Rows 0..p-1 hold [A | b]; the last row holds reduced costs and -objective."""

    def __init__(self, T, basis, rule, opt_tol):
        self.T = T
        self.basis = basis
        self.rule = rule
        self.opt_tol = opt_tol
        self.pivots = 0
        self.degenerate = 0
        self.streak = 0
        self.switched = False

    def pivot(self, r, s):
        T = self.T
        T[r] /= T[r, s]
        col = T[:, s].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, s] = 0.0
        T[r, s] = 1.0
        self.basis[r] = s
        self.pivots += 1

    def entering(self, ncols):
        d = self.T[-1, :ncols]
        cand = np.flatnonzero(d > self.opt_tol)
        if cand.size == 0:
            return None
        if self.rule == "bland" or self.switched:
            return int(cand[0])
        return int(cand[np.argmax(d[cand])])

    def leaving(self, s):
        col = self.T[:-1, s]
        rows = np.flatnonzero(col > PIVOT_TOL)
        if rows.size == 0:
            return None
        ratios = self.T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        return int(min(ties, key=lambda r: self.basis[r])), best

    def run(self, ncols, max_pivots):
        p = self.T.shape[0] - 1
        while True:
            s = self.entering(ncols)
            if s is None:
                return
            out = self.leaving(s)
            if out is None:
                raise SolverError("LP is unbounded")
            r, step = out
            if step <= 1e-14:
                self.degenerate += 1
                self.streak += 1
                if self.rule == "dantzig" and not self.switched and self.streak > 10 * max(p, 10):
                    self.switched = True
            else:
                self.streak = 0
            self.pivot(r, s)
            if self.pivots > max_pivots:
                raise SolverError(f"simplex exceeded {max_pivots} pivots")
            np.maximum(self.T[:-1, -1], 0.0, out=self.T[:-1, -1], where=self.T[:-1, -1] > -1e-13)


def simplex_max(c, A, b, pivot="bland", feas_tol=1e-9, opt_tol=1e-10, max_pivots=None):
    """Solve max c.x subject to A x = b, x >= 0 on a dense tableau."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    p, N = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    max_pivots = max_pivots or 50 * (p + N) + 1000

    # phase I: maximise -sum(artificials)
    T = np.zeros((p + 1, N + p + 1))
    T[:p, :N] = A
    T[:p, N:N + p] = np.eye(p)
    T[:p, -1] = b
    T[-1, :N] = A.sum(axis=0)
    T[-1, -1] = b.sum()
    tab = _Tableau(T, list(range(N, N + p)), pivot, opt_tol)
    tab.run(N, max_pivots)
    infeas = tab.T[-1, -1]
    if infeas > feas_tol * max(1.0, b.sum()):
        raise ToolkitDefect(f"LP infeasible (phase I residual {infeas:.3e})")
    phase1 = tab.pivots

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(p):
        if tab.basis[r] >= N:
            row = tab.T[r, :N]
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size == 0:
                continue
            tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
        keep.append(r)
    T2 = np.zeros((len(keep) + 1, N + 1))
    T2[:-1, :N] = tab.T[keep, :N]
    T2[:-1, -1] = tab.T[keep, -1]
    basis = [tab.basis[r] for r in keep]
    T2[-1, :N] = c
    for r, j in enumerate(basis):
        T2[-1] -= c[j] * T2[r]

    tab2 = _Tableau(T2, basis, pivot, opt_tol)
    tab2.run(N, max_pivots)

    x = np.zeros(N)
    for r, j in enumerate(tab2.basis):
        x[j] = max(tab2.T[r, -1], 0.0)
    # Long degenerate pivot sequences leave round-off on basic variables that
    # should be zero.  Re-solving the final basis against the original rows
    # removes it; keep the tableau values if the basis is numerically poor.
    refined = False
    Bmat = A[keep][:, tab2.basis]
    try:
        xb = np.linalg.solve(Bmat, b[keep])
        if xb.min() >= -feas_tol and np.abs(Bmat @ xb - b[keep]).max() <= feas_tol:
            x = np.zeros(N)
            x[tab2.basis] = np.maximum(xb, 0.0)
            refined = True
    except np.linalg.LinAlgError:
        pass
    stats = {"pivot_rule": pivot, "phase1_pivots": phase1, "phase2_pivots": tab2.pivots,
             "degenerate_pivots": tab.degenerate + tab2.degenerate,
             "bland_fallback": tab.switched or tab2.switched,
             "rows": p, "redundant_rows": p - len(keep), "columns": N, "refined": refined}
    return LPResult(x, float(c @ x), list(tab2.basis), stats)


def transport_constraints(weights):
    """Equality system for couplings of the given marginal weight vectors.

    Variables are the row-major flattening of the product index set.  One
    constraint per extra marginal group is dropped (each group sums to the
    total mass), which keeps the system full rank.
    """
    sizes = [len(w) for w in weights]
    grids = np.indices(sizes).reshape(len(sizes), -1)
    rows, rhs = [], []
    for i, w in enumerate(weights):
        last = sizes[i] - (1 if i > 0 else 0)
        for k in range(last):
            rows.append((grids[i] == k).astype(float))
            rhs.append(w[k])
    return np.array(rows), np.array(rhs)
