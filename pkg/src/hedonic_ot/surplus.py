"""Surplus b(x_1, ..., x_m) = sup_z sum_i f_i(x_i, z) and its derivatives.

The inner problem is solved by damped Newton with Armijo halving from a
multistart grid.  Derivatives of b come from the envelope formulas: with
zbar the maximiser and B = sum_i D^2_zz f_i(x_i, zbar),

    D_{x_i} b        = D_{x_i} f_i(x_i, zbar)
    D_{x_i} zbar     = -B^{-1} D^2_{z x_i} f_i
    D^2_{x_i x_j} b  = -D^2_{x_i z} f_i  B^{-1}  D^2_{z x_j} f_j      (i != j)

Batched entry points take tuples as an array of shape (T, m, n).
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NewtonFailure, NonUniqueMaximizer, SingularHessian, ValidationError
from .preferences import HeinichHead, Linear, PreferenceFunction, preference_from_dict
from .preferences import Brenier, ConcaveSum, Quadratic
from .settings import NewtonSettings

log = logging.getLogger(__name__)

INJECTIVITY_THRESHOLD = 1e-8


@dataclass
class SurplusOracle:
    """The tuple of preferences (f_1, ..., f_m) plus inner-solver controls.

    ``z_box`` is an optional ``(lo, hi)`` pair bounding the multistart grid.
    When omitted the grid box is sized per tuple as three times the
    symmetric hull of the agent coordinates (it always contains the origin).
    Instances are immutable in practice and hold no cache, so they are safe
    to share between threads.
    """

    prefs: list
    z_box: tuple = None
    newton: NewtonSettings = field(default_factory=NewtonSettings)

    def __post_init__(self):
        self.prefs = list(self.prefs)
        if not self.prefs:
            raise ValidationError("oracle needs at least one preference")
        if not all(isinstance(p, PreferenceFunction) for p in self.prefs):
            raise ValidationError("prefs must be PreferenceFunction instances")
        dims = {p.dim for p in self.prefs}
        if len(dims) != 1:
            raise ValidationError(f"preferences disagree on dimension: {sorted(dims)}")
        if self.z_box is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, float), (self.dim,)).copy() for b in self.z_box)
            if np.any(hi <= lo):
                raise ValidationError("z_box must be nonempty")
            self.z_box = (lo, hi)

    @property
    def dim(self):
        return self.prefs[0].dim

    @property
    def arity(self):
        return len(self.prefs)

    @classmethod
    def builtin(cls, kind, m, n, **params):
        """Homogeneous oracle of a named family.

        ``heinich`` gives [HeinichHead(Q), Linear, ..., Linear] so that
        b = h(sum x_i); other kinds repeat one preference m times.
        """
        if m < 2:
            raise ValidationError("need m >= 2 agents")
        z_box = params.pop("z_box", None)
        newton = params.pop("newton", NewtonSettings())
        if kind == "quadratic":
            prefs = [Quadratic(n) for _ in range(m)]
        elif kind == "brenier":
            prefs = [Brenier(n) for _ in range(m)]
        elif kind == "concave_sum":
            prefs = [ConcaveSum(n, **params) for _ in range(m)]
        elif kind == "heinich":
            Q = params.get("Q", np.eye(n))
            prefs = [HeinichHead(Q)] + [Linear(n) for _ in range(m - 1)]
        else:
            raise ValidationError(f"unknown builtin oracle {kind!r}")
        return cls(prefs, z_box=z_box, newton=newton)

    def to_dict(self):
        d = {"prefs": [p.to_dict() for p in self.prefs], "newton": self.newton.to_dict()}
        if self.z_box is not None:
            d["z_box"] = [self.z_box[0].tolist(), self.z_box[1].tolist()]
        return d

    @classmethod
    def from_dict(cls, d, dim):
        prefs = [preference_from_dict(p, dim) for p in d["prefs"]]
        return cls(prefs, z_box=d.get("z_box"), newton=NewtonSettings.from_dict(d.get("newton")))


@dataclass
class BilinearSurplus:
    """b(x_1, x_2, x_3) = x_1.x_2 + x_1.x_3 + x_2.A x_3 with A positive definite, not symmetric.

    Not of the sup-form; used as the counterexample for the symmetry
    obstruction and as a plain surplus for the LP solver.
    """

    A: np.ndarray

    def __post_init__(self):
        self.A = np.array(self.A, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValidationError("A must be square")
        if np.linalg.eigvalsh(0.5 * (self.A + self.A.T)).min() <= 0:
            raise ValidationError("symmetric part of A must be positive definite")
        if np.linalg.norm(self.A - self.A.T) == 0:
            raise ValidationError("A must not be symmetric")

    @property
    def dim(self):
        return self.A.shape[0]

    arity = 3

    def value(self, X):
        X = np.asarray(X, float)
        x1, x2, x3 = X[..., 0, :], X[..., 1, :], X[..., 2, :]
        dot = lambda a, b: np.einsum("...i,...i->...", a, b)
        return dot(x1, x2) + dot(x1, x3) + dot(x2, x3 @ self.A.T)

    def cross_hessian(self, i, j):
        if i == j:
            raise ValidationError("cross Hessian needs i != j")
        eye = np.eye(self.dim)
        blocks = {(0, 1): eye, (0, 2): eye, (1, 2): self.A}
        if (i, j) in blocks:
            return blocks[(i, j)].copy()
        return blocks[(j, i)].T.copy()

    def to_dict(self):
        return {"kind": "bilinear", "A": self.A.tolist()}


# --------------------------------------------------------------------------
# Newton core


def _weighted_sum(prefs, method, X, W, Z):
    out = None
    for k, p in enumerate(prefs):
        term = getattr(p, method)(X[:, k], Z)
        w = W[:, k].reshape((-1,) + (1,) * (term.ndim - 1))
        out = w * term if out is None else out + w * term
    return out


def maximize_concave(prefs, X, Z0, W=None, settings=None):
    """Maximise z -> sum_k W[b, k] f_k(X[b, k], z) for every batch row b.

    Returns ``(Z, value, grad_norm, converged)``.  Rows whose Newton step is
    not an ascent direction (Hessian not negative definite) fall back to the
    gradient direction.
    """
    settings = settings or NewtonSettings()
    X = np.asarray(X, float)
    Z = np.array(Z0, dtype=float)
    nb, K, n = X.shape
    W = np.ones((nb, K)) if W is None else np.asarray(W, float)
    gnorm = np.full(nb, np.inf)
    done = np.zeros(nb, bool)
    stalled = np.zeros(nb, bool)

    F = lambda idx, Zc: _weighted_sum(prefs, "value", X[idx], W[idx], Zc)
    Fcur = np.full(nb, np.nan)                # objective at Z, carried over from accepted steps

    for _ in range(settings.max_iter):
        act = np.flatnonzero(~done & ~stalled)
        if act.size == 0:
            break
        Za = Z[act]
        g = _weighted_sum(prefs, "grad_z", X[act], W[act], Za)
        gn = np.linalg.norm(g, axis=-1)
        gnorm[act] = gn
        fin = gn <= settings.grad_tol
        done[act[fin]] = True
        keep = ~fin
        act, Za, g = act[keep], Za[keep], g[keep]
        if act.size == 0:
            break
        H = _weighted_sum(prefs, "hess_zz", X[act], W[act], Za)
        d = _newton_direction(H, g)
        slope = np.einsum("bi,bi->b", g, d)
        F0 = Fcur[act]
        fresh = np.isnan(F0)
        if fresh.any():
            F0[fresh] = F(act[fresh], Za[fresh])
        t = np.ones(act.size)
        pending = np.ones(act.size, bool)
        for _ in range(settings.max_halvings):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            cand = Za[idx] + t[idx, None] * d[idx]
            Fc = F(act[idx], cand)
            slack = 1e-15 * (1.0 + np.abs(F0[idx]))
            ok = Fc >= F0[idx] + settings.armijo * t[idx] * slope[idx] - slack
            ok &= np.isfinite(Fc)
            Z[act[idx[ok]]] = cand[ok]
            Fcur[act[idx[ok]]] = Fc[ok]
            pending[idx[ok]] = False
            t[idx[~ok]] *= 0.5
        stalled[act[pending]] = True

    # one polishing Newton step, kept only if it shrinks the gradient
    idx = np.flatnonzero(np.isfinite(gnorm))
    if idx.size:
        g = _weighted_sum(prefs, "grad_z", X[idx], W[idx], Z[idx])
        H = _weighted_sum(prefs, "hess_zz", X[idx], W[idx], Z[idx])
        cand = Z[idx] + _newton_direction(H, g)
        gc = _weighted_sum(prefs, "grad_z", X[idx], W[idx], cand)
        g0n, gcn = np.linalg.norm(g, axis=-1), np.linalg.norm(gc, axis=-1)
        better = gcn < g0n
        Z[idx[better]] = cand[better]
        gnorm[idx] = np.where(better, gcn, g0n)

    value = _weighted_sum(prefs, "value", X, W, Z)
    converged = gnorm <= settings.grad_tol
    return Z, value, gnorm, converged


def _newton_direction(H, g):
    ev = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2)))
    nd = ev.max(axis=-1) < -1e-14 * (1.0 + np.abs(ev).max(axis=-1))
    d = g.copy()
    if nd.any():
        d[nd] = -np.linalg.solve(H[nd], g[nd][..., None])[..., 0]
    return d


# --------------------------------------------------------------------------
# zbar


@dataclass
class ZbarDiagnostics:
    grad_norm: np.ndarray
    spread: np.ndarray            # max distance of converged starts from the best one
    n_converged: np.ndarray
    n_starts: int
    B_max_eig: np.ndarray
    boundary: np.ndarray          # zbar on or outside the multistart box
    failed: np.ndarray            # no start converged
    non_unique: np.ndarray
    singular: np.ndarray

    def row(self, t):
        return {
            "grad_norm": float(self.grad_norm[t]),
            "spread": float(self.spread[t]),
            "n_converged": int(self.n_converged[t]),
            "n_starts": self.n_starts,
            "B_max_eig": float(self.B_max_eig[t]),
            "boundary_warning": bool(self.boundary[t]),
        }


def _check_tuples(oracle, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != oracle.arity or X.shape[2] != oracle.dim:
        raise ValidationError(
            f"expected tuples of shape (T, {oracle.arity}, {oracle.dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite agent coordinates")
    return X


def _search_boxes(oracle, X):
    T, _, n = X.shape
    if oracle.z_box is not None:
        lo, hi = oracle.z_box
        return np.broadcast_to(lo, (T, n)), np.broadcast_to(hi, (T, n))
    R = np.maximum(3.0 * np.abs(X).max(axis=1), 1.0)
    return -R, R


def solve_zbar_batch(oracle, X, strict=True):
    """Maximisers zbar for each tuple in X (shape (T, m, n)).

    With ``strict`` a failure at any tuple raises; otherwise the diagnostics
    flag it and the best converged start (or the best start overall) is
    returned.
    """
    X = _check_tuples(oracle, X)
    T, m, n = X.shape
    s = oracle.newton
    lo, hi = _search_boxes(oracle, X)
    unit = np.array(list(itertools.product(np.linspace(0.0, 1.0, s.grid), repeat=n)))
    if s.grid == 1:
        unit = np.full((1, n), 0.5)
    starts = lo[:, None, :] + unit[None] * (hi - lo)[:, None, :]
    starts = np.concatenate([starts, X.mean(axis=1)[:, None, :]], axis=1)
    S = starts.shape[1]

    Xb = np.repeat(X, S, axis=0)
    Z, val, gn, conv = maximize_concave(oracle.prefs, Xb, starts.reshape(T * S, n), settings=s)
    Z, val, gn, conv = Z.reshape(T, S, n), val.reshape(T, S), gn.reshape(T, S), conv.reshape(T, S)

    score = np.where(conv, val, -np.inf)
    failed = ~conv.any(axis=1)
    score[failed] = np.where(np.isfinite(val[failed]), val[failed], -np.inf)
    best = np.argmax(score, axis=1)
    rows = np.arange(T)
    zbar = Z[rows, best]
    dist = np.linalg.norm(Z - zbar[:, None, :], axis=-1)
    spread = np.where(conv, dist, 0.0).max(axis=1)
    non_unique = spread > s.unique_tol

    Bm = B_matrix_batch(oracle, X, zbar)
    ev = np.linalg.eigvalsh(Bm)
    bmax = ev.max(axis=1)
    singular = bmax >= -1e-12 * (1.0 + np.abs(ev).max(axis=1))
    boundary = np.any((zbar <= lo) | (zbar >= hi), axis=1)

    diag = ZbarDiagnostics(gn[rows, best], spread, conv.sum(axis=1), S, bmax,
                           boundary, failed, non_unique, singular)
    if boundary.any():
        # the automatic box only seeds the grid; leaving it is routine for growing maximisers
        level = logging.WARNING if oracle.z_box is not None else logging.DEBUG
        log.log(level, "zbar on/outside the multistart box for %d tuple(s)", int(boundary.sum()))
    if strict:
        _raise_first(X, zbar, diag)
    return zbar, diag


def _raise_first(X, zbar, diag):
    for flag, exc, msg in ((diag.failed, NewtonFailure, "Newton did not converge from any start"),
                           (diag.non_unique, NonUniqueMaximizer, "multistart runs disagree"),
                           (diag.singular, SingularHessian, "B(zbar) is singular")):
        if flag.any():
            t = int(np.flatnonzero(flag)[0])
            raise exc(f"{msg} at tuple {X[t].tolist()}",
                      witness={"tuple": X[t].tolist(), "zbar": zbar[t].tolist(), **diag.row(t)})


def solve_zbar(oracle, xs):
    """Return ``(zbar, diagnostics)`` for a single tuple of m points."""
    zbar, diag = solve_zbar_batch(oracle, xs)
    return zbar[0], diag.row(0)


def eval_b_batch(oracle, X, Z=None):
    """Surplus values for tuples X (T, m, n); also handles ``BilinearSurplus``."""
    if isinstance(oracle, BilinearSurplus):
        return oracle.value(X)
    X = _check_tuples(oracle, X)
    if Z is None:
        Z, _ = solve_zbar_batch(oracle, X)
    return sum(p.value(X[:, i], Z) for i, p in enumerate(oracle.prefs))


def eval_b(oracle, xs):
    return float(eval_b_batch(oracle, xs)[0])


def B_matrix_batch(oracle, X, Z):
    B = sum(p.hess_zz(X[:, i], Z) for i, p in enumerate(oracle.prefs))
    return 0.5 * (B + np.swapaxes(B, -1, -2))


def B_matrix(oracle, xs):
    """B = sum_i D^2_zz f_i(x_i, zbar) with its eigenvalue range (min, max)."""
    X = _check_tuples(oracle, xs)
    zbar, _ = solve_zbar_batch(oracle, X)
    B = B_matrix_batch(oracle, X, zbar)[0]
    ev = np.linalg.eigvalsh(B)
    return B, (float(ev[0]), float(ev[-1]))


def _point(oracle, xs):
    X = _check_tuples(oracle, xs)
    zbar, _ = solve_zbar_batch(oracle, X)
    return X[0], zbar[0], B_matrix_batch(oracle, X, zbar)[0]


def _index(oracle, i):
    if not 0 <= i < oracle.arity:
        raise ValidationError(f"agent index {i} out of range")
    return i


def envelope_derivatives(oracle, xs):
    """All first- and second-order envelope quantities at one tuple from a single zbar solve.

    Returns a dict with ``zbar`` (n,), ``grad`` (m, n) stacking D_{x_i} b,
    ``jac`` (m, n, n) stacking D_{x_i} zbar, and ``cross`` mapping (i, j),
    i != j, to D^2_{x_i x_j} b.
    """
    x, z, B = _point(oracle, xs)
    m = oracle.arity
    return {"zbar": z,
            "grad": np.stack([oracle.prefs[i].grad_x(x[i], z) for i in range(m)]),
            "jac": np.stack([-_solve_B(B, oracle.prefs[i].hess_zx(x[i], z)) for i in range(m)]),
            "cross": {(i, j): _cross(oracle, x, z, B, i, j) for i in range(m) for j in range(m) if i != j}}


def grad_b(oracle, xs, i):
    """D_{x_i} b, evaluated through D_{x_i} f_i at zbar."""
    x, z, _ = _point(oracle, xs)
    i = _index(oracle, i)
    return oracle.prefs[i].grad_x(x[i], z)


def jac_zbar(oracle, xs, i):
    """D_{x_i} zbar = -B^{-1} D^2_{z x_i} f_i; rows index z, columns x_i."""
    x, z, B = _point(oracle, xs)
    i = _index(oracle, i)
    return -_solve_B(B, oracle.prefs[i].hess_zx(x[i], z))


def hess_b_cross(oracle, xs, i, j):
    """D^2_{x_i x_j} b for i != j."""
    if i == j:
        raise ValidationError("hess_b_cross needs i != j")
    if isinstance(oracle, BilinearSurplus):
        return oracle.cross_hessian(i, j)
    x, z, B = _point(oracle, xs)
    i, j = _index(oracle, i), _index(oracle, j)
    return _cross(oracle, x, z, B, i, j)


def _cross(oracle, x, z, B, i, j):
    return -oracle.prefs[i].hess_xz(x[i], z) @ _solve_B(B, oracle.prefs[j].hess_zx(x[j], z))


def _solve_B(B, rhs):
    try:
        if np.linalg.cond(B) > 1e14:
            raise np.linalg.LinAlgError
        return np.linalg.solve(B, rhs)
    except np.linalg.LinAlgError:
        raise SingularHessian("B(zbar) is singular", witness={"B": np.asarray(B).tolist()}) from None


def cross_hessians(oracle, xs):
    """All cross blocks D^2_{x_i x_j} b (i != j) at one tuple, keyed by (i, j)."""
    m = oracle.arity
    if isinstance(oracle, BilinearSurplus):
        return {(i, j): oracle.cross_hessian(i, j) for i in range(m) for j in range(m) if i != j}
    x, z, B = _point(oracle, xs)
    return {(i, j): _cross(oracle, x, z, B, i, j) for i in range(m) for j in range(m) if i != j}


def lemma_core_matrix(oracle, xs, i=0):
    """-D^2_{x_i z} f_i B^{-1} D^2_{z x_i} f_i at (x_i, zbar); positive definite under H1-H3."""
    x, z, B = _point(oracle, xs)
    return _cross(oracle, x, z, B, i, i)


def condition_III_matrix(oracle, x1, x2, x3, x1t, x3t):
    """The three-agent second-order matrix

        T = -[D^2_{x2 z} f_2 B^{-1} D^2_{z x2} f_2](x2, zbar) + D^2_{x2 x2} f_2(x2, zbar)
            - D^2_{x2 x2} f_2(x2, zbar~)

    with zbar = zbar(x1, x2, x3) and zbar~ = zbar(x1t, x2, x3t).  Returns
    ``(T, eigenvalues)``; the condition asks for T positive definite.
    """
    if oracle.arity != 3:
        raise ValidationError("condition III is defined for three agents")
    X = _check_tuples(oracle, np.array([[x1, x2, x3], [x1t, x2, x3t]], dtype=float))
    Z, _ = solve_zbar_batch(oracle, X)
    B = B_matrix_batch(oracle, X[:1], Z[:1])[0]
    f2 = oracle.prefs[1]
    x2 = X[0, 1]
    first = _cross(oracle, X[0], Z[0], B, 1, 1)
    T = first + f2.hess_xx(x2, Z[0]) - f2.hess_xx(x2, Z[1])
    return T, np.linalg.eigvalsh(0.5 * (T + T.T))


def symmetry_product(surplus, x1, x2, x3):
    """S = D^2_{x2 x3} b [D^2_{x1 x3} b]^{-1} D^2_{x1 x2} b for a three-agent surplus.

    For sup-form surpluses this collapses to -D^2_{x2 z} f_2 B^{-1} D^2_{z x2} f_2,
    which is symmetric; for ``BilinearSurplus`` it equals A.
    """
    if surplus.arity != 3:
        raise ValidationError("symmetry product needs three agents")
    H = cross_hessians(surplus, np.array([x1, x2, x3], dtype=float))
    mid = H[(0, 2)]
    if np.linalg.cond(mid) > 1e12:
        raise SingularHessian("D^2_{x1 x3} b is singular", witness={"tuple": [list(x1), list(x2), list(x3)]})
    return H[(1, 2)] @ np.linalg.solve(mid, H[(0, 1)])


# --------------------------------------------------------------------------
# hypothesis checks


@dataclass
class SampleSpec:
    """Where and how densely to sample when certifying H1-H5."""

    x_box: tuple = (-1.0, 1.0)
    z_box: tuple = (-1.0, 1.0)
    n_samples: int = 200
    n_pairs: int = 200
    seed: int = 0
    condition_iii: list = field(default_factory=list)   # dicts with x1, x2, x3, x1t, x3t


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    margin: float
    samples: int
    witness: object = None
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "samples": int(self.samples), "witness": self.witness, "note": self.note}


@dataclass
class ConditionReport:
    checks: dict
    exhaustive: bool = False
    label: str = "sampled certificate: holds on the drawn samples only, not a proof"

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def __getitem__(self, key):
        return self.checks[key]

    def to_dict(self):
        return {"label": self.label, "exhaustive": self.exhaustive, "passed": self.passed,
                "checks": {k: c.to_dict() for k, c in self.checks.items()}}


def _uniform(rng, box, size, n):
    lo, hi = (np.broadcast_to(np.asarray(b, float), (n,)) for b in box)
    return lo + (hi - lo) * rng.random(tuple(size) + (n,))


def check_conditions(oracle, sample_spec=None):
    """Sample-based margins for H1-H5, the B-matrix sign, and optional condition III.

    Margins:
      H1  min_i min |det D^2_{x_i z} f_i| over sampled (x, z)
      H2  max multistart spread over sampled tuples (pass <= unique_tol)
      H3  max eigenvalue of B over sampled tuples (pass < 0)
      H4  min |D_x f_1(x, z) - D_x f_1(x, z')| / |z - z'| over sampled pairs
      H5  same ratio for z -> D_z f_i(x, z) in x, minimised over i
    """
    if not isinstance(oracle, SurplusOracle):
        raise ValidationError(f"check_conditions needs a sup-form SurplusOracle, got {type(oracle).__name__}")
    spec = sample_spec or SampleSpec()
    rng = np.random.default_rng(spec.seed)
    m, n = oracle.arity, oracle.dim
    checks = {}

    xs = _uniform(rng, spec.x_box, (spec.n_samples,), n)
    zs = _uniform(rng, spec.z_box, (spec.n_samples,), n)
    worst, wit = np.inf, None
    for i, p in enumerate(oracle.prefs):
        dets = np.abs(np.linalg.det(p.hess_xz(xs, zs)))
        k = int(np.argmin(dets))
        if dets[k] < worst:
            worst, wit = float(dets[k]), {"agent": i, "x": xs[k].tolist(), "z": zs[k].tolist()}
    checks["H1"] = ConditionCheck("H1", worst > 1e-12, worst, spec.n_samples * m, wit,
                                  "non-degenerate mixed Hessian")

    X = _uniform(rng, spec.x_box, (spec.n_samples, m), n)
    zbar, diag = solve_zbar_batch(oracle, X, strict=False)
    ok = ~diag.failed
    spread = np.where(ok, diag.spread, np.inf)
    k = int(np.argmax(spread))
    checks["H2"] = ConditionCheck("H2", bool(spread[k] <= oracle.newton.unique_tol), float(spread[k]),
                                  spec.n_samples, {"tuple": X[k].tolist(), "zbar": zbar[k].tolist()},
                                  "unique maximiser (multistart agreement)")
    bmax = np.where(ok, diag.B_max_eig, np.inf)
    k = int(np.argmax(bmax))
    checks["H3"] = ConditionCheck("H3", bool(bmax[k] < 0), float(bmax[k]), spec.n_samples,
                                  {"tuple": X[k].tolist(), "zbar": zbar[k].tolist()},
                                  "B(zbar) negative definite")

    good = ok & ~diag.non_unique & ~diag.singular
    if good.any():
        mins = []
        Xg, Zg = X[good], zbar[good]
        Bg = B_matrix_batch(oracle, Xg, Zg)
        for t in range(len(Xg)):
            L = _cross(oracle, Xg[t], Zg[t], Bg[t], 0, 0)
            mins.append(np.linalg.eigvalsh(0.5 * (L + L.T))[0])
        mins = np.array(mins)
        k = int(np.argmin(mins))
        checks["lemma_core"] = ConditionCheck("lemma_core", bool(mins[k] > 0), float(mins[k]), len(Xg),
                                              {"tuple": Xg[k].tolist()},
                                              "-D_x1z f1 B^-1 D_zx1 f1 positive definite")

    x = _uniform(rng, spec.x_box, (spec.n_pairs,), n)
    za = _uniform(rng, spec.z_box, (spec.n_pairs,), n)
    zb = _uniform(rng, spec.z_box, (spec.n_pairs,), n)
    ratio = _ratio(oracle.prefs[0].grad_x(x, za) - oracle.prefs[0].grad_x(x, zb), za - zb)
    k = int(np.argmin(ratio))
    checks["H4"] = ConditionCheck("H4", bool(ratio[k] >= INJECTIVITY_THRESHOLD), float(ratio[k]), spec.n_pairs,
                                  {"x": x[k].tolist(), "z": za[k].tolist(), "z2": zb[k].tolist()},
                                  "z -> D_x f_1(x, z) injective on samples")

    worst, wit = np.inf, None
    for i, p in enumerate(oracle.prefs):
        z = _uniform(rng, spec.z_box, (spec.n_pairs,), n)
        xa = _uniform(rng, spec.x_box, (spec.n_pairs,), n)
        xb = _uniform(rng, spec.x_box, (spec.n_pairs,), n)
        ratio = _ratio(p.grad_z(xa, z) - p.grad_z(xb, z), xa - xb)
        k = int(np.argmin(ratio))
        if ratio[k] < worst:
            worst, wit = float(ratio[k]), {"agent": i, "z": z[k].tolist(), "x": xa[k].tolist(), "x2": xb[k].tolist()}
    checks["H5"] = ConditionCheck("H5", worst >= INJECTIVITY_THRESHOLD, worst, spec.n_pairs * m, wit,
                                  "x -> D_z f_i(x, z) injective on samples")

    if spec.condition_iii:
        worst, wit = np.inf, None
        for case in spec.condition_iii:
            _, ev = condition_III_matrix(oracle, case["x1"], case["x2"], case["x3"], case["x1t"], case["x3t"])
            if ev[0] < worst:
                worst, wit = float(ev[0]), dict(case, eigenvalues=ev.tolist())
        checks["condition_III"] = ConditionCheck("condition_III", worst > 0, worst, len(spec.condition_iii), wit,
                                                 "T matrix positive definite at the given tuples")

    return ConditionReport(checks)


def _ratio(num, den):
    dn = np.linalg.norm(den, axis=-1)
    r = np.linalg.norm(num, axis=-1) / np.where(dn > 0, dn, 1.0)
    return np.where(dn > 0, r, np.inf)
