"""Multi-marginal Kantorovich problem over finite marginals.

    maximise  sum_t gamma_t b(x_t)   over couplings gamma with the given marginals

solved exactly by the dense simplex in ``simplex`` or approximately by
multi-marginal entropic scaling, plus diagnostics on the optimal support.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, HedonicOTError, SolverError, ToolkitDefect, ValidationError, VariableCapExceeded
from .measures import DiscreteMeasure
from .simplex import simplex_max, transport_constraints
from .surplus import cross_hessians, eval_b_batch

log = logging.getLogger(__name__)

PRUNE = 1e-14
SCALING_SWEEPS = 2000      # then hand over to the log-domain solver
SWAP_TOL = 1e-8
SPACE_TOL = 1e-8
LOCAL_FRACTION = 0.2


@dataclass
class Coupling:
    """Sparse plan: rows of ``idx`` are atom-index tuples, ``mass`` their weights."""

    idx: np.ndarray
    mass: np.ndarray
    marginals: list
    objective: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=int).reshape(len(self.mass), -1)
        self.mass = np.asarray(self.mass, dtype=float)
        if np.any(self.mass <= 0):
            raise ValidationError("coupling masses must be positive")
        if self.idx.shape[1] != len(self.marginals):
            raise ValidationError("index tuples do not match the number of marginals")

    @property
    def m(self):
        return self.idx.shape[1]

    def __len__(self):
        return len(self.mass)

    def tuple_points(self):
        return np.stack([self.marginals[i].points[self.idx[:, i]] for i in range(self.m)], axis=1)

    def atoms(self):
        return self.tuple_points(), self.mass

    def as_dict_of_masses(self):
        return {tuple(int(k) for k in t): float(w) for t, w in zip(self.idx, self.mass)}

    def max_marginal_violation(self):
        return max(float(np.max(np.abs(_marginal_weights(self, i) - self.marginals[i].weights)))
                   for i in range(self.m))

    def to_dict(self):
        return {"entries": [{"idx": t.tolist(), "mass": float(w)} for t, w in zip(self.idx, self.mass)],
                "objective": float(self.objective), "meta": _jsonable(self.meta)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def coupling_from_dense(plan, marginals, surplus=None, threshold=0.0, meta=None):
    plan = np.asarray(plan, float)
    idx = np.argwhere(plan > threshold)
    mass = plan[tuple(idx.T)]
    obj = float(np.sum(mass * surplus[tuple(idx.T)])) if surplus is not None else float("nan")
    return Coupling(idx, mass, marginals, obj, meta or {})


def _check_cap(sizes, cap):
    nvar = math.prod(sizes)
    if nvar > cap:
        raise VariableCapExceeded(f"variable cap exceeded: {nvar} > {cap} (sizes {list(sizes)})")
    return nvar


def surplus_tensor(problem):
    """Dense array of b over the product of the marginal supports."""
    sizes = problem.sizes
    _check_cap(sizes, problem.settings.variable_cap)
    idx = np.indices(sizes).reshape(problem.m, -1).T
    X = problem.tuple_points(idx)
    try:
        vals = eval_b_batch(problem.oracle, X)
    except HedonicOTError as exc:
        raise SolverError(f"surplus evaluation failed: {exc}", getattr(exc, "witness", None)) from exc
    return np.asarray(vals, float).reshape(sizes)


def solve_transport_lp(weights, values, pivot="bland", feas_tol=1e-9, opt_tol=1e-10):
    """Exact maximiser of <values, plan> over plans with the given marginal weights."""
    A, rhs = transport_constraints(weights)
    res = simplex_max(values.reshape(-1), A, rhs, pivot=pivot, feas_tol=feas_tol, opt_tol=opt_tol)
    return res.x.reshape(values.shape), res


def solve_mk_exact(problem, pivot=None):
    """Optimal vertex of the multi-marginal LP via the dense simplex."""
    s = problem.settings
    pivot = pivot or s.pivot
    _check_cap(problem.sizes, s.variable_cap)
    bvals = surplus_tensor(problem)
    weights = [mu.weights for mu in problem.marginals]
    plan, res = solve_transport_lp(weights, bvals, pivot, s.feas_tol, s.opt_tol)
    gamma = coupling_from_dense(plan, problem.marginals, bvals, threshold=PRUNE,
                                meta={"solver": "simplex", **res.stats})
    viol = gamma.max_marginal_violation()
    if viol > s.feas_tol:
        raise ToolkitDefect(f"exact coupling violates a marginal by {viol:.3e}")
    gamma.meta["marginal_violation"] = viol
    return gamma


def solve_mk_entropic(problem, eps=None, max_iter=None, tol=None):
    """Entropic relaxation  max <b, g> - eps KL(g | mu_1 x ... x mu_m)  by iterative scaling.

    Runs on scaling vectors for eps >= 1e-2 and on log-potentials below that
    (or whenever exp(range(b)/eps) would underflow), warm-started through a
    decreasing eps schedule.  Entries below 1e-14 are pruned.
    """
    s = problem.settings
    eps = float(eps if eps is not None else s.entropic_eps)
    if not eps > 0:
        raise ValidationError("eps must be positive")
    max_iter = max_iter or s.entropic_max_iter
    tol = tol or s.entropic_tol
    bvals = surplus_tensor(problem)
    m = problem.m
    logmu = [np.log(mu.weights) for mu in problem.marginals]
    spread = float(bvals.max() - bvals.min())
    log_domain = eps < 1e-2 or spread / eps > 500.0

    iters, fallback = 0, False
    if not log_domain:
        plan, iters = _sinkhorn_scaling(bvals, problem.marginals, eps, tol, min(max_iter, SCALING_SWEEPS))
        if plan is None:
            log.info("entropic scaling stalled after %d sweeps; switching to log-domain potentials", iters)
            log_domain = fallback = True
        else:
            logP = np.log(np.where(plan > 0, plan, 1.0))
    if log_domain:
        phi, more = _sinkhorn_log(bvals, logmu, eps, tol, max_iter - iters)
        iters += more
        logP = _log_plan(bvals, logmu, phi, eps)
        plan = np.exp(logP)

    viol = [float(np.max(np.abs(plan.sum(axis=tuple(j for j in range(m) if j != i)) - mu.weights)))
            for i, mu in enumerate(problem.marginals)]
    logref = sum(np.reshape(lm, [-1 if j == i else 1 for j in range(m)]) for i, lm in enumerate(logmu))
    pos = plan > 0
    kl = float(np.sum(plan[pos] * (logP[pos] - np.broadcast_to(logref, plan.shape)[pos])))
    unreg = float(np.sum(plan * bvals))
    gamma = coupling_from_dense(plan, problem.marginals, bvals, threshold=PRUNE,
                                meta={"solver": "entropic", "eps": eps, "iterations": iters,
                                      "log_domain": log_domain, "scaling_fallback": fallback,
                                      "marginal_violation": viol,
                                      "unregularized_objective": unreg,
                                      "regularized_objective": unreg - eps * kl})
    return gamma


def _sinkhorn_scaling(bvals, marginals, eps, tol, max_iter):
    """Plain iterative proportional fitting; returns (None, sweeps) if it has not converged."""
    m = len(marginals)
    shape = bvals.shape
    K = np.exp((bvals - bvals.max()) / eps)
    for i, mu in enumerate(marginals):
        K = K * np.reshape(mu.weights, [-1 if j == i else 1 for j in range(m)])
    u = [np.ones(n) for n in shape]

    def plan():
        P = K
        for i in range(m):
            P = P * np.reshape(u[i], [-1 if j == i else 1 for j in range(m)])
        return P

    for it in range(1, max_iter + 1):
        for i, mu in enumerate(marginals):
            P = plan()
            marg = P.sum(axis=tuple(j for j in range(m) if j != i))
            if np.any(marg <= 0) or not np.all(np.isfinite(marg)):
                raise ConvergenceError("scaling underflow; use the log-domain path")
            u[i] = u[i] * mu.weights / marg
        P = plan()
        err = max(np.max(np.abs(P.sum(axis=tuple(j for j in range(m) if j != i)) - mu.weights))
                  for i, mu in enumerate(marginals))
        if err <= tol:
            return P, it
    return None, max_iter


def _log_plan(bvals, logmu, phi, eps):
    m = len(logmu)
    L = bvals / eps
    for i in range(m):
        L = L + np.reshape(logmu[i] + phi[i] / eps, [-1 if j == i else 1 for j in range(m)])
    return L


def _lse_except(L, i):
    axes = tuple(j for j in range(L.ndim) if j != i)
    mx = L.max(axis=axes, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return (np.log(np.exp(L - mx).sum(axis=axes, keepdims=True)) + mx).reshape(-1)


def _dual_newton(bvals, logmu, phi, eps, tol, max_steps=100):
    """Damped Newton on the convex dual  G(phi) = eps sum exp(L) - sum_i phi_i . mu_i.

    The gradient is (plan marginals - mu); the Hessian is built from the
    pairwise marginals of the plan and has the constant shifts between
    groups as its null space, so the step uses a least-squares solve.
    Returns (phi, steps, err) and stops early when no descent is possible.
    """
    m = len(logmu)
    sizes = [len(lm) for lm in logmu]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    mu = np.concatenate([np.exp(lm) for lm in logmu])

    def state(ph):
        L = _log_plan(bvals, logmu, ph, eps)
        top = L.max()
        P = np.exp(L - top)
        return P, top

    def G(P, top, ph):
        with np.errstate(over="ignore"):
            return eps * P.sum() * math.exp(min(top, 700.0)) - sum(float(p @ np.exp(lm)) for p, lm in zip(ph, logmu))

    P, top = state(phi)
    err = np.inf
    for step in range(max_steps):
        Pt = P * math.exp(top)
        margs = [Pt.sum(axis=tuple(j for j in range(m) if j != i)) for i in range(m)]
        grad = np.concatenate(margs) - mu
        err = float(np.abs(grad).max())
        if err <= tol:
            return phi, step, err
        H = np.zeros((offs[-1], offs[-1]))
        for i in range(m):
            H[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = np.diag(margs[i])
            for j in range(i + 1, m):
                pair = Pt.sum(axis=tuple(k for k in range(m) if k not in (i, j)))
                H[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = pair
                H[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = pair.T
        d = -eps * np.linalg.lstsq(H, grad, rcond=1e-13)[0]
        slope = float(grad @ d)
        if not slope < 0:
            break
        g0 = G(P, top, phi)
        t = 1.0
        for _ in range(50):
            trial = [ph + t * d[offs[i]:offs[i + 1]] for i, ph in enumerate(phi)]
            Pn, topn = state(trial)
            if G(Pn, topn, trial) <= g0 + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        phi, P, top = trial, Pn, topn
    return phi, max_steps, err


def _sinkhorn_log(bvals, logmu, eps, tol, max_iter, check_every=10, newton_after=200):
    """Log-domain scaling on the potentials, warm-started along eps = spread, spread/2, ..., eps.

    Within a stage the proportional-scaling sweeps run first; if they have
    not met the stage tolerance after ``newton_after`` sweeps (slow linear
    convergence at small eps), a damped Newton solve on the same dual takes
    over.  Both target the same optimum.
    """
    m = len(logmu)
    mu = [np.exp(lm) for lm in logmu]
    phi = [np.zeros(len(lm)) for lm in logmu]
    spread = max(float(bvals.max() - bvals.min()), eps)
    schedule = []
    e = spread
    while e > eps:
        schedule.append(e)
        e *= 0.5
    schedule.append(eps)
    total = 0
    err = np.inf
    for stage, e in enumerate(schedule):
        stage_tol = tol if stage == len(schedule) - 1 else max(tol, 1e-5)
        sweeps = 0
        while True:
            total += 1
            sweeps += 1
            if total > max_iter:
                raise ConvergenceError(f"entropic scaling did not converge in {max_iter} iterations "
                                       f"(eps={e:.3g}, violation {err:.3e})")
            for i in range(m):
                lm = _lse_except(_log_plan(bvals, logmu, phi, e), i)
                phi[i] = phi[i] - e * (lm - logmu[i])
            if sweeps % check_every:
                continue
            L = _log_plan(bvals, logmu, phi, e)
            err = max(float(np.max(np.abs(np.exp(_lse_except(L, i)) - mu[i]))) for i in range(m))
            if not np.isfinite(err):
                raise ConvergenceError("non-finite potentials in log-domain scaling")
            if err <= stage_tol:
                break
            if sweeps >= newton_after:
                phi, steps, err = _dual_newton(bvals, logmu, phi, e, stage_tol)
                total += steps
                if err <= stage_tol:
                    break
    return phi, total


def _marginal_weights(coupling, i):
    return np.bincount(coupling.idx[:, i], weights=coupling.mass, minlength=len(coupling.marginals[i]))


def marginal(coupling, i):
    """i-th marginal of a coupling as a measure on the atoms of mu_i."""
    if not 0 <= i < coupling.m:
        raise ValidationError(f"marginal index {i} out of range")
    w = _marginal_weights(coupling, i)
    w = w / w.sum()
    return DiscreteMeasure(coupling.marginals[i].points, w)


@dataclass
class SwapReport:
    coordinates: list
    pairs_checked: int
    violations: list          # dicts: coordinate, s, t, gain

    @property
    def n_violations(self):
        return len(self.violations)

    def to_dict(self):
        return _jsonable({"coordinates": self.coordinates, "pairs_checked": self.pairs_checked,
                          "n_violations": self.n_violations, "violations": self.violations})


def swap_monotonicity_check(coupling, oracle, i=None, tol=SWAP_TOL):
    """Two-point exchange test on the support.

    For support tuples s, t and coordinate i, swapping the i-th entries is a
    feasible mass rearrangement, so an optimal plan must satisfy
    b(s) + b(t) >= b(s') + b(t') - tol.  ``i=None`` checks every coordinate.
    """
    coords = list(range(coupling.m)) if i is None else [i]
    K = len(coupling)
    if K < 2:
        return SwapReport(coords, 0, [])
    S, T = np.triu_indices(K, 1)
    P = coupling.tuple_points()
    base = eval_b_batch(oracle, P)
    violations = []
    for c in coords:
        Ps, Pt = P[S].copy(), P[T].copy()
        Ps[:, c], Pt[:, c] = P[T][:, c], P[S][:, c]
        gain = eval_b_batch(oracle, Ps) + eval_b_batch(oracle, Pt) - base[S] - base[T]
        for k in np.flatnonzero(gain > tol):
            violations.append({"coordinate": c, "s": coupling.idx[S[k]].tolist(),
                               "t": coupling.idx[T[k]].tolist(), "gain": float(gain[k])})
    return SwapReport(coords, len(S) * len(coords), violations)


@dataclass
class SpacelikeReport:
    pairs: int
    fraction_nonnegative: float
    worst: float
    delta: float
    label: str = "heuristic chord discretisation of a tangent-space inequality; not a pass/fail invariant"

    def to_dict(self):
        return _jsonable(self.__dict__)


def spacelike_diagnostic(coupling, oracle, delta=None, tol=SPACE_TOL):
    """Chord version of  sum_{i>=2} v_1 . D^2_{x_1 x_i} b . v_i >= 0  on the support.

    Pairs of support tuples whose first coordinates lie within ``delta``
    (default: 0.2 x the diameter of the first-coordinate support) give chords
    v = t - s; q is evaluated with the cross Hessians at s.
    """
    P = coupling.tuple_points()
    K = len(P)
    if K < 2:
        return SpacelikeReport(0, float("nan"), float("nan"), 0.0 if delta is None else delta)
    x1 = P[:, 0]
    dists = np.linalg.norm(x1[:, None] - x1[None], axis=-1)
    if delta is None:
        delta = LOCAL_FRACTION * float(dists.max())
    hess = {}
    qs = []
    for s in range(K):
        for t in range(K):
            if s == t or dists[s, t] > delta:
                continue
            if s not in hess:
                hess[s] = cross_hessians(oracle, P[s])
            v = P[t] - P[s]
            qs.append(sum(v[0] @ hess[s][(0, i)] @ v[i] for i in range(1, coupling.m)))
    if not qs:
        return SpacelikeReport(0, float("nan"), float("nan"), delta)
    qs = np.array(qs)
    return SpacelikeReport(len(qs), float(np.mean(qs >= -tol)), float(qs.min()), delta)


@dataclass
class MongeReport:
    is_graph: bool
    per_atom: list            # dicts: atom, tuples, dominant_share

    def to_dict(self):
        return _jsonable({"is_graph": self.is_graph, "per_atom": self.per_atom})


def graph_check(coupling):
    """Is the plan concentrated on a graph over the first coordinate?"""
    per_atom = []
    for a in np.unique(coupling.idx[:, 0]):
        rows = coupling.idx[:, 0] == a
        tuples = {tuple(t) for t in coupling.idx[rows]}
        share = float(coupling.mass[rows].max() / coupling.mass[rows].sum())
        per_atom.append({"atom": int(a), "tuples": len(tuples), "dominant_share": share})
    return MongeReport(all(p["tuples"] == 1 for p in per_atom), per_atom)


def objective(coupling, oracle):
    return float(np.sum(coupling.mass * eval_b_batch(oracle, coupling.tuple_points())))
