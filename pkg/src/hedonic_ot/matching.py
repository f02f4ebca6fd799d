"""Contract-side formulation of the matching problem.

For a contract distribution nu, each agent population mu_i is coupled to
nu by a two-marginal plan maximising sum f_i(x, z) d pi; the matching
objective is the sum of those optimal values over i.  Its maximiser is
nu = zbar # gamma for an optimal multi-marginal plan gamma, and gluing the
two-marginal plans along nu recovers an optimal gamma.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError, ToolkitDefect, ValidationError
from .measures import DiscreteMeasure, merge_atoms
from .mmot import Coupling, _check_cap, _jsonable, graph_check, objective, solve_mk_exact, solve_transport_lp
from .surplus import maximize_concave, solve_zbar_batch

log = logging.getLogger(__name__)

TIE_TOL = 1e-6
PRUNE = 1e-14


class MapNotInvertible(SolverError):
    pass


@dataclass
class TransportPlan:
    """Plan between contracts nu (first index) and agent types mu (second index)."""

    idx: np.ndarray
    mass: np.ndarray
    nu: DiscreteMeasure
    mu: DiscreteMeasure
    objective: float

    def dense(self):
        P = np.zeros((len(self.nu), len(self.mu)))
        np.add.at(P, (self.idx[:, 0], self.idx[:, 1]), self.mass)
        return P

    def max_marginal_violation(self):
        P = self.dense()
        return max(float(np.max(np.abs(P.sum(axis=1) - self.nu.weights))),
                   float(np.max(np.abs(P.sum(axis=0) - self.mu.weights))))

    def to_dict(self):
        return {"entries": [{"z": int(a), "x": int(b), "mass": float(w)}
                            for (a, b), w in zip(self.idx, self.mass)],
                "objective": float(self.objective)}


def solve_ot2(f, nu, mu, settings=None, pivot=None):
    """Exact two-marginal plan maximising sum f(x, z) between nu (contracts) and mu (types)."""
    cap = settings.variable_cap if settings else 20_000
    _check_cap((len(nu), len(mu)), cap)
    values = f.value(mu.points[None, :, :], nu.points[:, None, :])
    kw = {}
    if settings:
        kw = {"feas_tol": settings.feas_tol, "opt_tol": settings.opt_tol}
    plan, _ = solve_transport_lp([nu.weights, mu.weights], values,
                                 pivot or (settings.pivot if settings else "bland"), **kw)
    idx = np.argwhere(plan > PRUNE)
    mass = plan[tuple(idx.T)]
    return TransportPlan(idx, mass, nu, mu, float(np.sum(mass * values[tuple(idx.T)])))


def _plans(nu, problem):
    return [solve_ot2(f, nu, mu, problem.settings) for f, mu in zip(problem.oracle.prefs, problem.marginals)]


def mam_objective(nu, problem, return_plans=False):
    """sum_i T_{f_i}(nu, mu_i)."""
    if nu.dim != problem.dim:
        raise ValidationError("contract measure has the wrong dimension")
    plans = _plans(nu, problem)
    total = float(sum(p.objective for p in plans))
    return (total, plans) if return_plans else total


def contract_measure(gamma, problem):
    """nu = zbar # gamma, plus the nu-atom label of every support tuple of gamma."""
    zbar, _ = solve_zbar_batch(problem.oracle, gamma.tuple_points())
    pts, w, labels = merge_atoms(zbar, gamma.mass)
    w = w / w.sum()
    return DiscreteMeasure(pts, w), labels


def solve_mam_via_mk(problem):
    """Exact MAM maximiser as the contract pushforward of an exact MK solution."""
    gamma = solve_mk_exact(problem)
    nu, labels = contract_measure(gamma, problem)
    gamma.meta["contract_atom"] = labels.tolist()
    return nu, gamma


def glue_plans(nu, plans, oracle=None, tol=1e-9):
    """Multi-marginal coupling from plans sharing the contract marginal nu.

    Over each contract z_k the conditional laws pi_i(. | z_k) are combined
    independently and weighted by nu(z_k).
    """
    if not plans:
        raise ValidationError("no plans to glue")
    dense = []
    for i, p in enumerate(plans):
        if len(p.nu) != len(nu):
            raise ValidationError(f"plan {i} uses a different contract support")
        P = p.dense()
        if np.max(np.abs(P.sum(axis=1) - nu.weights)) > tol:
            raise ValidationError(f"plan {i} does not have nu as first marginal")
        dense.append(P)
    masses = {}
    for k, wk in enumerate(nu.weights):
        conds = [np.flatnonzero(P[k] > PRUNE) for P in dense]
        probs = [P[k, c] / wk for P, c in zip(dense, conds)]
        grids = np.meshgrid(*conds, indexing="ij")
        pgrid = np.meshgrid(*probs, indexing="ij")
        tup = np.stack([g.reshape(-1) for g in grids], axis=1)
        mass = wk * np.prod(np.stack([g.reshape(-1) for g in pgrid]), axis=0)
        for t, w in zip(map(tuple, tup), mass):
            masses[t] = masses.get(t, 0.0) + w
    keys = sorted(masses)
    gamma = Coupling(np.array(keys, int), np.array([masses[t] for t in keys]), [p.mu for p in plans])
    if oracle is not None:
        gamma.objective = objective(gamma, oracle)
    gamma.meta["solver"] = "glued"
    return gamma


@dataclass
class FixedPointResult:
    nu: DiscreteMeasure
    trace: list
    iterations: int
    frozen: list                   # atoms whose relocation failed, per iteration
    plans: list = field(default_factory=list)

    @property
    def value(self):
        return self.trace[-1]

    def to_dict(self):
        return _jsonable({"nu": self.nu.to_dict(), "trace": self.trace,
                          "iterations": self.iterations, "frozen": self.frozen})


def _relocate(nu, plans, problem):
    """Move every contract atom to argmax_z sum_i sum_x pi_i(z_k, x)/nu_k f_i(x, z)."""
    prefs, pts, W = [], [], []
    for f, p in zip(problem.oracle.prefs, plans):
        prefs += [f] * len(p.mu)
        pts.append(p.mu.points)
        W.append(p.dense() / nu.weights[:, None])
    X = np.broadcast_to(np.concatenate(pts)[None], (len(nu),) + (len(prefs), nu.dim))
    W = np.concatenate(W, axis=1)
    Z, _, _, conv = maximize_concave(prefs, X, nu.points, W=W, settings=problem.oracle.newton)
    Z = np.where(conv[:, None], Z, nu.points)
    return DiscreteMeasure(Z, nu.weights), np.flatnonzero(~conv).tolist()


def solve_mam_fixed_point(problem, init, max_outer=50, tol=1e-9):
    """Alternating ascent on the matching objective (a local method).

    Each outer step re-solves the m two-marginal plans for the current
    contracts, then relocates every contract atom by Newton on the
    plan-weighted preference sum.  The trace is non-decreasing; a drop beyond
    round-off raises ``ToolkitDefect``.  Atoms whose Newton solve fails stay put.
    """
    if len(init) == 0:
        raise ValidationError("empty initial contract measure")
    nu = init
    value, plans = mam_objective(nu, problem, return_plans=True)
    trace, frozen = [value], []
    it = 0
    for it in range(1, max_outer + 1):
        new_nu, stuck = _relocate(nu, plans, problem)
        if stuck:
            log.warning("fixed point: %d contract atom(s) frozen at iteration %d", len(stuck), it)
        frozen.append(stuck)
        new_value, new_plans = mam_objective(new_nu, problem, return_plans=True)
        gain = new_value - value
        if gain < -tol * (1.0 + abs(value)):
            raise ToolkitDefect(f"matching objective decreased by {-gain:.3e} at iteration {it}")
        if gain > 0:
            nu, plans = new_nu, new_plans
            value = new_value
        trace.append(value)
        if gain < tol:
            break
    return FixedPointResult(nu, trace, it, frozen, plans)


@dataclass
class MongeMap:
    """Tabulated map on the atoms of ``domain``.

    ``image_index[k]`` is the target atom receiving the largest share of the
    mass of domain atom k; ``share[k]`` is that share.  The map is valid when
    every share is at least 1 - tau.
    """

    domain: DiscreteMeasure
    target: DiscreteMeasure
    image_index: np.ndarray
    share: np.ndarray
    tau: float = TIE_TOL

    @property
    def images(self):
        return self.target.points[self.image_index]

    @property
    def valid(self):
        return bool(np.all(self.share >= 1.0 - self.tau))

    @property
    def witnesses(self):
        return np.flatnonzero(self.share < 1.0 - self.tau).tolist()

    def to_dict(self):
        return _jsonable({"valid": self.valid, "tau": self.tau, "witnesses": self.witnesses,
                          "pairs": [{"from": a.tolist(), "to": b.tolist(), "share": float(s)}
                                    for a, b, s in zip(self.domain.points, self.images, self.share)]})


def _reorder_plan(plan, nu_sorted, order):
    inv = np.empty(len(order), int)
    inv[order] = np.arange(len(order))
    idx = plan.idx.copy()
    idx[:, 0] = inv[idx[:, 0]]
    return TransportPlan(idx, plan.mass, nu_sorted, plan.mu, plan.objective)


def extract_monge_maps(nu, problem, plans=None, tau=TIE_TOL):
    """Maps F_i from contract atoms to type atoms read off optimal plans.

    Contract atoms are put in lexicographic order first, so the output does
    not depend on how nu was labelled.  Returns ``(maps, plans)`` with the
    plans expressed in the sorted labelling.
    """
    order = np.lexsort(nu.points.T[::-1])
    nu_s = DiscreteMeasure(nu.points[order], nu.weights[order])
    if plans is None:
        plans = _plans(nu_s, problem)
    else:
        plans = [_reorder_plan(p, nu_s, order) for p in plans]
    maps = []
    for p in plans:
        P = p.dense()
        maps.append(MongeMap(nu_s, p.mu, P.argmax(axis=1), P.max(axis=1) / P.sum(axis=1), tau))
    return maps, plans


def compose_G(maps, sep=1e-9):
    """G_i = F_i o F_1^{-1} on the image atoms of F_1 (i = 2..m)."""
    F1 = maps[0]
    imgs = F1.images
    for a in range(len(imgs)):
        for b in range(a + 1, len(imgs)):
            if np.max(np.abs(imgs[a] - imgs[b])) <= sep:
                raise MapNotInvertible(f"F_1 sends contract atoms {a} and {b} to the same type",
                                       witness={"atoms": [a, b], "x1": imgs[a].tolist()})
    dom_w = np.zeros(len(F1.target))
    dom_w[F1.image_index] = F1.domain.weights
    keep = np.flatnonzero(dom_w > 0)
    domain = DiscreteMeasure(F1.target.points[keep], dom_w[keep] / dom_w[keep].sum())
    pos = {int(a): k for k, a in enumerate(F1.image_index)}
    out = []
    for F in maps[1:]:
        img = np.array([F.image_index[pos[int(a)]] for a in keep])
        share = np.array([min(F.share[pos[int(a)]], F1.share[pos[int(a)]]) for a in keep])
        out.append(MongeMap(domain, F.target, img, share, F.tau))
    return out


def coupling_from_maps(maps, weights=None):
    """(F_1, ..., F_m) # nu as a coupling on type-atom index tuples."""
    w = maps[0].domain.weights if weights is None else weights
    masses = {}
    for k in range(len(w)):
        t = tuple(int(F.image_index[k]) for F in maps)
        masses[t] = masses.get(t, 0.0) + float(w[k])
    keys = sorted(masses)
    return Coupling(np.array(keys, int), np.array([masses[t] for t in keys]), [F.target for F in maps])


def graph_coupling(G_maps):
    """(Id, G_2, ..., G_m) # mu_1 for maps sharing the domain mu_1."""
    dom = G_maps[0].domain
    idx = [[a] + [int(G.image_index[a]) for G in G_maps] for a in range(len(dom))]
    return np.array(idx, int), dom.weights.copy()


def coupling_distance(a, b):
    """Largest entrywise mass difference between two couplings on the same index space."""
    da, db = a.as_dict_of_masses(), b.as_dict_of_masses()
    return max(abs(da.get(t, 0.0) - db.get(t, 0.0)) for t in set(da) | set(db))


def ce_purity(plans, tau=TIE_TOL):
    """Each type atom signs (almost) a single contract, for every population."""
    worst = 1.0
    for p in plans:
        P = p.dense()
        share = P.max(axis=0) / P.sum(axis=0)
        worst = min(worst, float(share.min()))
    return worst >= 1.0 - tau, worst


@dataclass
class EquivalenceReport:
    mk_value: float
    mam_value: float
    glued_value: float
    T_values: list
    nu_support: int
    gamma_support: int
    maps_valid: bool
    reconstruction_distance: float       # nan when some F_i is not a map
    ce_pure: bool
    cmn_pure: bool
    tolerance: float
    gap: float = field(init=False)
    glue_gap: float = field(init=False)

    def __post_init__(self):
        self.gap = abs(self.mk_value - self.mam_value)
        self.glue_gap = abs(self.mk_value - self.glued_value)

    @property
    def failures(self):
        out = []
        if not self.gap <= self.tolerance:
            out.append(f"|MK - MAM| = {self.gap:.3e} > {self.tolerance:.3e}")
        if not self.glue_gap <= self.tolerance:
            out.append(f"|MK - glued| = {self.glue_gap:.3e} > {self.tolerance:.3e}")
        if self.maps_valid and not self.reconstruction_distance <= 1e-9:
            out.append(f"reconstruction distance {self.reconstruction_distance:.3e} > 1e-9")
        return out

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        d["failures"] = self.failures
        return _jsonable(d)


def verify_equivalence(problem, rel_tol=1e-7):
    """Cross-check the multi-marginal and contract-side formulations on one instance."""
    nu, gamma = solve_mam_via_mk(problem)
    mk = gamma.objective
    mam, plans = mam_objective(nu, problem, return_plans=True)
    glued = glue_plans(nu, plans, problem.oracle)
    maps, _ = extract_monge_maps(nu, problem, plans)
    valid = all(F.valid for F in maps)
    dist = coupling_distance(gamma, coupling_from_maps(maps)) if valid else float("nan")
    return EquivalenceReport(
        mk_value=mk, mam_value=mam, glued_value=glued.objective,
        T_values=[p.objective for p in plans], nu_support=len(nu), gamma_support=len(gamma),
        maps_valid=valid, reconstruction_distance=dist, ce_pure=ce_purity(plans)[0],
        cmn_pure=graph_check(gamma).is_graph, tolerance=rel_tol * (1.0 + abs(mk)))
