"""Regression reports for the worked closed-form examples.

Each case returns a ``ReproReport`` made of individual checks.  A check
compares a computed quantity with its claimed value under one of the
relations ``eq`` (|computed - claimed| <= tol), ``le`` (computed <= claimed
+ tol) or ``lt`` (computed < claimed).  Reports carry no timings, so a fixed
seed reproduces them byte for byte.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .surplus import (BilinearSurplus, SurplusOracle, B_matrix_batch, condition_III_matrix, eval_b_batch,
                      solve_zbar_batch, symmetry_product)

A_WITNESS = np.array([[1.0, 1.0], [0.0, 1.0]])
P_WITNESS = np.array([2.5, 0.0])


@dataclass
class ReproCheck:
    quantity: str
    claimed: float
    computed: float
    tolerance: float
    relation: str = "eq"

    @property
    def passed(self):
        c, v = self.claimed, self.computed
        if not np.isfinite(v):
            return False
        if self.relation == "eq":
            return bool(abs(v - c) <= self.tolerance)
        if self.relation == "le":
            return bool(v <= c + self.tolerance)
        if self.relation == "lt":
            return bool(v < c)
        raise ValueError(self.relation)

    def to_dict(self):
        return {"quantity": self.quantity, "claimed": float(self.claimed), "computed": float(self.computed),
                "tolerance": float(self.tolerance), "relation": self.relation, "passed": self.passed}


@dataclass
class ReproReport:
    case: str
    note: str
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add(self, *args, **kwargs):
        self.checks.append(ReproCheck(*args, **kwargs))

    def to_dict(self):
        return {"case": self.case, "note": self.note, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def table(self):
        lines = [f"{self.case}: {'PASS' if self.passed else 'FAIL'}  ({self.note})"]
        for c in self.checks:
            flag = "ok  " if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.quantity:<58s} claimed {c.claimed: .10g} {c.relation} "
                         f"computed {c.computed: .10g} (tol {c.tolerance:.0e})")
        return "\n".join(lines)


def pairwise_quadratic_surplus(X):
    """-(1/2m) sum_i sum_j |x_i - x_j|^2 for tuples X of shape (T, m, n)."""
    m = X.shape[1]
    D = X[:, :, None, :] - X[:, None, :, :]
    return -np.einsum("tijk,tijk->t", D, D) / (2.0 * m)


def repro_quadratic_identity(samples=1000, seed=0):
    """sup_z sum -|x_i - z|^2 against the pairwise closed form, and zbar against the mean."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rep = ReproReport("quadratic_identity",
                      "sup-form quadratic surplus equals minus the pairwise spread over 2m; maximiser is the mean")
    q = SurplusOracle.builtin("quadratic", 3, 2)
    X = np.array([[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]])
    rep.add("b((1,0),(0,1),(-1,-1))", -4.0, float(eval_b_batch(q, X)[0]), 1e-12)
    rep.add("pairwise form at ((1,0),(0,1),(-1,-1))", -4.0, float(pairwise_quadratic_surplus(X)[0]), 1e-12)
    q2 = SurplusOracle.builtin("quadratic", 2, 1)
    X2 = np.array([[[0.0], [2.0]]])
    z2, _ = solve_zbar_batch(q2, X2)
    rep.add("zbar(0, 2)", 1.0, float(z2[0, 0]), 1e-12)
    rep.add("b(0, 2)", -2.0, float(eval_b_batch(q2, X2)[0]), 1e-12)
    X3 = np.full((1, 3, 2), 0.7)
    rep.add("b at a common point", 0.0, float(eval_b_batch(q, X3)[0]), 1e-12)

    rng = np.random.default_rng(seed)
    combos = [(m, n) for m in (2, 3, 5) for n in (1, 2, 3)]
    counts = [samples // len(combos) + (k < samples % len(combos)) for k in range(len(combos))]
    worst_b, worst_z = 0.0, 0.0
    for (m, n), cnt in zip(combos, counts):
        if cnt == 0:
            continue
        oracle = SurplusOracle.builtin("quadratic", m, n)
        X = rng.uniform(-2.0, 2.0, size=(cnt, m, n))
        z, _ = solve_zbar_batch(oracle, X)
        b = eval_b_batch(oracle, X, z)
        cf = pairwise_quadratic_surplus(X)
        worst_b = max(worst_b, float(np.max(np.abs(b - cf) / (1.0 + np.abs(b)))))
        worst_z = max(worst_z, float(np.max(np.linalg.norm(z - X.mean(axis=1), axis=-1))))
    rep.add(f"max relative error of b vs pairwise form ({samples} tuples)", 0.0, worst_b, 1e-10)
    rep.add(f"max |zbar - mean| ({samples} tuples)", 0.0, worst_z, 1e-10)
    return rep


def _asym(S):
    return float(np.linalg.norm(S - S.T))


def repro_symmetry_obstruction(points=100, seed=0):
    """The three-agent product of cross Hessians is symmetric for sup-form surpluses, but is A for the bilinear one."""
    rep = ReproReport("symmetry_obstruction",
                      "x1.x2 + x1.x3 + x2.A x3 with A=[[1,1],[0,1]] cannot be a sup-form surplus")
    bil = BilinearSurplus(A_WITNESS)
    # sym(A) positive definite, phrased as -lambda_min < 0
    rep.add("-lambda_min(sym A)", 0.0, -float(np.linalg.eigvalsh(0.5 * (A_WITNESS + A_WITNESS.T))[0]), 0.0, "lt")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(3, 2))
    S = symmetry_product(bil, *x)
    rep.add("|S - A|_F for the bilinear surplus", 0.0, float(np.linalg.norm(S - A_WITNESS)), 1e-12)
    rep.add("|S - S^T|_F for the bilinear surplus", float(np.sqrt(2.0)), _asym(S), 1e-12)

    q = SurplusOracle.builtin("quadratic", 3, 2)
    Sq = symmetry_product(q, *x)
    rep.add("|S - (2/3) I|_F for quadratic preferences", 0.0, float(np.linalg.norm(Sq - 2.0 / 3.0 * np.eye(2))), 1e-12)

    Qh = np.array([[2.0, 0.5], [0.5, 1.0]])
    oracles = {"quadratic": q, "brenier": SurplusOracle.builtin("brenier", 3, 2),
               "heinich": SurplusOracle.builtin("heinich", 3, 2, Q=Qh)}
    for name, oracle in oracles.items():
        worst = 0.0
        for _ in range(points):
            x = rng.uniform(-1, 1, size=(3, 2))
            worst = max(worst, _asym(symmetry_product(oracle, *x)))
        rep.add(f"max |S - S^T|_F, {name} ({points} points)", 0.0, worst, 1e-8, "le")
    return rep


def repro_condition_III_failure():
    """Second-order condition fails for f_i(x, z) = -sqrt(1 + |x + z|^2), three agents, |p| = 5/2."""
    rep = ReproReport("condition_III_failure",
                      "Brenier-type preferences, n=2, x1=x2=x3=0, x1~=x3~=p with p=(2.5,0); rotation spot check p=(0,2.5)")
    oracle = SurplusOracle.builtin("brenier", 3, 2)
    o = np.zeros(2)
    bound = 1.0 / np.sqrt(5.0) - 2.0 / 3.0
    lam = {}
    for label, p in (("", P_WITNESS), (" [rotated]", P_WITNESS[::-1].copy())):
        X = np.array([[o, o, o], [p, o, p]])
        Z, _ = solve_zbar_batch(oracle, X)
        if not label:
            rep.add("|zbar(0,0,0)|", 0.0, float(np.linalg.norm(Z[0])), 1e-8)
            B = B_matrix_batch(oracle, X[:1], Z[:1])[0]
            rep.add("|B(0,0,0) + 3I|", 0.0, float(np.linalg.norm(B + 3.0 * np.eye(2), 2)), 1e-8)
        rep.add(f"|zbar(p,0,p) + 0.8 p|{label}", 0.0, float(np.linalg.norm(Z[1] + 0.8 * p)), 1e-8)
        rep.add(f"|zbar(p,0,p)|{label}", 2.0, float(np.linalg.norm(Z[1])), 1e-8)
        _, ev = condition_III_matrix(oracle, o, o, o, p, p)
        lam[label] = float(ev[-1])
        rep.add(f"lambda_max(T) <= 1/sqrt(5) - 2/3{label}", bound, lam[label], 1e-8, "le")
        rep.add(f"lambda_max(T) < 0{label}", 0.0, lam[label], 0.0, "lt")
    rep.add("lambda_max(T) rotation invariance", lam[""], lam[" [rotated]"], 1e-8)
    return rep


def repro_heinich(samples=50, seed=0):
    """h(sum x_i) = sup_z sum x_i.z - h*(z) for h(s) = s^T Q s."""
    rep = ReproReport("heinich",
                      "convex function of the sum as a sup-form surplus via the Legendre transform")
    o1 = SurplusOracle.builtin("heinich", 3, 1, Q=[[1.0]])
    X = np.array([[[1.0], [2.0], [3.0]]])
    z, _ = solve_zbar_batch(o1, X)
    rep.add("b(1,2,3) with Q=I", 36.0, float(eval_b_batch(o1, X, z)[0]), 1e-9)
    rep.add("zbar(1,2,3) with Q=I", 12.0, float(z[0, 0]), 1e-9)
    X0 = np.array([[[1.5], [-0.5], [-1.0]]])
    z0, _ = solve_zbar_batch(o1, X0)
    rep.add("b with sum x_i = 0", 0.0, float(eval_b_batch(o1, X0, z0)[0]), 1e-12)
    rep.add("|zbar| with sum x_i = 0", 0.0, float(abs(z0[0, 0])), 1e-12)
    o2 = SurplusOracle.builtin("heinich", 3, 2, Q=np.diag([1.0, 4.0]))
    X2 = np.array([[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]])
    rep.add("b with Q=diag(1,4), sum x_i=(1,1)", 5.0, float(eval_b_batch(o2, X2)[0]), 1e-9)

    rng = np.random.default_rng(seed)
    worst_b, worst_res, worst_z = 0.0, 0.0, 0.0
    for n in (1, 2, 3):
        G = rng.standard_normal((n, n))
        Q = G @ G.T + 0.5 * np.eye(n)
        oracle = SurplusOracle.builtin("heinich", 3, n, Q=Q)
        X = rng.uniform(-1, 1, size=(samples, 3, n))
        z, diag = solve_zbar_batch(oracle, X)
        s = X.sum(axis=1)
        h = np.einsum("ti,ij,tj->t", s, Q, s)
        b = eval_b_batch(oracle, X, z)
        worst_b = max(worst_b, float(np.max(np.abs(b - h) / (1.0 + np.abs(h)))))
        worst_res = max(worst_res, float(diag.grad_norm.max()))
        zc = 2.0 * s @ Q
        worst_z = max(worst_z, float(np.max(np.linalg.norm(z - zc, axis=-1) / (1.0 + np.linalg.norm(zc, axis=-1)))))
    rep.add(f"max relative error of b vs h(sum x) ({3 * samples} tuples)", 0.0, worst_b, 1e-9)
    rep.add("max stationarity residual at zbar", 0.0, worst_res, 1e-10, "le")
    rep.add("max relative |zbar - 2 Q sum x|", 0.0, worst_z, 1e-9)
    return rep


def run_all(seed=0, samples=1000):
    return [repro_quadratic_identity(samples, seed), repro_symmetry_obstruction(seed=seed),
            repro_condition_III_failure(), repro_heinich(seed=seed)]
