"""Finite atomic measures, file I/O, random instances and pushforwards."""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MeasureFormatError, ValidationError
from .settings import SolverSettings

log = logging.getLogger(__name__)

MERGE_TOL = 1e-9
MASS_TOL = 1e-12
JITTER = 1e-7        # generic-position nudge, relative to the box diameter


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms in R^n.  Zero-weight atoms are dropped on construction.

    ``rescale`` records the factor applied to the raw weights when the
    measure was normalised on load (1.0 otherwise).
    """

    points: np.ndarray
    weights: np.ndarray
    rescale: float = 1.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if pts.ndim == 1:
            pts = pts.reshape(len(w), -1) if len(w) else pts.reshape(0, 1)
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise ValidationError(f"points {pts.shape} and weights {w.shape} do not match")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValidationError("NaN or infinite entry in measure")
        if np.any(w < 0):
            raise ValidationError("negative weight")
        keep = w > 0
        pts, w = pts[keep], w[keep]
        if w.size == 0:
            raise ValidationError("empty marginal")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValidationError(f"weights sum to {w.sum():.17g}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, points, weights):
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValidationError("nonpositive total mass")
        return cls(points, w / total, rescale=1.0 / total)

    @classmethod
    def dirac(cls, point):
        return cls(np.atleast_2d(np.asarray(point, float)), [1.0])

    @classmethod
    def uniform(cls, points):
        pts = np.atleast_2d(np.asarray(points, float))
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def atoms(self):
        return self.points, self.weights

    def sorted(self):
        """Same measure with atoms in lexicographic coordinate order."""
        order = np.lexsort(self.points.T[::-1])
        return DiscreteMeasure(self.points[order], self.weights[order], self.rescale)

    def to_dict(self):
        return {"dim": self.dim,
                "atoms": [{"x": p.tolist(), "w": float(w)} for p, w in zip(self.points, self.weights)]}

    @classmethod
    def from_dict(cls, d):
        try:
            atoms = d["atoms"]
            pts = [a["x"] for a in atoms]
            w = [a["w"] for a in atoms]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed measure manifest: {exc}") from None
        dim = d.get("dim")
        for row, (x, wt) in enumerate(zip(pts, w), start=1):
            _check_row([*x, wt], dim if dim is not None else len(x), row)
        return _normalized_checked(np.array(pts, float).reshape(len(pts), -1), np.array(w, float))


def _check_row(vals, dim, row):
    if len(vals) != dim + 1:
        raise MeasureFormatError(f"expected {dim} coordinates and a weight, got {len(vals)} fields", row)
    try:
        vals = [float(v) for v in vals]
    except (TypeError, ValueError):
        raise MeasureFormatError("malformed row", row) from None
    if any(math.isnan(v) for v in vals):
        raise MeasureFormatError("NaN entry", row)
    if any(math.isinf(v) for v in vals):
        raise MeasureFormatError("infinite entry", row)
    if vals[-1] <= 0:
        raise MeasureFormatError("nonpositive weight", row)
    return vals


def _normalized_checked(pts, w):
    total = w.sum()
    if not total > 0:
        raise ValidationError("nonpositive total mass")
    mu = DiscreteMeasure.normalized(pts, w)
    if mu.rescale != 1.0:
        log.info("measure weights rescaled by %.17g", mu.rescale)
    return mu


def load_measure(path, format=None):
    """Read a measure from CSV (rows: n coordinates then weight) or a JSON manifest.

    Weights are rescaled to sum to one; the factor is kept in ``rescale``.
    Row numbers in error messages are 1-based.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    format = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if format == "json":
        with open(path) as fh:
            try:
                return DiscreteMeasure.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON in {path}: {exc}") from None
    if format != "csv":
        raise ValidationError(f"unknown measure format {format!r}")

    rows = []
    dim = None
    with open(path, newline="") as fh:
        for row, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if dim is None:
                if len(fields) < 2:
                    raise MeasureFormatError("need at least one coordinate and a weight", row)
                dim = len(fields) - 1
            elif len(fields) - 1 != dim:
                raise MeasureFormatError(f"inconsistent dimension {len(fields) - 1} (expected {dim})", row)
            rows.append(_check_row([f.strip() for f in fields], dim, row))
    if not rows:
        raise ValidationError("empty marginal")
    arr = np.array(rows)
    return _normalized_checked(arr[:, :-1], arr[:, -1])


def save_measure(measure, path, format=None):
    path = Path(path)
    format = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if format == "json":
        path.write_text(json.dumps(measure.to_dict(), indent=1))
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for p, wt in zip(measure.points, measure.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])


def merge_atoms(points, weights, tol=MERGE_TOL):
    """Collapse atoms closer than ``tol``; merged location is the mass-weighted mean."""
    points = np.asarray(points, float)
    weights = np.asarray(weights, float)
    reps, members = [], []
    for k, p in enumerate(points):
        for c, r in enumerate(reps):
            if np.max(np.abs(p - r)) <= tol:
                members[c].append(k)
                break
        else:
            reps.append(p)
            members.append([k])
    out_p = np.array([np.average(points[g], axis=0, weights=weights[g]) for g in members])
    out_w = np.array([weights[g].sum() for g in members])
    labels = np.empty(len(points), int)
    for c, g in enumerate(members):
        labels[g] = c
    return out_p, out_w, labels


def pushforward(measure_like, fn, tol=MERGE_TOL):
    """Image of a measure (or a coupling, through its support tuples) under ``fn``.

    For a coupling ``fn`` receives the stacked tuple of shape (m, n).
    Images within ``tol`` are merged; total mass is preserved.
    """
    pts, w = measure_like.atoms()
    images = []
    for k, p in enumerate(pts):
        try:
            images.append(np.atleast_1d(np.asarray(fn(p), dtype=float)))
        except Exception as exc:
            raise ValidationError(f"map failed at support point {k}: {exc}") from exc
    out_p, out_w, _ = merge_atoms(np.array(images), w, tol)
    total = out_w.sum()
    if abs(total - 1.0) > MASS_TOL:
        raise ValidationError(f"pushforward mass {total} is not 1")
    return DiscreteMeasure(out_p, out_w)


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for a seeded random problem.  ``oracle`` names a builtin family."""

    m: int
    n: int
    atoms: int
    box: tuple = (0.0, 1.0)
    weights: str = "uniform"     # "uniform" | "random"
    seed: int = 0
    oracle: str = "quadratic"

    def __post_init__(self):
        if self.atoms < 1:
            raise ValidationError("empty marginal")
        if self.m < 2:
            raise ValidationError("need m >= 2 marginals")
        if self.n < 1:
            raise ValidationError("dimension must be >= 1")
        lo, hi = self.box
        if not hi > lo:
            raise ValidationError("box must be nonempty")
        if self.weights not in ("uniform", "random"):
            raise ValidationError(f"unknown weight scheme {self.weights!r}")

    def to_dict(self):
        return {"m": self.m, "n": self.n, "atoms": self.atoms, "box": list(self.box),
                "weights": self.weights, "seed": self.seed, "oracle": self.oracle}


@dataclass
class Problem:
    marginals: list
    oracle: object
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if len(self.marginals) < 2:
            raise ValidationError("need m >= 2 marginals")
        dims = {mu.dim for mu in self.marginals}
        if len(dims) != 1:
            raise ValidationError(f"marginals disagree on dimension: {sorted(dims)}")
        if self.oracle.arity != len(self.marginals):
            raise ValidationError(f"oracle arity {self.oracle.arity} != {len(self.marginals)} marginals")
        if self.oracle.dim != self.dim:
            raise ValidationError("oracle and marginals disagree on dimension")

    @property
    def m(self):
        return len(self.marginals)

    @property
    def dim(self):
        return self.marginals[0].dim

    @property
    def sizes(self):
        return tuple(len(mu) for mu in self.marginals)

    def tuple_points(self, idx):
        """Coordinates (T, m, n) of the index tuples ``idx`` (T, m)."""
        idx = np.asarray(idx, int)
        return np.stack([self.marginals[i].points[idx[:, i]] for i in range(self.m)], axis=1)


def generate_instance(spec, oracle=None, settings=None):
    """Seeded random problem.  Identical specs give identical problems."""
    from .surplus import SurplusOracle

    rng = np.random.default_rng(spec.seed)
    lo, hi = map(float, spec.box)
    diam = (hi - lo) * math.sqrt(spec.n)
    marginals = []
    for _ in range(spec.m):
        pts = rng.uniform(lo, hi, size=(spec.atoms, spec.n))
        pts = pts + JITTER * diam * rng.standard_normal(pts.shape)
        if spec.weights == "uniform":
            w = np.full(spec.atoms, 1.0 / spec.atoms)
        else:
            w = rng.uniform(0.5, 1.5, size=spec.atoms)
            w = w / w.sum()
        marginals.append(DiscreteMeasure(pts, w))
    if oracle is None:
        oracle = SurplusOracle.builtin(spec.oracle, spec.m, spec.n)
    return Problem(marginals, oracle, settings or SolverSettings())
