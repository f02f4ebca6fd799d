"""Command-line front end.

    hedonic-ot <command> [--manifest PATH] [--out DIR] [--seed N]
                         [--entropic-eps EPS] [--pivot bland|dantzig]

Commands: solve-mk, solve-mam, verify-equivalence, check-surplus,
paper-repro, gen-instance.  A manifest file holding a JSON list runs each
entry in turn into its own subdirectory.  Every run writes a directory holding the
effective manifest (overrides applied, input files copied alongside),
settings, library versions, JSON reports, CSV plot series and
``run_log.json``.  Exit codes: 0 success, 2 invalid input, 3 solver
failure, 4 failed cross-check.
"""

import argparse
import copy
import csv
import importlib.metadata
import json
import logging
import platform
import shutil
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import HedonicOTError, SolverError, ToolkitDefect, ValidationError
from .matching import (MapNotInvertible, compose_G, extract_monge_maps, mam_objective, solve_mam_fixed_point,
                       solve_mam_via_mk, verify_equivalence)
from .measures import DiscreteMeasure, InstanceSpec, Problem, generate_instance, load_measure
from .mmot import _jsonable, graph_check, solve_mk_entropic, solve_mk_exact, spacelike_diagnostic, \
    swap_monotonicity_check
from .repro import run_all
from .settings import NewtonSettings, SolverSettings
from .surplus import SampleSpec, SurplusOracle, check_conditions

log = logging.getLogger("hedonic_ot")

COMMANDS = ("solve-mk", "solve-mam", "verify-equivalence", "check-surplus", "paper-repro", "gen-instance")
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

_box = {"type": "array", "minItems": 2, "maxItems": 2,
        "items": {"anyOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}}
_measure = {"oneOf": [
    {"type": "object", "required": ["path"], "additionalProperties": False,
     "properties": {"path": {"type": "string"}, "format": {"enum": ["csv", "json"]}}},
    {"type": "object", "required": ["atoms"],
     "properties": {"dim": {"type": "integer", "minimum": 1}, "atoms": {"type": "array"}}},
]}

MANIFEST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "marginals": {"type": "array", "minItems": 2, "items": _measure},
        "instance": {
            "type": "object", "required": ["m", "n", "atoms"], "additionalProperties": False,
            "properties": {"m": {"type": "integer"}, "n": {"type": "integer"}, "atoms": {"type": "integer"},
                           "box": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
                           "weights": {"enum": ["uniform", "random"]}, "seed": {"type": "integer", "minimum": 0},
                           "oracle": {"type": "string"}}},
        "oracle": {
            "type": "object",
            "properties": {"prefs": {"type": "array", "minItems": 2, "items": {"type": "object",
                                                                                "required": ["kind"]}},
                           "builtin": {"type": "string"}, "m": {"type": "integer", "minimum": 2},
                           "dim": {"type": "integer", "minimum": 1}, "params": {"type": "object"},
                           "z_box": _box, "newton": {"type": "object"}},
            "oneOf": [{"required": ["prefs"]}, {"required": ["builtin"]}]},
        "settings": {"type": "object"},
        "entropic_eps": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "mam": {"type": "object", "additionalProperties": False,
                "properties": {"init": {"enum": ["random", "exact"]},
                               "atoms": {"type": "integer", "minimum": 1},
                               "max_outer": {"type": "integer", "minimum": 1}}},
        "check": {"type": "object", "additionalProperties": False,
                  "properties": {"x_box": {"type": "array"}, "z_box": {"type": "array"},
                                 "n_samples": {"type": "integer", "minimum": 1},
                                 "n_pairs": {"type": "integer", "minimum": 1},
                                 "condition_iii": {"type": "array", "items": {
                                     "type": "object", "required": ["x1", "x2", "x3", "x1t", "x3t"]}}}},
        "repro": {"type": "object", "additionalProperties": False,
                  "properties": {"samples": {"type": "integer", "minimum": 1}}},
    },
}

_NEEDS_PROBLEM = {"solve-mk", "solve-mam", "verify-equivalence"}


# --------------------------------------------------------------------------
# manifest handling

def validate_manifest(manifest, command):
    try:
        jsonschema.validate(manifest, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"manifest invalid at {where}: {exc.message}") from None
    if manifest.get("command") not in (None, command):
        raise ValidationError(f"manifest is for {manifest['command']!r}, not {command!r}")
    if command in _NEEDS_PROBLEM and not ({"marginals", "instance"} & manifest.keys()):
        raise ValidationError(f"{command} needs 'marginals' or 'instance'")
    if "marginals" in manifest and "instance" in manifest:
        raise ValidationError("give either 'marginals' or 'instance', not both")
    if command == "gen-instance" and "instance" not in manifest:
        raise ValidationError("gen-instance needs an 'instance' block")
    if command == "check-surplus" and "oracle" not in manifest and "instance" not in manifest:
        raise ValidationError("check-surplus needs an 'oracle' block")


def read_manifest(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such manifest: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from None


def apply_overrides(manifest, seed=None, entropic_eps=None, pivot=None):
    """Fold CLI flags into a copy of the manifest; the result is what gets archived."""
    m = copy.deepcopy(manifest)
    if seed is not None:
        m["seed"] = seed
    m.setdefault("seed", 0)
    if entropic_eps is not None:
        m["entropic_eps"] = entropic_eps
    if pivot is not None:
        m.setdefault("settings", {})["pivot"] = pivot
    if "instance" in m:
        m["instance"].setdefault("seed", m["seed"])
    return m


def _load_marginals(items, base):
    out = []
    for k, item in enumerate(items):
        try:
            if "path" in item:
                p = Path(item["path"])
                out.append(load_measure(p if p.is_absolute() else base / p, item.get("format")))
            else:
                out.append(DiscreteMeasure.from_dict(item))
        except ValidationError as exc:
            raise type(exc)(f"marginal {k}: {exc}") from None
    return out


def build_oracle(spec, m, dim):
    spec = dict(spec)
    if "prefs" in spec:
        if spec.get("dim", dim) != dim:
            raise ValidationError("oracle dim disagrees with the marginals")
        return SurplusOracle.from_dict(spec, dim)
    params = dict(spec.get("params", {}))
    if "z_box" in spec:
        params["z_box"] = spec["z_box"]
    params["newton"] = NewtonSettings.from_dict(spec.get("newton"))
    if "Q" in params:
        params["Q"] = np.asarray(params["Q"], float)
    try:
        return SurplusOracle.builtin(spec["builtin"], spec.get("m", m), dim, **params)
    except TypeError as exc:
        raise ValidationError(f"bad oracle parameters: {exc}") from None


def build_problem(manifest, base):
    settings = SolverSettings.from_dict(manifest.get("settings"))
    if "instance" in manifest:
        ispec = InstanceSpec(**{**manifest["instance"], "box": tuple(manifest["instance"].get("box", (0.0, 1.0)))})
        oracle = None
        if "oracle" in manifest:
            oracle = build_oracle(manifest["oracle"], ispec.m, ispec.n)
        return generate_instance(ispec, oracle, settings)
    marginals = _load_marginals(manifest["marginals"], base)
    oracle_spec = manifest.get("oracle", {"builtin": "quadratic"})
    oracle = build_oracle(oracle_spec, len(marginals), marginals[0].dim)
    return Problem(marginals, oracle, settings)


# --------------------------------------------------------------------------
# artifacts

def _write_json(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True, allow_nan=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def emit_plot_data(out, coupling=None, nu=None, maps=None, G_maps=None, trace=None):
    """Write CSV series for an external plotter and return their paths.

    coupling_support.csv  one row per support tuple: coordinates of each agent then mass
    nu_atoms.csv          contract atoms and weights
    map_arrows.csv        one row per arrow of F_i (contract -> type) and G_i (type 1 -> type i)
    fixed_point_trace.csv outer iteration and matching objective
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if coupling is not None:
        X = coupling.tuple_points()
        m, n = X.shape[1], X.shape[2]
        header = [f"x{i + 1}_{a + 1}" for i in range(m) for a in range(n)] + ["mass"]
        rows = [list(X[t].reshape(-1)) + [coupling.mass[t]] for t in range(len(coupling))]
        written.append(_write_csv(out / "coupling_support.csv", header, rows))
    if nu is not None:
        if len(nu) == 0:
            raise ToolkitDefect("contract measure has no atoms")
        header = [f"z_{a + 1}" for a in range(nu.dim)] + ["weight"]
        written.append(_write_csv(out / "nu_atoms.csv", header,
                                  [list(p) + [w] for p, w in zip(nu.points, nu.weights)]))
    if maps is not None:
        n = maps[0].domain.dim
        header = ["map", "atom"] + [f"from_{a + 1}" for a in range(n)] + [f"to_{a + 1}" for a in range(n)] + ["share"]
        rows = []
        for name, group, first in (("F", maps, 1), ("G", G_maps or [], 2)):
            for i, F in enumerate(group, start=first):
                for k, (a, b, s) in enumerate(zip(F.domain.points, F.images, F.share)):
                    rows.append([f"{name}{i}", k] + list(a) + list(b) + [s])
        written.append(_write_csv(out / "map_arrows.csv", header, rows))
    if trace is not None:
        written.append(_write_csv(out / "fixed_point_trace.csv", ["iteration", "objective"],
                                  [[k, float(v)] for k, v in enumerate(trace)]))
    return written


def _versions():
    return {"hedonic_ot": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "jsonschema": importlib.metadata.version("jsonschema"), "platform": platform.platform()}


def _archive_manifest(manifest, base, out):
    """Copy referenced input files next to the archived manifest so the directory stands alone."""
    m = copy.deepcopy(manifest)
    if "marginals" in m:
        inputs = out / "inputs"
        for k, item in enumerate(m["marginals"]):
            if "path" in item:
                src = Path(item["path"])
                src = src if src.is_absolute() else base / src
                if not src.is_file():
                    raise ValidationError(f"marginal {k}: no such file: {src}")
                inputs.mkdir(exist_ok=True)
                dst = inputs / f"marginal_{k}{src.suffix}"
                shutil.copyfile(src, dst)
                item["path"] = str(dst.relative_to(out))
    m.pop("out", None)
    _write_json(out / "manifest.json", m)


class _Collector(logging.Handler):
    def __init__(self):
        super().__init__(logging.INFO)
        self.records = []

    def emit(self, record):
        self.records.append({"level": record.levelname, "logger": record.name, "message": record.getMessage()})


# --------------------------------------------------------------------------
# commands

def _diagnostics(coupling, oracle):
    return {"graph_check": graph_check(coupling).to_dict(),
            "swap_monotonicity": swap_monotonicity_check(coupling, oracle).to_dict(),
            "spacelike": spacelike_diagnostic(coupling, oracle).to_dict()}


def cmd_solve_mk(manifest, base, out):
    problem = build_problem(manifest, base)
    gamma = solve_mk_exact(problem)
    report = {"exact": {"coupling": gamma.to_dict(), "marginal_violation": gamma.max_marginal_violation(),
                        **_diagnostics(gamma, problem.oracle)}}
    eps = manifest.get("entropic_eps")
    if eps is not None:
        ent = solve_mk_entropic(problem, eps=eps)
        report["entropic"] = {"coupling": ent.to_dict(), "marginal_violation": ent.max_marginal_violation(),
                              "gap_to_exact": gamma.objective - ent.meta["unregularized_objective"]}
    _write_json(out / "solve_mk.json", report)
    emit_plot_data(out, coupling=gamma)
    return EXIT_OK, {"objective": gamma.objective, "support": len(gamma)}


def _initial_contracts(problem, manifest):
    cfg = manifest.get("mam", {})
    if cfg.get("init", "random") == "exact":
        return solve_mam_via_mk(problem)[0]
    rng = np.random.default_rng(manifest["seed"])
    pts = np.concatenate([mu.points for mu in problem.marginals])
    k = cfg.get("atoms", max(problem.sizes))
    Z = rng.uniform(pts.min(axis=0), pts.max(axis=0), size=(k, problem.dim))
    return DiscreteMeasure.uniform(Z)


def _maps_block(nu, problem, plans):
    maps, sorted_plans = extract_monge_maps(nu, problem, plans)
    G, note = None, ""
    if all(F.valid for F in maps):
        try:
            G = compose_G(maps)
        except MapNotInvertible as exc:
            note = str(exc)
    else:
        note = "some F_i splits mass, so G_i is not defined"
    return maps, G, {"F": [F.to_dict() for F in maps], "G": [g.to_dict() for g in G] if G else None,
                     "G_note": note, "plans": [p.to_dict() for p in sorted_plans]}


def cmd_solve_mam(manifest, base, out):
    problem = build_problem(manifest, base)
    nu, gamma = solve_mam_via_mk(problem)
    value, plans = mam_objective(nu, problem, return_plans=True)
    maps, G, block = _maps_block(nu, problem, plans)
    fp = solve_mam_fixed_point(problem, _initial_contracts(problem, manifest),
                               max_outer=manifest.get("mam", {}).get("max_outer", 50))
    excess = fp.value - value
    if excess > 1e-9 * (1.0 + abs(value)):
        raise ToolkitDefect(f"fixed point exceeds the exact matching value by {excess:.3e}")
    report = {"via_mk": {"nu": nu.to_dict(), "value": value, "mk_value": gamma.objective, **block},
              "fixed_point": {**fp.to_dict(), "value": fp.value, "gap_to_exact": value - fp.value}}
    _write_json(out / "solve_mam.json", report)
    emit_plot_data(out, coupling=gamma, nu=nu, maps=maps, G_maps=G, trace=fp.trace)
    return EXIT_OK, {"value": value, "fixed_point_value": fp.value}


def cmd_verify_equivalence(manifest, base, out):
    problem = build_problem(manifest, base)
    rep = verify_equivalence(problem)
    _write_json(out / "equivalence.json", rep.to_dict())
    return (EXIT_OK if rep.passed else EXIT_CHECK), {"passed": rep.passed, "gap": rep.gap}


def _surplus_oracle(manifest, base):
    spec = manifest.get("oracle")
    if spec is None or {"marginals", "instance"} & manifest.keys():
        return build_problem(manifest, base).oracle
    dim, m = spec.get("dim"), spec.get("m", len(spec.get("prefs", [])))
    if dim is None or not m:
        raise ValidationError("oracle block needs 'dim' (and 'm' for builtins) when no marginals are given")
    return build_oracle(spec, m, dim)


def cmd_check_surplus(manifest, base, out):
    oracle = _surplus_oracle(manifest, base)
    chk = dict(manifest.get("check", {}))
    for key in ("x_box", "z_box"):
        if key in chk:
            chk[key] = tuple(chk[key])
    cond = [{k: np.asarray(v, float) for k, v in c.items()} for c in chk.pop("condition_iii", [])]
    rep = check_conditions(oracle, SampleSpec(seed=manifest["seed"], condition_iii=cond, **chk))
    _write_json(out / "conditions.json", rep.to_dict())
    return EXIT_OK, {"passed": rep.passed}


def cmd_repro(manifest, base, out):
    reports = run_all(seed=manifest["seed"], **manifest.get("repro", {}))
    _write_json(out / "repro.json", [r.to_dict() for r in reports])
    for r in reports:
        print(r.table())
    ok = all(r.passed for r in reports)
    return (EXIT_OK if ok else EXIT_CHECK), {"passed": ok, "cases": [r.case for r in reports]}


def cmd_gen_instance(manifest, base, out):
    problem = build_problem(manifest, base)
    inst = manifest["instance"]
    written = {"seed": manifest["seed"], "marginals": [mu.to_dict() for mu in problem.marginals],
               "oracle": manifest.get("oracle", problem.oracle.to_dict())}
    if "settings" in manifest:
        written["settings"] = manifest["settings"]
    _write_json(out / "instance.json", written)
    return EXIT_OK, {"m": inst["m"], "n": inst["n"], "atoms": inst["atoms"]}


HANDLERS = {"solve-mk": cmd_solve_mk, "solve-mam": cmd_solve_mam, "verify-equivalence": cmd_verify_equivalence,
            "check-surplus": cmd_check_surplus, "paper-repro": cmd_repro, "gen-instance": cmd_gen_instance}


def _error_entry(exc):
    return _jsonable({"type": type(exc).__name__, "message": str(exc), "witness": getattr(exc, "witness", None)})


def run(command, manifest_path=None, out=None, seed=None, entropic_eps=None, pivot=None, manifest=None, base=None):
    """Execute one command and return its exit code.  Artifacts land in ``out``.

    ``manifest`` (a dict) and ``base`` (directory for relative paths) bypass
    reading ``manifest_path``; batch runs use them.
    """
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    started = time.time()
    collector = _Collector()
    log.addHandler(collector)
    out_dir = Path(out) if out else None
    code, summary, error = EXIT_OK, {}, None
    try:
        if manifest is not None:
            raw = manifest
            base = Path(base) if base else Path.cwd()
        else:
            base = Path(manifest_path).resolve().parent if manifest_path else Path.cwd()
            raw = read_manifest(manifest_path) if manifest_path else {}
        if not isinstance(raw, dict):
            raise ValidationError("manifest must be a JSON object")
        manifest = apply_overrides(raw, seed, entropic_eps, pivot)
        validate_manifest(manifest, command)
        out_dir = Path(out or manifest.get("out") or f"run-{command}")
        if not out_dir.is_absolute() and not out and "out" in manifest:
            out_dir = base / out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest["command"] = command
        _archive_manifest(manifest, base, out_dir)
        settings = SolverSettings.from_dict(manifest.get("settings"))
        _write_json(out_dir / "settings.json", {"solver": settings.to_dict(),
                                                "newton": NewtonSettings.from_dict(
                                                    manifest.get("oracle", {}).get("newton")).to_dict(),
                                                "seed": manifest["seed"]})
        _write_json(out_dir / "versions.json", _versions())
        code, summary = HANDLERS[command](manifest, base, out_dir)
    except ValidationError as exc:
        code, error = EXIT_INVALID, _error_entry(exc)
    except SolverError as exc:
        code, error = EXIT_SOLVER, _error_entry(exc)
    except (ToolkitDefect, AssertionError) as exc:
        code, error = EXIT_CHECK, _error_entry(exc)
    except HedonicOTError as exc:
        code, error = EXIT_SOLVER, _error_entry(exc)
    finally:
        log.removeHandler(collector)
    if error:
        print(f"error: {error['message']}", file=sys.stderr)
    if out_dir is None:
        out_dir = Path(f"run-{command}")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "run_log.json", {
        "command": command, "exit_code": code, "status": "ok" if code == EXIT_OK else "failed",
        "summary": summary, "error": error, "log": collector.records,
        "elapsed_s": round(time.time() - started, 6)})
    return code


def run_batch(command, manifest_path, out=None, **flags):
    """Run every manifest of a JSON list in turn, each into ``out/run_<k>``.

    Returns the largest exit code, so any failure shows.  Runs are isolated:
    each gets its own directory, log and archived manifest.
    """
    items = read_manifest(manifest_path)
    base = Path(manifest_path).resolve().parent
    out = Path(out or f"batch-{command}")
    out.mkdir(parents=True, exist_ok=True)
    codes = []
    for k, item in enumerate(items):
        codes.append(run(command, out=out / f"run_{k:03d}", manifest=item, base=base, **flags))
    _write_json(out / "batch_summary.json", {"command": command, "exit_codes": codes,
                                             "failed": [k for k, c in enumerate(codes) if c != EXIT_OK]})
    return max(codes, default=EXIT_OK)


def _is_batch(manifest_path):
    try:
        return isinstance(read_manifest(manifest_path), list)
    except ValidationError:
        return False


def build_parser():
    p = argparse.ArgumentParser(prog="hedonic-ot", description="Multi-marginal transport and matching toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--manifest", help="JSON run manifest")
    p.add_argument("--out", help="output directory (default: manifest 'out' or ./run-<command>)")
    p.add_argument("--seed", type=int, help="overrides the manifest seed")
    p.add_argument("--entropic-eps", type=float, help="also run the entropic solver at this epsilon")
    p.add_argument("--pivot", choices=("bland", "dantzig"), help="simplex pivot rule")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    if args.entropic_eps is not None and not args.entropic_eps > 0:
        print("error: --entropic-eps must be positive", file=sys.stderr)
        return EXIT_INVALID
    flags = {"seed": args.seed, "entropic_eps": args.entropic_eps, "pivot": args.pivot}
    if args.manifest and _is_batch(args.manifest):
        return run_batch(args.command, args.manifest, args.out, **flags)
    return run(args.command, args.manifest, args.out, **flags)


if __name__ == "__main__":
    sys.exit(main())
