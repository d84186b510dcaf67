"""Command line driver: check-weights, solve, verify, report.

Configuration is an INI file whose sections mirror the blocks below; every
key has a default except the problem exponents, the domain and the weights.
Run ``wplap --defaults`` for the annotated reference.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ParameterError, SolverError, WplapError
from .functional import EnergyModel, ProblemParams, geometry_constants
from .grid import build_grid, save_field
from .solver import SolverConfig, seed_field, solve, write_log
from .verify import fibering_scan, oracle_suite, poincare_check, sphere_bound_check
from .weights import dyadic_family, parse_weight, validate_exponents, weight_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WEIGHTS = 3
EXIT_SOLVER = 4
EXIT_VERIFY = 5

# (section, key, default, description); default None means required
REFERENCE = [
    ("problem", "p", None, "gradient exponent, 1 < p < n + m"),
    ("problem", "q", None, "convex exponent, p < q < p*"),
    ("problem", "gamma", None, "concave exponent, 1 < gamma < p"),
    ("problem", "mu", None, "concave coefficient, mu >= 0"),
    ("problem", "n", None, "dimension of the degenerate variable x"),
    ("problem", "m", None, "dimension of y"),
    ("problem", "v_multiple_of_omega", "false", "v = a * omega (sharper q ranges apply)"),
    ("problem", "a", "1.0", "factor a when v_multiple_of_omega is true"),
    ("domain", "bounds", None, "n + m intervals 'lo hi', comma separated"),
    ("domain", "counts", None, "nodes per axis (>= 3), comma separated"),
    ("weights", "omega", None, "constant:c | power:a | product:a1,a2,... | tabulated:path"),
    ("weights", "v", "", "same syntax; ignored when v_multiple_of_omega is true"),
    ("weights", "resolution", "64", "quadrature cells per axis for ball integrals"),
    ("weights", "centers_per_axis", "32", "centre lattice of the ball family"),
    ("weights", "steps", "16", "radius ladder length (ratio sqrt 2)"),
    ("weights", "compact_steps", "40", "ladder length for the compactness profile"),
    ("weights", "probe_count", "16", "probe positions for the A_infinity fit"),
    ("weights", "fraction", "0.1", "compactness: smallest-radius bound below fraction * largest"),
    ("geometry", "R", "", "ball radius (default: box circumradius)"),
    ("geometry", "x0", "", "ball centre in R^n (default: box centre)"),
    ("geometry", "C0", "1.0", "embedding constant factor"),
    ("solver", "max_iter", "500", "projected-gradient iteration cap"),
    ("solver", "gtol", "1e-9", "projected-gradient tolerance (dual norm)"),
    ("solver", "armijo_c", "1e-4", "Armijo slope fraction"),
    ("solver", "backtrack", "0.5", "Armijo backtrack factor"),
    ("solver", "path_nodes", "16", "mountain-pass path nodes P"),
    ("solver", "path_step", "1.0", "largest path deformation step"),
    ("solver", "path_tol", "1e-3", "relative residual that ends path deformation"),
    ("solver", "polish", "40", "Newton polish iterations (0 disables)"),
    ("solver", "residual_tol", "1e-6", "weak-form residual accepted for both solutions"),
    ("verify", "samples", "100", "random test functions per check"),
    ("verify", "levels", "2", "grid doublings in the embedding check"),
    ("verify", "stability", "0.2", "allowed relative change of the empirical C0"),
    ("verify", "t_min", "1e-6", "smallest t of the fibering scan"),
    ("verify", "t_max", "1e3", "largest t of the fibering scan"),
    ("verify", "t_points", "200", "log-spaced points of the fibering scan"),
    ("verify", "tolerance", "1e-12", "scan versus closed-form polynomial"),
    ("verify", "oracles", "false", "also run the brute-force oracle suite"),
    ("output", "dir", "out", "output directory"),
    ("output", "seed", "0", "random seed for solver tests and verification"),
]


def defaults_reference():
    """Annotated INI text listing every key with its default."""
    lines = ["# wplap configuration reference (generated)", ""]
    section = None
    for sec, key, default, doc in REFERENCE:
        if sec != section:
            if section is not None:
                lines.append("")
            lines.append(f"[{sec}]")
            section = sec
        lines.append(f"# {doc}")
        lines.append(f"{key} = {'<required>' if default is None else default}")
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentConfig:
    params: ProblemParams
    verdict: object
    grid: object
    omega: object
    v: object
    weights: dict
    R: float | None
    x0: list | None
    C0: float
    solver: SolverConfig
    residual_tol: float
    verify: dict
    out: Path
    seed: int
    threads: int = 1
    v_multiple: bool = False
    source: dict = field(default_factory=dict)


def _line_of(text, section, key):
    sec = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip().lower()
        elif sec == section and "=" in s and s.split("=", 1)[0].strip().lower() == key.lower():
            return i
    return None


def _read(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {}
    for sec, key, default, _ in REFERENCE:
        known.setdefault(sec, {})[key.lower()] = default
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in known[sec]:
                raise ConfigError(f"{path}:{_line_of(text, sec, key)}: unknown key '{key}' "
                                  f"in [{sec}]")
    values = {}
    for sec, key, default, _ in REFERENCE:
        k = key.lower()
        if cp.has_option(sec, k):
            values[(sec, key)] = (cp.get(sec, k).strip(), _line_of(text, sec, k))
        elif default is None:
            raise ConfigError(f"{path}: missing required key '{key}' in [{sec}]")
        else:
            values[(sec, key)] = (default, None)
    return path, values


class _Getter:
    def __init__(self, path, values):
        self.path = path
        self.values = values

    def raw(self, sec, key):
        return self.values[(sec, key)][0]

    def _fail(self, sec, key, why):
        line = self.values[(sec, key)][1]
        where = f"{self.path}:{line}" if line else str(self.path)
        raise ConfigError(f"{where}: [{sec}] {key}: {why}")

    def get(self, sec, key, conv):
        text = self.raw(sec, key)
        try:
            return conv(text)
        except (ValueError, TypeError) as exc:
            self._fail(sec, key, f"cannot parse {text!r} ({exc})")

    def boolean(self, sec, key):
        text = self.raw(sec, key).lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        self._fail(sec, key, f"expected a boolean, got {text!r}")

    def floats(self, sec, key):
        return self.get(sec, key, lambda s: [float(x) for x in s.replace(",", " ").split()])


def _int(s):
    f = float(s)
    if f != int(f):
        raise ValueError("not an integer")
    return int(f)


def load_config(path, out=None, seed=None, threads=1):
    """Parse and validate a configuration file (first error wins)."""
    path, values = _read(path)
    g = _Getter(path, values)
    n = g.get("problem", "n", _int)
    m = g.get("problem", "m", _int)
    p = g.get("problem", "p", float)
    q = g.get("problem", "q", float)
    gamma = g.get("problem", "gamma", float)
    mu = g.get("problem", "mu", float)
    multiple = g.boolean("problem", "v_multiple_of_omega")
    a = g.get("problem", "a", float)
    try:
        verdict = validate_exponents(p, q, gamma, mu, n, m, multiple)
        hard = [v for v in verdict.violations if not v.startswith("mu:")]
        if hard:
            raise ParameterError("; ".join(hard))
        params = ProblemParams(p, q, gamma, mu, n, m, validated=verdict.valid)
    except ParameterError as exc:
        raise ConfigError(f"{path}: [problem] exponents rejected: {exc}") from None

    pairs = [s.split() for s in g.raw("domain", "bounds").split(",")]
    try:
        bounds = [(float(lo), float(hi)) for lo, hi in pairs]
    except ValueError:
        g._fail("domain", "bounds", "expected comma-separated 'lo hi' pairs")
    counts = g.get("domain", "counts", lambda s: [_int(x) for x in s.replace(",", " ").split()])
    grid = build_grid(n, m, bounds, counts)

    omega = g.get("weights", "omega", lambda s: parse_weight(s, n))
    if multiple:
        v = omega.scaled(a)
    else:
        if not g.raw("weights", "v"):
            g._fail("weights", "v", "required unless v_multiple_of_omega is true")
        v = g.get("weights", "v", lambda s: parse_weight(s, n))
    wopts = {k: g.get("weights", k, _int) for k in
             ("resolution", "centers_per_axis", "steps", "compact_steps", "probe_count")}
    wopts["fraction"] = g.get("weights", "fraction", float)

    R = g.get("geometry", "R", float) if g.raw("geometry", "R") else None
    x0 = g.floats("geometry", "x0") if g.raw("geometry", "x0") else None
    if x0 is not None and len(x0) != n:
        g._fail("geometry", "x0", f"need {n} coordinates")
    C0 = g.get("geometry", "C0", float)

    seed_val = g.get("output", "seed", _int) if seed is None else int(seed)
    try:
        solver = SolverConfig(
            max_iter=g.get("solver", "max_iter", _int), gtol=g.get("solver", "gtol", float),
            armijo_c=g.get("solver", "armijo_c", float),
            backtrack=g.get("solver", "backtrack", float),
            path_nodes=g.get("solver", "path_nodes", _int),
            path_step=g.get("solver", "path_step", float),
            path_tol=g.get("solver", "path_tol", float),
            polish=g.get("solver", "polish", _int), seed=seed_val)
    except ValueError as exc:
        raise ConfigError(f"{path}: [solver] {exc}") from None
    verify = {
        "samples": g.get("verify", "samples", _int),
        "levels": g.get("verify", "levels", _int),
        "stability": g.get("verify", "stability", float),
        "t_min": g.get("verify", "t_min", float),
        "t_max": g.get("verify", "t_max", float),
        "t_points": g.get("verify", "t_points", _int),
        "tolerance": g.get("verify", "tolerance", float),
        "oracles": g.boolean("verify", "oracles"),
    }
    outdir = Path(out) if out is not None else Path(g.raw("output", "dir"))
    source = {f"{s}.{k}": v[0] for (s, k), v in values.items()}
    return ExperimentConfig(params, verdict, grid, omega, v, wopts, R, x0, C0, solver,
                            g.get("solver", "residual_tol", float), verify, outdir,
                            seed_val, threads, multiple, source)


# ---------------------------------------------------------------------------
# output helpers


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _metadata(cfg, verb):
    meta_path = cfg.out / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    meta[verb] = {"time": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                  "version": __version__, "argv": sys.argv[1:]}
    _dump(meta_path, meta)


def _geometry_kwargs(cfg):
    return {"R": cfg.R, "x0": cfg.x0, "C0": cfg.C0}


# ---------------------------------------------------------------------------
# verbs


def cmd_check_weights(cfg):
    P = cfg.params
    w = cfg.weights
    centre = np.array([(a + b) / 2 for a, b in cfg.grid.bounds])[:P.n]
    x0 = centre if cfg.x0 is None else np.array(cfg.x0)
    R = cfg.R if cfg.R is not None else float(
        np.linalg.norm([(b - a) / 2 for a, b in cfg.grid.bounds[:P.n]]))
    fam = dyadic_family(x0, R, w["centers_per_axis"], w["steps"])
    compact = dyadic_family(x0, R, w["centers_per_axis"], w["compact_steps"])
    rep = weight_report(cfg.omega, cfg.v, P.p, P.q, P.gamma, P.mu, P.n, P.m, fam, compact,
                        resolution=w["resolution"], probe_count=w["probe_count"],
                        fraction=w["fraction"], threads=cfg.threads,
                        v_is_multiple_of_omega=cfg.v_multiple)
    out = rep.to_json()
    out["omega"] = cfg.omega.describe()
    out["v"] = cfg.v.describe()
    _dump(cfg.out / "weights.json", out)
    return EXIT_OK if rep.passed else EXIT_WEIGHTS


def cmd_solve(cfg):
    res = solve(cfg.grid, cfg.omega, cfg.v, cfg.params, cfg.solver,
                residual_tol=cfg.residual_tol, **_geometry_kwargs(cfg))
    cfg.out.mkdir(parents=True, exist_ok=True)
    if res.u0 is not None:
        save_field(cfg.out / "u0.csv", res.u0)
    if res.u1 is not None:
        save_field(cfg.out / "u1.csv", res.u1)
    write_log(cfg.out / "iterations.csv", res.min_log)
    write_log(cfg.out / "path_log.csv", res.path_log)
    summary = res.to_json()
    summary["params"] = {"p": cfg.params.p, "q": cfg.params.q, "gamma": cfg.params.gamma,
                         "mu": cfg.params.mu, "n": cfg.params.n, "m": cfg.params.m}
    summary["exponents"] = cfg.verdict.to_json()
    _dump(cfg.out / "summary.json", summary)
    return EXIT_OK if res.success else EXIT_SOLVER


def cmd_verify(cfg):
    P = cfg.params
    V = cfg.verify
    model = EnergyModel(cfg.grid, cfg.omega, cfg.v, P)
    geo = geometry_constants(cfg.grid, cfg.omega, cfg.v, P, **_geometry_kwargs(cfg))
    emb = poincare_check(cfg.omega, cfg.v, P, cfg.grid.bounds, cfg.grid.counts, cfg.R,
                         cfg.x0, V["samples"], cfg.seed, V["levels"])
    if V["levels"] > 1:
        a, b = emb.trend[-2]["max_ratio"], emb.trend[-1]["max_ratio"]
        emb.stable = a is not None and b is not None and abs(b / a - 1) < V["stability"]
    ts = np.geomspace(V["t_min"], V["t_max"], V["t_points"])
    seed = seed_field(model, geo.mp_radius)
    fib = fibering_scan(seed, model, ts, geo.mp_radius)
    cfg.out.mkdir(parents=True, exist_ok=True)
    fib.to_csv(cfg.out / "fibering.csv")
    c0 = emb.max_ratio if math.isfinite(emb.max_ratio) and emb.max_ratio > 0 else None
    sph = sphere_bound_check(model, geo, V["samples"], cfg.seed, C0=c0)
    checks = {
        "embedding_finite": math.isfinite(emb.max_ratio),
        "embedding_stable": bool(emb.stable) if emb.stable is not None else True,
        "fibering_polynomial": fib.max_rel_error <= V["tolerance"],
        "fibering_structure": fib.structure()["three_bands"],
        "sphere_bound": sph.violating is None,
    }
    out = {"embedding": emb.to_json(), "fibering": fib.to_json(),
           "sphere_bound": sph.to_json(), "geometry": geo.to_json()}
    if V["oracles"]:
        rows = oracle_suite()
        out["oracles"] = [r.to_json() for r in rows]
        checks["oracles"] = all(r.passed for r in rows)
    out["checks"] = checks
    out["passed"] = all(checks.values())
    _dump(cfg.out / "inequalities.json", out)
    return EXIT_OK if out["passed"] else EXIT_VERIFY


def cmd_report(run_dir):
    """Merge the JSON outputs found in ``run_dir`` into report.json and CSV tables."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    parts = {}
    for name in ("weights", "summary", "inequalities"):
        f = run_dir / f"{name}.json"
        if f.is_file():
            parts[name] = json.loads(f.read_text())
    if not parts:
        raise ConfigError(f"no weights.json, summary.json or inequalities.json in {run_dir}")
    rows = []
    for stage, key in (("weights", None), ("summary", "checks"), ("inequalities", "checks")):
        if stage not in parts:
            continue
        if key is None:
            rows.append((stage, "passed", bool(parts[stage].get("passed"))))
        else:
            rows.extend((stage, k, bool(v)) for k, v in sorted(parts[stage].get(key, {}).items()))
    with open(run_dir / "checks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "check", "passed"])
        w.writerows(rows)
    if "summary" in parts:
        with open(run_dir / "energies.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["solution", "I1", "I2", "I3", "I", "residual", "norm_E"])
            for sol in ("u1", "u0"):
                blk = parts["summary"].get(sol, {})
                e = blk.get("energy") or {}
                w.writerow([sol] + [e.get(k) for k in ("I1", "I2", "I3", "I")]
                           + [blk.get("residual"), blk.get("norm_E")])
    report = {"stages": parts, "passed": all(ok for _, _, ok in rows)}
    _dump(run_dir / "report.json", report)
    return EXIT_OK if report["passed"] else max(
        [EXIT_WEIGHTS if s == "weights" else EXIT_SOLVER if s == "summary" else EXIT_VERIFY
         for s, _, ok in rows if not ok])


VERBS = {"check-weights": cmd_check_weights, "solve": cmd_solve, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="wplap", description=__doc__.splitlines()[0])
    ap.add_argument("--defaults", action="store_true",
                    help="print the annotated configuration reference and exit")
    ap.add_argument("--version", action="version", version=f"wplap {__version__}")
    sub = ap.add_subparsers(dest="verb")
    for verb in ("check-weights", "solve", "verify", "report"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=verb != "report", help="INI configuration file")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--seed", type=int, help="random seed (overrides [output] seed)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for quadrature")
        if verb == "report":
            sp.add_argument("run_dir", nargs="?", help="directory with previous outputs")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.defaults:
        sys.stdout.write(defaults_reference())
        return EXIT_OK
    if args.verb is None:
        ap.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        if args.verb == "report":
            run_dir = args.run_dir or args.out
            if run_dir is None and args.config:
                run_dir = load_config(args.config, args.out, args.seed, args.threads).out
            if run_dir is None:
                raise ConfigError("report needs a run directory, --out or --config")
            return cmd_report(run_dir)
        cfg = load_config(args.config, args.out, args.seed, args.threads)
        code = VERBS[args.verb](cfg)
        _metadata(cfg, args.verb)
        return code
    except ConfigError as exc:
        print(f"wplap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"wplap: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except WplapError as exc:
        print(f"wplap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
