"""Command-line entry point: ``fairpart <subcommand> ...``.

Every run is driven by one JSON config file. Leaves can be overridden from
the environment (``FAIRPART_SOLVER__ITERATIONS=1000`` sets
``solver.iterations``; ``__`` separates levels) and then from the command line
(``--set solver.iterations=1000``). Override values are parsed as JSON when
possible and kept as strings otherwise.

Config layout::

    {
      "seed": 0,
      "population": {"csv": "sites.csv"}                       # or
      "population": {"mixture": {"bounds": [[0, 1], [0, 1]],
                                 "priors": [0.5, 0.5],
                                 "groups": [{"uniform": true},
                                            {"weights": [1], "means": [[0.3, 0.3]],
                                             "covs": [[[0.01, 0], [0, 0.01]]]}]}},
      "facilities": "facilities.csv",
      "cost": {"kind": "euclidean" | "squared_euclidean" | "matrix", "matrix": "costs.csv"},
      "solver": {"mode": "optimal_p", "p": null, "iterations": 100000,
                 "step_scale": null, "eval_samples": 100000, "tail_fraction": null,
                 "trace_samples": 20000},
      "output": "out"
    }

Relative paths are resolved against the config file's directory.

Exit codes
----------
0 success; 1 unexpected internal error; 2 configuration or usage error;
3 data error (parse failures, unknown sites, dimension mismatches, missing
input files); 4 the solver diverged; 5 an oracle check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import oracle as orc
from .costmodel import CostModel, load_cost_matrix, load_facilities
from .errors import ConfigError, DataError, FairPartError, Infeasible, NonFinite
from .partition import PartitionHandle, assign_all_sites, rasterize
from .population import GroupMixture, TruncatedGaussianMixture, UniformBox, load_population
from .report import FairnessReport, compare, evaluate, export_cdf
from .solver import SolverConfig, WeightMatrix, load_weights, run, save_weights, write_trace

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_ORACLE = 0, 1, 2, 3, 4, 5
ENV_PREFIX = "FAIRPART_"
SOLVER_KEYS = {"mode", "p", "iterations", "step_scale", "eval_samples", "tail_fraction",
               "trace_samples", "trace_every"}
ORACLE_REL_TOL = 1e-3
WEAK_DUALITY_TOL = 1e-9


# -- config ----------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(cfg, dotted, value):
    """Set ``cfg[a][b][c] = value`` for ``dotted = "a.b.c"``, creating levels."""
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"bad override path {dotted!r}")
    node = cfg
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = value


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = []
    for name in sorted(environ):
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            path = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out.append((path, _parse_value(environ[name])))
    return out


def load_config(path, overrides=(), environ=None):
    """Read a JSON config and apply environment then ``--set`` overrides."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for dotted, value in env_overrides(environ):
        set_path(cfg, dotted, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects path=value, got {item!r}")
        dotted, text = item.split("=", 1)
        set_path(cfg, dotted.strip(), _parse_value(text))
    cfg["_base"] = str(path.resolve().parent)
    return cfg


def _resolve(cfg, rel):
    p = Path(rel)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def _read_file(fn, *args):
    try:
        return fn(*args)
    except FileNotFoundError as exc:
        raise DataError(f"missing input file: {exc.filename}") from None


def _mixture(spec):
    try:
        bounds = np.asarray(spec["bounds"], dtype=float)
        dens = []
        for g in spec["groups"]:
            if g.get("uniform"):
                dens.append(UniformBox(bounds))
            else:
                covs = g.get("covs")
                if covs is None:
                    covs = [np.eye(bounds.shape[0]) * s**2 for s in g["sd"]]
                dens.append(TruncatedGaussianMixture(g["weights"], g["means"], covs, bounds))
        return GroupMixture(np.asarray(spec["priors"], dtype=float), dens, bounds)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"population.mixture: missing or malformed field ({exc})") from None
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"population.mixture: {exc}") from None


def build_population(cfg):
    spec = cfg.get("population")
    if not isinstance(spec, dict):
        raise ConfigError("population: required object")
    sources = [k for k in ("csv", "mixture") if spec.get(k) is not None]
    if len(sources) != 1:
        raise ConfigError("population: give exactly one of 'csv' or 'mixture'")
    if sources[0] == "csv":
        return _read_file(load_population, _resolve(cfg, spec["csv"]), spec.get("groups"))
    return _mixture(spec["mixture"])


def build_cost(cfg, pop):
    if "facilities" not in cfg:
        raise ConfigError("facilities: required path")
    fac = _read_file(load_facilities, _resolve(cfg, cfg["facilities"]))
    spec = cfg.get("cost", {})
    kind = spec.get("kind", "euclidean") if isinstance(spec, dict) else spec
    if kind == "matrix":
        if not pop.is_discrete:
            raise ConfigError("cost.kind: matrix costs require a CSV population")
        if not spec.get("matrix"):
            raise ConfigError("cost.matrix: required path for matrix costs")
        model = _read_file(load_cost_matrix, _resolve(cfg, spec["matrix"]), fac)
    elif kind in ("euclidean", "squared_euclidean"):
        model = CostModel(kind, fac)
    else:
        raise ConfigError(f"cost.kind: unknown value {kind!r}")
    model.check_population(pop)
    return model


def build_solver_config(cfg, K):
    spec = dict(cfg.get("solver") or {})
    unknown = set(spec) - SOLVER_KEYS
    if unknown:
        raise ConfigError(f"solver: unknown field(s) {sorted(unknown)}")
    if spec.get("p") is not None:
        if spec.get("mode", "optimal_p") != "fixed_p":
            raise ConfigError("solver.p: only allowed with mode fixed_p")
        try:
            spec["p"] = np.asarray(spec["p"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("solver.p: must be a list of numbers") from None
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")
    sc = SolverConfig(seed=seed, **spec)
    try:
        sc.validate(K)
    except ConfigError as exc:
        raise ConfigError(f"solver.{exc}") from None
    return sc


def _output_dir(cfg, override=None):
    out = override or cfg.get("output")
    if not out:
        raise ConfigError("output: required directory")
    d = Path(out) if override else _resolve(cfg, out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _setup(args):
    cfg = load_config(args.config, args.set)
    pop = build_population(cfg)
    cost = build_cost(cfg, pop)
    return cfg, pop, cost


def _eval_seed(cfg):
    # Same stream the solver uses for its final estimates, so reports from
    # different models share their random numbers.
    return [int(cfg.get("seed", 0)), 2]


def _print_report(name, rep):
    print(f"{name}: masses " + " ".join(f"{m:.4f}" for m in rep.masses)
          + f"; max deviation {rep.max_deviation:.4g}")
    for z, g in enumerate(rep.group_stats, start=1):
        print(f"  group {z}: median {g['median']:.6g}  mean {g['mean']:.6g}  p90 {g['p90']:.6g}")
    closed = [k + 1 for k in rep.closed()]
    if closed:
        print(f"  closed facilities: {closed}")


def _write_report_set(out, stem, weights, pop, cost, n_samples, seed, cdf_dir=None):
    rep = evaluate(weights, pop, cost, n_samples, seed)
    rep.save(out / f"{stem}.json")
    if pop.is_discrete:
        assign_all_sites(PartitionHandle(weights, pop, cost)).to_csv(out / f"{stem}_assignments.csv")
    if cdf_dir is not None:
        export_cdf(rep, cdf_dir)
    return rep


# -- subcommands --------------------------------------------------------------

def cmd_solve(args):
    cfg, pop, cost = _setup(args)
    sc = build_solver_config(cfg, cost.K)
    out = _output_dir(cfg, args.output)
    res = run(sc, pop, cost)
    save_weights(out / "weights.json", res.weights, seed=sc.seed, iterations=sc.iterations,
                 alpha=res.alpha)
    write_trace(out / "trace.csv", res.trace)
    rep = _write_report_set(out, "report", res.weights, pop, cost, sc.eval_samples,
                            _eval_seed(cfg))
    print(f"dual estimate {res.dual_value_estimate:.6g} +/- {res.dual_stderr:.2g} "
          f"(alpha {res.alpha:.4g}, {sc.iterations} steps)")
    _print_report("solve", rep)
    return EXIT_OK


def cmd_baseline(args):
    cfg, pop, cost = _setup(args)
    sc = build_solver_config(cfg, cost.K)
    out = _output_dir(cfg, args.output)
    weights = WeightMatrix.zeros(cost.K, pop.priors)
    rep = _write_report_set(out, "baseline_report", weights, pop, cost, sc.eval_samples,
                            _eval_seed(cfg))
    _print_report("baseline", rep)
    return EXIT_OK


def _load_weights_for(path, pop, cost):
    weights, _ = _read_file(load_weights, path)
    if weights.K != cost.K or weights.M != pop.group_count:
        raise DataError(f"{path}: weights are {weights.K}x{weights.M}, "
                        f"instance needs {cost.K}x{pop.group_count}")
    return weights


def cmd_evaluate(args):
    cfg, pop, cost = _setup(args)
    sc = build_solver_config(cfg, cost.K)
    weights = _load_weights_for(args.weights, pop, cost)
    n = args.samples or sc.eval_samples
    rep = evaluate(weights, pop, cost, n, _eval_seed(cfg))
    out = Path(args.out) if args.out else _output_dir(cfg) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    rep.save(out)
    if args.cdf_dir:
        export_cdf(rep, args.cdf_dir)
    _print_report("evaluate", rep)
    return EXIT_OK


def _parse_resolution(text):
    try:
        parts = [int(t) for t in str(text).lower().split("x")]
    except ValueError:
        raise ConfigError(f"resolution: cannot parse {text!r}") from None
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return tuple(parts)
    raise ConfigError(f"resolution: cannot parse {text!r}")


def cmd_grid(args):
    cfg, pop, cost = _setup(args)
    weights = _load_weights_for(args.weights, pop, cost)
    raster = rasterize(PartitionHandle(weights, pop, cost), _parse_resolution(args.resolution))
    out = Path(args.out) if args.out else _output_dir(cfg) / "raster.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    raster.to_csv(out)
    shares = raster.area_shares(cost.K)
    print(f"raster {raster.nx}x{raster.ny}: area shares " + " ".join(f"{s:.4f}" for s in shares)
          + "; components " + " ".join(str(c) for c in raster.components(cost.K)))
    return EXIT_OK


def cmd_compare(args):
    named = []
    for item in args.reports:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        try:
            named.append((name, FairnessReport.load(path)))
        except FileNotFoundError:
            raise DataError(f"missing report file: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    if len(named) < 2:
        raise ConfigError("compare: need at least two reports")
    table = compare(named)
    if args.out:
        table.to_csv(args.out)
    base = named[0][0]
    for name, _ in named[1:]:
        print(f"price of fairness ({name} vs {base}): {table.price_of_fairness(name):+.6g} "
              f"mean cost")
    for r in table.rows:
        if r["stat"] in ("median", "p90"):
            vals = "  ".join(f"{v:.6g}" for v in r["values"])
            pct = "  ".join(f"{p:+.2f}%" for p in r["pct_change"])
            print(f"  group {r['group']:>3} {r['stat']:>6}: {vals}  ({pct})")
    return EXIT_OK


def bundled_instance(name):
    """Path of a bundled oracle instance directory, or None."""
    root = resources.files("fairpart") / "data" / "instances" / name
    return Path(str(root)) if root.is_dir() else None


def _check(results, name, ok, detail):
    results.append((name, bool(ok)))
    print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")


def oracle_checks(inst, weights=None, iterations=200_000, seed=0, samples=100_000):
    """Run the oracle verification suite; returns a list of ``(check, passed)``."""
    res = []
    lp = orc.lp_primal(inst)
    scale = max(abs(lp.objective), 1.0)
    print(f"LP optimum {lp.objective!r}; region sizes " + " ".join(f"{x:.6g}" for x in lp.p))
    _check(res, "lp_residuals", lp.max_residual <= 1e-8, f"max residual {lp.max_residual:.2e}")

    asc = orc.exact_ascent(inst, iterations=iterations)
    gap = lp.objective - asc.dual_value
    _check(res, "strong_duality", -WEAK_DUALITY_TOL <= gap <= ORACLE_REL_TOL * scale,
           f"gap {gap:.3e}, dual {asc.dual_value!r}")
    worst = min(lp.objective - h for _, h in asc.history) if asc.history else 0.0
    _check(res, "weak_duality", worst >= -WEAK_DUALITY_TOL,
           f"min gap over {len(asc.history)} checkpoints {worst:.3e}")

    w = asc.weights.w
    exact = orc.exact_gradient(asc.weights, inst)
    mean, se = orc.sampled_directions(w, inst, samples, [seed, 5])
    dev = np.abs(mean - exact)
    ok = np.all((dev <= 4 * se) | (dev <= 1e-12))
    z = float(np.max(np.where(se > 0, dev / np.where(se > 0, se, 1), 0.0)))
    _check(res, "gradient_unbiased", ok, f"max |z| {z:.2f} over {w.size} components")

    if weights is not None:
        if weights.K != inst.K or weights.M != inst.M:
            raise DataError(f"weights are {weights.K}x{weights.M}, instance is {inst.K}x{inst.M}")
        wgap = lp.objective - orc.exact_dual(weights, inst)
        _check(res, "weights_gap", -WEAK_DUALITY_TOL <= wgap <= ORACLE_REL_TOL * scale,
               f"gap {wgap:.3e}")
    return res


def cmd_oracle(args):
    d = Path(args.instance)
    if not d.is_dir():
        d = bundled_instance(args.instance)
        if d is None:
            raise ConfigError(f"instance directory not found: {args.instance}")
    inst, manifest = _read_file(orc.load_instance, d)
    try:
        inst.check_caps()
    except ConfigError as exc:
        raise ConfigError(f"instance exceeds oracle caps: {exc}") from None
    weights = None
    if args.weights:
        weights, _ = _read_file(load_weights, args.weights)
    elif manifest.get("weights"):
        weights, _ = _read_file(load_weights, d / manifest["weights"])
    results = oracle_checks(inst, weights, args.iterations, args.seed)
    failed = [n for n, ok in results if not ok]
    if failed:
        print(f"oracle: {len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_ORACLE
    print(f"oracle: all {len(results)} checks passed")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fairpart", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON run config")
        sp.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                        help="override a config leaf (repeatable)")
        return sp

    sp = with_config("solve", "run the fair partition solver")
    sp.add_argument("--output", help="output directory (overrides config)")
    sp.set_defaults(func=cmd_solve)

    sp = with_config("baseline", "nearest-facility (unweighted) report")
    sp.add_argument("--output", help="output directory (overrides config)")
    sp.set_defaults(func=cmd_baseline)

    sp = with_config("evaluate", "report for an existing weights file")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", help="report path (default <output>/report.json)")
    sp.add_argument("--cdf-dir", help="write per-group cost CDFs here")
    sp.set_defaults(func=cmd_evaluate)

    sp = with_config("grid", "rasterize the partition of a 2-D continuous population")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--resolution", required=True, help="N or NXxNY cells")
    sp.add_argument("--out", help="raster path (default <output>/raster.csv)")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("oracle", help="verify a small discrete instance exactly")
    sp.add_argument("instance", help="instance directory or bundled name (segregated2, single_group)")
    sp.add_argument("--weights", help="also check the duality gap of these weights")
    sp.add_argument("--iterations", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("compare", help="compare saved reports; the first is the baseline")
    sp.add_argument("reports", nargs="+", metavar="NAME=REPORT")
    sp.add_argument("--out", help="comparison CSV path")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFinite as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Infeasible as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (DataError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FairPartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
