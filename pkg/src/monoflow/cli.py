"""Command-line interface.

``monoflow simulate CONFIG`` runs a configuration or bundled preset,
``monoflow estimate-lambda CONFIG`` samples the monotonicity ratio and
``monoflow tools ...`` exposes the small calculators.  Exit codes: 0 on
success, 2 for configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import load_config, parse_overrides, preset_names, read_document, sweep_overrides
from .errors import ConfigurationError, MonoflowError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("monoflow")


def _setup_logging():
    level = os.environ.get("MONOFLOW_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _emit(args, payload: dict, line: str):
    if args.json:
        print(json.dumps(payload, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o)))
    else:
        print(line)


# ---------------------------------------------------------------------------
# simulate

def _run_one(source, overrides, outdir):
    from .run import execute, write_outputs

    cfg = load_config(source, overrides)
    traj, summary = execute(cfg)
    write_outputs(cfg, traj, summary, outdir)
    return summary


def _summary_line(s: dict) -> str:
    parts = [f"{s['name']}", f"D {s['D_initial']:.4g} -> {s['D_final']:.4g}"]
    for f in s.get("fits", []):
        parts.append(f"rate[{f['series']}] = {f['rate']:.4g}")
    for name, v in s.get("allocation", {}).items():
        parts.append(f"{name} {v['initial']:.3f} -> {v['final']:.3f}")
    parts.append(f"{s['runtime_s']:.1f}s")
    return ", ".join(parts)


def cmd_simulate(args) -> int:
    base = parse_overrides(args.param)
    doc = read_document(args.config)
    sets = [{}] if args.no_sweep else sweep_overrides(doc)
    out = Path(args.out or f"runs/{doc.get('name', 'run')}")
    jobs = []
    for extra in sets:
        ov = dict(base, **extra)
        tag = "_".join(f"{k}={v}" for k, v in extra.items())
        jobs.append((ov, out / tag if tag else out))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_run_one, args.config, ov, d) for ov, d in jobs]
            summaries = [f.result() for f in futs]
    else:
        summaries = [_run_one(args.config, ov, d) for ov, d in jobs]
    for s, (_, d) in zip(summaries, jobs):
        _emit(args, {"outdir": str(d), **s}, f"{_summary_line(s)}  [{d}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate-lambda

def make_config_sampler(cfg, kind: str | None = None):
    from .monotone import SAMPLERS, DiracPairSampler

    kind = kind or cfg.estimate["sampler"]
    if kind not in SAMPLERS:
        raise ConfigurationError(f"unknown sampler {kind!r}; known: {sorted(SAMPLERS)}")
    scale = float(cfg.estimate.get("point_scale", 1.0))
    if kind == "dirac":
        if cfg.spec is not None and cfg.spec.has_diffusion():
            raise ConfigurationError("Dirac pairs are not admissible for systems with diffusion or KL terms")
        return DiracPairSampler([lay.dim for lay in cfg.layouts], scale)
    if not any(lay.is_grid for lay in cfg.layouts):
        raise ConfigurationError(f"sampler {kind!r} needs grid species")
    return SAMPLERS[kind](cfg.layouts, point_scale=scale)


def estimate_from_config(cfg, pairs=None, seed=None, sampler=None):
    from .monotone import estimate_lambda

    est = cfg.estimate
    system = cfg.lift if cfg.lift is not None else cfg.spec
    return estimate_lambda(system, make_config_sampler(cfg, sampler), int(pairs or est["pairs"]),
                           int(est["seed"] if seed is None else seed), claimed_lambda=est.get("claimed_lambda"),
                           max_support=int(est.get("max_support", 1024)))


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.param))
    rep = estimate_from_config(cfg, args.pairs, args.seed, args.sampler)
    if args.out:
        Path(args.out).write_text(rep.to_json(indent=2))
    line = f"λ̂ = {rep.lambda_hat:.10g} over {rep.num_pairs} pairs"
    if rep.violation:
        line += f" (violation: below claimed λ = {rep.claimed_lambda:g})"
    if rep.caveat:
        line += f" [{rep.caveat}]"
    _emit(args, rep.to_dict(), line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# tools

def _json_arg(text, what):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{what}: not valid JSON ({exc.msg})") from None


def _measure(points, weights, what):
    from .transport import DiscreteMeasure

    P = np.asarray(_json_arg(points, what), dtype=float)
    if P.ndim == 1:
        P = P[:, None] if weights is not None and len(_json_arg(weights, what)) == P.size else P[None, :]
    if P.ndim != 2:
        raise ConfigurationError(f"{what}: expected a list of points")
    w = np.full(P.shape[0], 1.0 / P.shape[0]) if weights is None else np.asarray(_json_arg(weights, what), float)
    try:
        return DiscreteMeasure(P, w)
    except ValueError as exc:
        raise ConfigurationError(f"{what}: {exc}") from None


def cmd_w2(args) -> int:
    from .transport import w2_exact

    mu = _measure(args.mu, args.mu_weights, "mu")
    nu = _measure(args.nu, args.nu_weights, "nu")
    if mu.dim != nu.dim:
        raise ConfigurationError("mu and nu live in different dimensions")
    w, plan = w2_exact(mu, nu)
    rows, cols = np.nonzero(plan.dense() > 0)
    _emit(args, {"w2": w, "plan": [[int(r), int(c), float(plan.dense()[r, c])] for r, c in zip(rows, cols)]},
          f"{w:.12g}")
    return EXIT_OK


def cmd_lambda_matrix(args) -> int:
    from .monotone import LambdaMatrix, lambda_matrix_bound

    c = [float(x) for x in args.c]
    alpha = _json_arg(args.alpha, "alpha")
    try:
        lm = LambdaMatrix(c, alpha)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    val = lambda_matrix_bound(lm)
    _emit(args, {"lambda": val, "matrix": lm.matrix().tolist()}, f"{val:.12g}")
    return EXIT_OK


KERNEL_ARGS = {"quadratic": ["k"], "power": ["k"], "power_law": ["a", "b"], "morse": ["Cr", "lr", "Ca", "la"]}


def cmd_kernel_bound(args) -> int:
    from .monotone import kernel_hessian_bound

    names = KERNEL_ARGS.get(args.kernel)
    if names is None:
        raise ConfigurationError(f"unsupported kernel {args.kernel!r}; known: {sorted(KERNEL_ARGS)}")
    if len(args.values) > len(names):
        raise ConfigurationError(f"{args.kernel} takes at most {len(names)} parameters ({', '.join(names)})")
    params = {n: float(v) for n, v in zip(names, args.values)}
    val = kernel_hessian_bound(args.kernel, radius_max=args.radius_max, samples=args.samples, dim=args.dim,
                               **params)
    _emit(args, {"kernel": args.kernel, "params": params, "lambda": val}, f"{val:.12g}")
    return EXIT_OK


def cmd_presets(args) -> int:
    names = preset_names()
    _emit(args, {"presets": names}, "\n".join(names))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p = argparse.ArgumentParser(prog="monoflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a configuration or preset")
    s.add_argument("config", help="JSON file or preset name")
    s.add_argument("--out", help="output directory (default runs/<name>)")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
    s.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a config parameter")
    s.add_argument("--no-sweep", action="store_true", help="ignore the config's sweep block")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate-lambda", parents=[common], help="sample the monotonicity ratio")
    e.add_argument("config")
    e.add_argument("--pairs", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--sampler", choices=["dirac", "gaussian", "mixture"])
    e.add_argument("--param", action="append", metavar="NAME=VALUE")
    e.add_argument("--out", help="write the report JSON here")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("tools", help="small calculators")
    tsub = t.add_subparsers(dest="tool", required=True)
    w = tsub.add_parser("w2", parents=[common], help="exact W2 between two point clouds")
    w.add_argument("mu", help="JSON list of points, e.g. '[[0,0]]'")
    w.add_argument("nu")
    w.add_argument("--mu-weights")
    w.add_argument("--nu-weights")
    w.set_defaults(func=cmd_w2)
    lm = tsub.add_parser("lambda-matrix", parents=[common], help="coupling-matrix monotonicity bound")
    lm.add_argument("--c", nargs="+", required=True, help="diagonal convexity constants")
    lm.add_argument("--alpha", default="0", help="JSON matrix or scalar of Lipschitz constants")
    lm.set_defaults(func=cmd_lambda_matrix)
    kb = tsub.add_parser("kernel-bound", parents=[common], help="Hessian lower bound of a radial kernel")
    kb.add_argument("kernel", help="quadratic | power | power_law | morse")
    kb.add_argument("values", nargs="*", type=float, help="kernel parameters in constructor order")
    kb.add_argument("--radius-max", type=float, default=10.0)
    kb.add_argument("--samples", type=int, default=100_001)
    kb.add_argument("--dim", type=int, default=2)
    kb.set_defaults(func=cmd_kernel_bound)

    pr = sub.add_parser("presets", parents=[common], help="list bundled presets")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"monoflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MonoflowError as exc:
        print(f"monoflow: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
