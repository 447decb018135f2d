"""JSON run configurations and bundled presets.

A configuration is one JSON document::

    {
      "name": "bilinear_zero_sum",
      "params": {"a": 2.0},
      "grid": {"lower": [-3], "upper": [3], "cells": [128]},
      "species": [
        {"name": "rho1", "initial": {"type": "gaussian", "mean": [1.2], "cov": 0.09}},
        {"name": "h1", "dirac": [0.5, -0.2]}
      ],
      "energies": [[{"type": "potential", "V": {"name": "quadratic", "k": 1}}, ...], ...],
      "simulation": {"T": 3.0, "record_dt": 0.05},
      "diagnostics": {...}
    }

Numeric fields may be strings of the form ``"$expr"``; ``expr`` is an
arithmetic expression over the names in ``params`` (for instance
``"$b / 2"``).  Parameter overrides given on the command line replace
entries of ``params`` before substitution.
"""

from __future__ import annotations

import ast
import copy
import json
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import (AllocationModel, AllocationWeight, BilinearCoupling, CrossInteraction, Diffusion,
                     EnergySpec, KL, Potential, SelfInteraction)
from .errors import ConfigurationError
from .grid import DensityField, GridSpec, build_grid, gaussian_density
from .kernels import make_pair_kernel, make_potential
from .state import SystemState

SIMULATION_DEFAULTS = {
    "T": 1.0,
    "dt_max": None,
    "cfl_safety": 0.4,
    "record_dt": None,
    "order": 1,
    "boundary_warn": 1e-6,
    "boundary_error": 1e-3,
    "max_support": 1024,
}

DIAGNOSTIC_DEFAULTS = {
    "nash": False,
    "normalize_F": None,
    "fits": [],
    "contraction": None,
    "snapshots": False,
    "plots": ["D"],
}

ESTIMATE_DEFAULTS = {"sampler": "gaussian", "pairs": 100, "seed": 0, "claimed_lambda": None,
                     "point_scale": 1.0, "max_support": 1024}


# ---------------------------------------------------------------------------
# parameter substitution

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_expr(expr: str, params: dict, where: str):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in params:
                raise ConfigurationError(f"{where}: unknown parameter {node.id!r}")
            return params[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigurationError(f"{where}: unsupported expression {expr!r}")

    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError:
        raise ConfigurationError(f"{where}: cannot parse expression {expr!r}") from None
    return ev(tree)


def substitute(obj, params: dict, where: str = "config"):
    """Replace ``"$expr"`` strings inside ``obj`` by their values."""
    if isinstance(obj, dict):
        return {k: v if k in ("params", "sweep") else substitute(v, params, f"{where}.{k}")
                for k, v in obj.items()}
    if isinstance(obj, list):
        return [substitute(v, params, f"{where}[{k}]") for k, v in enumerate(obj)]
    if isinstance(obj, str) and obj.startswith("$"):
        return _eval_expr(obj[1:], params, where)
    return obj


# ---------------------------------------------------------------------------
# loading

PRESET_PACKAGE = "monoflow.presets"


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(PRESET_PACKAGE).iterdir() if p.name.endswith(".json"))


def read_document(source) -> dict:
    """Read a config from a dict, a file path or a bundled preset name."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    path = Path(source)
    if path.is_file():
        text, label = path.read_text(), str(path)
    else:
        name = str(source).removeprefix("preset:")
        res = resources.files(PRESET_PACKAGE) / f"{name}.json"
        if not res.is_file():
            raise ConfigurationError(f"{source}: no such file or preset (presets: {', '.join(preset_names())})")
        text, label = res.read_text(), f"preset {name}"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{label}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{label}: top level must be an object")
    return doc


def parse_overrides(items) -> dict:
    """``["b=75", "c=0.5"]`` -> ``{"b": 75.0, "c": 0.5}`` (JSON values accepted)."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"parameter override {item!r} is not of the form name=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigurationError(f"{where}: missing field {key!r}")
    return d[key]


def _kwargs(d: dict, skip=("name",)):
    return {k: v for k, v in d.items() if k not in skip}


# ---------------------------------------------------------------------------
# building blocks

def _cov(cov, dim):
    c = np.asarray(cov, dtype=float)
    if c.ndim == 0:
        return c * np.eye(dim)
    if c.ndim == 1:
        return np.diag(c)
    return c


def make_initial(grid, ic: dict, where: str) -> DensityField:
    kind = _need(ic, "type", where)
    if kind == "gaussian":
        return gaussian_density(grid, _need(ic, "mean", where), _cov(_need(ic, "cov", where), grid.dim))
    if kind == "uniform":
        lo = np.asarray(ic.get("lower", grid.spec.lower), dtype=float)
        hi = np.asarray(ic.get("upper", grid.spec.upper), dtype=float)
        inside = np.all((grid.points >= lo) & (grid.points <= hi), axis=1).reshape(grid.shape)
        if not inside.any():
            raise ConfigurationError(f"{where}: uniform box contains no cell centre")
        vals = inside / (inside.sum() * grid.vol)
        return DensityField(grid, vals)
    if kind == "mixture":
        comps = _need(ic, "components", where)
        vals = np.zeros(grid.shape)
        total = 0.0
        for k, c in enumerate(comps):
            w = float(c.get("weight", 1.0))
            vals += w * make_initial(grid, c, f"{where}.components[{k}]").values
            total += w
        return DensityField(grid, vals / total)
    raise ConfigurationError(f"{where}: unknown initial condition type {kind!r}")


def _gaussian_log(mean, cov):
    mean = np.asarray(mean, dtype=float)
    P = np.linalg.inv(_cov(cov, mean.size))

    def logf(X):
        Z = X - mean
        return -0.5 * np.einsum("ki,ij,kj->k", Z, P, Z)

    return logf


class _Builder:
    def __init__(self, doc: dict):
        self.doc = doc
        self.allocation = None

    def weight(self, w, where):
        if isinstance(w, dict):
            pair = _need(w, "allocation", where)
            if self.allocation is None:
                raise ConfigurationError(f"{where}: allocation weight used without an 'allocation' block")
            return AllocationWeight(self.allocation, int(pair[0]), int(pair[1]))
        return float(w)

    def term(self, t: dict, where: str):
        kind = _need(t, "type", where)
        on = t.get("on")
        coef = float(t.get("coef", 1.0))
        try:
            if kind == "potential":
                V = _need(t, "V", where)
                return Potential(make_potential(_need(V, "name", where + ".V"), **_kwargs(V)), on=on, coef=coef)
            if kind == "cross":
                W = _need(t, "W", where)
                return CrossInteraction(int(_need(t, "j", where)),
                                        make_pair_kernel(_need(W, "name", where + ".W"), **_kwargs(W)),
                                        self.weight(t.get("weight", 1.0), where), on=on, coef=coef)
            if kind == "self":
                W = _need(t, "W", where)
                return SelfInteraction(make_potential(_need(W, "name", where + ".W"), **_kwargs(W)), on=on, coef=coef)
            if kind == "diffusion":
                return Diffusion(float(t.get("m", 1.0)), float(t.get("alpha", 1.0)), on=on, coef=coef)
            if kind == "bilinear":
                A = _need(t, "A", where)
                if isinstance(A, dict):
                    A = float(A.get("scale", 1.0)) * np.eye(int(_need(A, "identity", where + ".A")))
                return BilinearCoupling(int(_need(t, "j", where)), np.asarray(A, dtype=float),
                                        float(t.get("sign", 1.0)), on=on, coef=coef)
            if kind == "kl":
                ref = _need(t, "reference", where)
                if _need(ref, "type", where + ".reference") != "gaussian":
                    raise ConfigurationError(f"{where}: KL reference must be a gaussian")
                return KL(_gaussian_log(_need(ref, "mean", where), _need(ref, "cov", where)),
                          float(t.get("alpha", 1.0)), on=on, coef=coef)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{where}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{where}: {exc}") from None
        raise ConfigurationError(f"{where}: unknown term type {kind!r}")


@dataclass
class RunConfig:
    """A resolved run: energies, initial state and all settings actually used."""

    name: str
    params: dict
    spec: EnergySpec
    initial: SystemState
    simulation: dict
    diagnostics: dict
    estimate: dict
    resolved: dict
    seed: int = 0
    allocation: AllocationModel | None = None
    sweep: dict | None = None
    layouts: list = field(default_factory=list)
    lift: object = None

    def state_from(self, ics: list) -> SystemState:
        """Build another initial state on the same grids from a list of species entries."""
        return _initial_state(self.resolved["species"] if not ics else _merge_species(self.resolved["species"], ics),
                              self.resolved)


def _merge_species(base, ics):
    if len(ics) != len(base):
        raise ConfigurationError("contraction initial list must have one entry per species")
    out = []
    for b, ic in zip(base, ics):
        b = dict(b)
        if "dirac" in b:
            b["dirac"] = ic["dirac"] if isinstance(ic, dict) else ic
        else:
            b["initial"] = ic
        out.append(b)
    return out


def _species_grid(sp, doc, where):
    g = sp.get("grid", doc.get("grid"))
    if g is None:
        raise ConfigurationError(f"{where}: grid species without a grid")
    try:
        return build_grid(GridSpec(len(g["cells"]), tuple(g["lower"]), tuple(g["upper"]), tuple(g["cells"])))
    except KeyError as exc:
        raise ConfigurationError(f"{where}.grid: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigurationError(f"{where}.grid: {exc}") from None


def _initial_state(species, doc) -> SystemState:
    out = []
    for k, sp in enumerate(species):
        where = f"species[{k}]"
        if "dirac" in sp:
            out.append(np.asarray(sp["dirac"], dtype=float))
        else:
            out.append(make_initial(_species_grid(sp, doc, where), _need(sp, "initial", where), where + ".initial"))
    return SystemState(0.0, out)


def load_config(source, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a configuration.

    Parameters
    ----------
    source : dict, path or preset name
    overrides : dict, optional
        Replacements for entries of ``params``.

    Raises
    ------
    ConfigurationError
        With the offending field path in the message.
    """
    raw = read_document(source)
    params = dict(raw.get("params", {}))
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ConfigurationError(f"override {k!r} is not a parameter of this config (known: {sorted(params)})")
        params[k] = v
    doc = substitute(raw, params)
    doc["params"] = params
    name = doc.get("name", "run")
    species = _need(doc, "species", "config")
    lift = _lift(doc["lift"], species) if "lift" in doc else None
    if lift is not None and "energies" not in doc:
        initial = _initial_state(species, doc)
        return RunConfig(name, params, None, initial, dict(SIMULATION_DEFAULTS), dict(DIAGNOSTIC_DEFAULTS),
                         dict(ESTIMATE_DEFAULTS, **doc.get("estimate", {})), doc, int(doc.get("seed", 0)),
                         layouts=_layouts(initial), lift=lift)
    energies = _need(doc, "energies", "config")
    if len(energies) != len(species):
        raise ConfigurationError(f"config: {len(species)} species but {len(energies)} energies")
    initial = _initial_state(species, doc)
    dirac = [k for k, sp in enumerate(species) if "dirac" in sp]

    builder = _Builder(doc)
    alloc = None
    if "allocation" in doc:
        a = doc["allocation"]
        where = "allocation"
        utils = [[make_pair_kernel(_need(u, "name", where), **_kwargs(u)) for u in row]
                 for row in _need(a, "utilities", where)]
        alloc = AllocationModel(_need(a, "populations", where), _need(a, "providers", where), utils,
                                float(_need(a, "eta", where)))
        builder.allocation = alloc

    terms = [[builder.term(t, f"energies[{i}][{k}]") for k, t in enumerate(ts)] for i, ts in enumerate(energies)]
    names = [sp.get("name", f"species{k + 1}") for k, sp in enumerate(species)]
    spec = EnergySpec(terms, dirac_species=dirac, names=names, meta={"name": name})
    spec.check_state(initial)

    sim = dict(SIMULATION_DEFAULTS, **doc.get("simulation", {}))
    unknown = set(sim) - set(SIMULATION_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"simulation: unknown fields {sorted(unknown)}")
    if not float(sim["T"]) > 0:
        raise ConfigurationError("simulation.T must be positive")
    if sim["order"] not in (1, 2):
        raise ConfigurationError("simulation.order must be 1 or 2")
    diag = dict(DIAGNOSTIC_DEFAULTS, **doc.get("diagnostics", {}))
    est = dict(ESTIMATE_DEFAULTS, **doc.get("estimate", {}))
    doc["simulation"], doc["diagnostics"], doc["estimate"] = sim, diag, est
    seed = int(doc.get("seed", 0))
    doc["seed"] = seed

    return RunConfig(name, params, spec, initial, sim, diag, est, doc, seed, alloc, doc.get("sweep"),
                     _layouts(initial), lift)


def _layouts(initial):
    from .monotone import layouts_from_state
    return layouts_from_state(initial)


def _lift(block, species):
    """``{"matrix": M | "identity", "dims": [...]}`` -> lifted oracle of ``u(x) = M x``."""
    from .monotone import lift_finite_dimensional
    dims = [int(d) for d in _need(block, "dims", "lift")]
    if len(dims) != len(species):
        raise ConfigurationError("lift.dims must list one dimension per species")
    M = block.get("matrix", "identity")
    total = sum(dims)
    M = np.eye(total) if M == "identity" else np.asarray(M, dtype=float)
    if M.shape != (total, total):
        raise ConfigurationError(f"lift.matrix must be {total} x {total}")
    return lift_finite_dimensional(lambda Z: Z @ M.T, dims)


def sweep_overrides(doc_or_cfg) -> list[dict]:
    """Override sets for a ``sweep`` block ``{"param": name, "values": [...]}`` (one empty set otherwise)."""
    sw = doc_or_cfg.get("sweep") if isinstance(doc_or_cfg, dict) else doc_or_cfg.sweep
    if not sw:
        return [{}]
    return [{sw["param"]: v} for v in sw["values"]]
