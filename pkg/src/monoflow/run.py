"""Execute a :class:`RunConfig`: simulation, contraction harness, fits and outputs."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diagnostics import fit_rate, nash_residual
from .dynamics import Trajectory, simulate
from .errors import ConfigurationError
from .transport import joint_w2

log = logging.getLogger("monoflow")


def _observers(cfg: RunConfig) -> dict:
    obs = {}
    if cfg.allocation is not None:
        model = cfg.allocation
        for a, i in enumerate(model.populations):
            for b, j in enumerate(model.providers):
                obs[f"a_{a + 1}{b + 1}"] = (lambda s, a=a, b=b: model.weights(s)[a, b])
    if cfg.diagnostics.get("nash"):
        obs["nash"] = lambda s: nash_residual(cfg.spec, s)
    return obs


def _sim_kwargs(cfg: RunConfig) -> dict:
    s = cfg.simulation
    return {"cfl_safety": float(s["cfl_safety"]), "dt_max": s["dt_max"], "record_dt": s["record_dt"],
            "order": int(s["order"]), "boundary_warn": float(s["boundary_warn"]),
            "boundary_error": float(s["boundary_error"]), "max_support": int(s["max_support"])}


def _fit(traj: Trajectory, f: dict) -> dict:
    name = f["series"]
    if name not in traj.series:
        raise ConfigurationError(f"fit requested for unknown series {name!r}")
    t, y = traj.t, traj.column(name)
    lo, hi = f.get("window", (float(t[0]), float(t[-1])))
    floor = f.get("until_floor")
    if floor is not None:
        above = t[np.abs(y) > floor]
        if above.size:
            hi = min(hi, float(above.max()))
    res = fit_rate(t, y, (lo, hi), envelope=bool(f.get("envelope", False)))
    return {"series": name, **res.to_dict()}


def execute(cfg: RunConfig) -> tuple[Trajectory, dict]:
    """Run ``cfg`` and return the trajectory and a JSON-ready summary."""
    if cfg.spec is None:
        raise ConfigurationError(f"{cfg.name} defines no energies and cannot be simulated")
    clock = time.perf_counter()
    kw = _sim_kwargs(cfg)
    T = float(cfg.simulation["T"])
    traj = simulate(cfg.spec, cfg.initial, T, observers=_observers(cfg), **kw)
    summary = {"name": cfg.name, "params": cfg.params, "T": T}
    contraction = cfg.diagnostics.get("contraction")
    if contraction:
        other = simulate(cfg.spec, cfg.state_from(contraction["initial"]), T, **kw)
        if len(other.times) != len(traj.times) or not np.allclose(other.t, traj.t):
            raise ConfigurationError("contraction harness needs record_dt so both runs share record times")
        traj.series["w2_pair"] = [joint_w2(a, b, kw["max_support"]) for a, b in
                                  zip(traj.snapshots, other.snapshots)]
        traj.series["D_second"] = list(other.series["D"])
        summary["second_run"] = {k: v for k, v in other.meta.items()}
    k = cfg.diagnostics.get("normalize_F")
    if k is not None:
        F = traj.column(f"F_{int(k) + 1}")
        if F[0] == 0:
            raise ConfigurationError("cannot normalise an energy that starts at zero")
        traj.series["F_norm"] = list(F / F[0])
    summary["fits"] = [_fit(traj, f) for f in cfg.diagnostics.get("fits", [])]
    summary["final_energies"] = [traj.series[f"F_{i + 1}"][-1] for i in range(cfg.spec.n)]
    summary["D_initial"], summary["D_final"] = traj.series["D"][0], traj.series["D"][-1]
    summary["M_max"] = float(np.max(traj.column("M")))
    if "nash" in traj.series:
        summary["nash_initial"], summary["nash_final"] = traj.series["nash"][0], traj.series["nash"][-1]
    if cfg.allocation is not None:
        summary["allocation"] = {name: {"initial": traj.series[name][0], "final": traj.series[name][-1]}
                                 for name in traj.series if name.startswith("a_")}
    summary["meta"] = dict(traj.meta)
    summary["runtime_s"] = time.perf_counter() - clock
    return traj, summary


def write_outputs(cfg: RunConfig, traj: Trajectory, summary: dict, outdir) -> Path:
    """Write config_resolved.json, summary.json, trajectory.csv, SVG plots and optional snapshots."""
    from .svg import line_plot

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config_resolved.json").write_text(json.dumps(cfg.resolved, indent=2, default=_jsonable))
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    traj.to_csv(outdir / "trajectory.csv")
    for name in cfg.diagnostics.get("plots", []):
        if name in traj.series:
            line_plot(outdir / f"{name}.svg", traj.t, {name: traj.series[name]}, log=True,
                      title=f"{cfg.name}: {name}")
    alloc = {k: v for k, v in traj.series.items() if k.startswith("a_")}
    if alloc:
        line_plot(outdir / "allocation.svg", traj.t, alloc, title=f"{cfg.name}: allocation weights")
    if cfg.diagnostics.get("snapshots"):
        traj.write_snapshots(outdir / "snapshots", cfg.spec.names)
    return outdir


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)
