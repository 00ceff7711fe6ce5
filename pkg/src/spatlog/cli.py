"""Command-line entry point: simulate / estimate / hierarchy / kinetic / verify.

One JSON config file drives everything; ``--override key=value`` patches it
by dot-path.  Every run directory gets the resolved config and a manifest
(config hash, seed, versions, wall time), so a run is reproducible from
its artifacts alone.

Exit codes: 0 success, 1 config/validation error, 2 verification failure,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import datetime
import glob
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .configspace import SiteLattice, SubsetSpace, TruncatedFunction, zeta_transform, moebius_inverse
from .estimators import cluster_index, dobrushin_moment, estimate_k2_radial, group_by_time
from .hierarchy import DivergenceError, HierarchyState, RadialGrid, integrate_hierarchy
from .kernels import (
    InvalidKernelError,
    ModelParams,
    exponential_kernel,
    gaussian_kernel,
    tabulated_kernel,
    tophat_kernel,
    zero_kernel,
)
from .kinetic import (
    DensityField,
    KineticModel,
    front_speed,
    integrate_kinetic,
    linear_spreading_speed,
    logistic_solution,
)
from .operators import (
    OvcyannikovSchedule,
    VerificationReport,
    duality_battery,
    local_density_consistency,
    stochasticity_battery,
    verify_bounds,
)
from .simulator import SimConfig, read_snapshots_csv, run, write_snapshots_csv, write_summary_json

__all__ = ["main", "parse_config", "ConfigError"]


class ConfigError(ValueError):
    """All validation problems of a config, reported together."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {e}" for e in errors))
        self.errors = errors


class _Validator:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def number(self, doc, path, key, default=None, required=False, minimum=None, strict_min=None):
        name = f"{path}.{key}" if path else key
        if key not in doc:
            if required:
                self.fail(name, "missing required field")
            return default
        val = doc[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
            self.fail(name, f"expected a finite number, got {val!r}")
            return default
        if minimum is not None and val < minimum:
            self.fail(name, f"must be >= {minimum}, got {val}")
            return default
        if strict_min is not None and val <= strict_min:
            self.fail(name, f"must be > {strict_min}, got {val}")
            return default
        return float(val)

    def integer(self, doc, path, key, default=None, required=False, minimum=None):
        name = f"{path}.{key}" if path else key
        if key not in doc:
            if required:
                self.fail(name, "missing required field")
            return default
        val = doc[key]
        if not isinstance(val, int) or isinstance(val, bool):
            self.fail(name, f"expected an integer, got {val!r}")
            return default
        if minimum is not None and val < minimum:
            self.fail(name, f"must be >= {minimum}, got {val}")
            return default
        return int(val)

    def raise_if_failed(self):
        if self.errors:
            raise ConfigError(self.errors)


def _kernel_from_spec(spec, d: int, v: _Validator, path: str):
    if not isinstance(spec, dict):
        v.fail(path, "kernel spec must be an object")
        return zero_kernel(d)
    shape = spec.get("shape")
    r_cut = v.number(spec, path, "r_cut", default=None, strict_min=0.0) if "r_cut" in spec else None
    try:
        if shape == "zero":
            return zero_kernel(d)
        if shape == "gaussian":
            sigma = v.number(spec, path, "sigma", required=True, strict_min=0.0)
            return gaussian_kernel(sigma, d, r_cut) if sigma else zero_kernel(d)
        if shape == "tophat":
            h = v.number(spec, path, "h", required=True, minimum=0.0)
            R = v.number(spec, path, "R", required=True, strict_min=0.0)
            return tophat_kernel(h, R, d, r_cut) if None not in (h, R) else zero_kernel(d)
        if shape == "exponential":
            c = v.number(spec, path, "c", required=True, minimum=0.0)
            beta = v.number(spec, path, "beta", required=True, strict_min=0.0)
            return exponential_kernel(c, beta, d, r_cut) if None not in (c, beta) else zero_kernel(d)
        if shape == "tabulated":
            fname = spec.get("path")
            if not isinstance(fname, str) or not os.path.exists(fname):
                v.fail(f"{path}.path", f"tabulated kernel file not found: {fname!r}")
                return zero_kernel(d)
            table = np.loadtxt(fname, delimiter=",", ndmin=2)
            return tabulated_kernel(table[:, 0], table[:, 1], d, r_cut)
        v.fail(f"{path}.shape", f"unknown kernel shape {shape!r}")
    except InvalidKernelError as exc:
        v.fail(path, str(exc))
    return zero_kernel(d)


def parse_config(doc: dict) -> dict:
    """Validate a config document, collecting every error, and fill defaults.

    Returns the resolved config with a constructed ``ModelParams`` under
    the key ``_params``.
    """
    v = _Validator()
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])
    out = dict(doc)
    model = doc.get("model")
    if not isinstance(model, dict):
        v.fail("model", "missing model block")
        v.raise_if_failed()
    m = v.number(model, "model", "m", required=True, minimum=0.0)
    L = v.number(model, "model", "L", required=True, strict_min=0.0)
    d = v.integer(model, "model", "d", default=1)
    if d not in (1, 2):
        v.fail("model.d", f"dimension must be 1 or 2, got {d}")
        d = 1
    a_plus = _kernel_from_spec(model.get("a_plus", {"shape": "zero"}), d, v, "model.a_plus")
    a_minus = _kernel_from_spec(model.get("a_minus", {"shape": "zero"}), d, v, "model.a_minus")
    out["seed"] = v.integer(doc, "", "seed", default=0)
    out["out"] = doc.get("out", "runs")
    out["label"] = doc.get("label")
    params = None
    if not v.errors:
        try:
            params = ModelParams(m, a_plus, a_minus, L, d)
        except ValueError as exc:
            v.fail("model", str(exc))
    v.raise_if_failed()
    out["_params"] = params
    return out


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key!r}: {part} is not an object"])
        node[parts[-1]] = value
    return doc


def _run_dir(cfg: dict, subcommand: str) -> str:
    label = cfg.get("label") or datetime.datetime.now().strftime("%Y%m%dT%H%M%S")
    path = os.path.join(cfg["out"], subcommand, str(label))
    os.makedirs(path, exist_ok=True)
    return path


def _write_run_metadata(cfg: dict, outdir: str, subcommand: str, wall: float):
    resolved = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(resolved, indent=2, sort_keys=True, default=str)
    with open(os.path.join(outdir, "resolved_config.json"), "w") as fh:
        fh.write(blob)
    manifest = {
        "subcommand": subcommand,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": cfg["seed"],
        "versions": {
            "spatlog": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": wall,
        "created": datetime.datetime.now().isoformat(timespec="seconds"),
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(cfg: dict, outdir: str, plots: bool) -> int:
    block = cfg.get("simulate")
    if not isinstance(block, dict):
        raise ConfigError(["simulate: missing block"])
    v = _Validator()
    t_max = v.number(block, "simulate", "t_max", required=True, minimum=0.0)
    replicas = v.integer(block, "simulate", "replicas", default=1, minimum=1)
    snaps = block.get("snapshots", [])
    if not isinstance(snaps, list):
        v.fail("simulate.snapshots", "expected a list of times")
        snaps = []
    initial = block.get("initial")
    kappa = points = None
    if isinstance(initial, dict) and "poisson" in initial:
        kappa = v.number(initial, "simulate.initial", "poisson", required=True, minimum=0.0)
    elif isinstance(initial, dict) and "points" in initial:
        points = np.asarray(initial["points"], dtype=float)
    else:
        v.fail("simulate.initial", "need {'poisson': kappa} or {'points': [...]}")
    v.raise_if_failed()
    try:
        sim_cfg = SimConfig(
            cfg["_params"], t_max, kappa=kappa, points=points,
            snapshot_times=tuple(sorted(float(s) for s in snaps)),
            seed=cfg["seed"], replicas=replicas,
        )
    except ValueError as exc:
        raise ConfigError([f"simulate: {exc}"]) from exc
    results = run(sim_cfg)
    for res in results:
        write_snapshots_csv(res, os.path.join(outdir, f"snapshots_r{res.replica:04d}.csv"))
    summary = write_summary_json(results, sim_cfg, os.path.join(outdir, "summary.json"))
    if plots:
        _plot_population(summary, outdir)
    return 0


def cmd_estimate(cfg: dict, outdir: str, plots: bool) -> int:
    block = cfg.get("estimate")
    if not isinstance(block, dict):
        raise ConfigError(["estimate: missing block"])
    v = _Validator()
    run_dir = block.get("run")
    if not isinstance(run_dir, str) or not os.path.isdir(run_dir):
        v.fail("estimate.run", f"simulation run directory not found: {run_dir!r}")
    edges_spec = block.get("edges", {})
    r0 = v.number(block, "estimate", "r0", default=None, strict_min=0.0) if "r0" in block else None
    v.raise_if_failed()
    p = cfg["_params"]
    if isinstance(edges_spec, list):
        edges = np.asarray(edges_spec, dtype=float)
    else:
        r_max = edges_spec.get("r_max", min(4.0, p.L / 2.0))
        nbins = edges_spec.get("bins", 20)
        edges = np.linspace(0.0, float(r_max), int(nbins) + 1)
    snapshots = []
    for path in sorted(glob.glob(os.path.join(run_dir, "snapshots_r*.csv"))):
        snapshots.extend(read_snapshots_csv(path, p.L, p.d))
    if not snapshots:
        raise ConfigError([f"estimate.run: no snapshot CSVs under {run_dir!r}"])
    groups = group_by_time(snapshots)
    t_sel = block.get("time")
    t_key = max(groups) if t_sel is None else min(groups, key=lambda t: abs(t - t_sel))
    est = estimate_k2_radial(groups[t_key], edges)
    summary = {
        "time": t_key,
        "replicas": est.replicas,
        "k1": est.k1,
        "k1_stderr": est.k1_stderr,
    }
    if r0 is not None:
        ci, ci_err = cluster_index(est, r0)
        summary["cluster_index"] = ci
        summary["cluster_index_stderr"] = ci_err
        summary["r0"] = r0
    dob = block.get("dobrushin")
    if isinstance(dob, dict):
        alpha = float(dob.get("alpha", 1.0))
        window = dob.get("window", [[0.0] * p.d, [p.L] * p.d])
        summary["dobrushin"] = dobrushin_moment(groups[t_key], alpha, window)
        summary["dobrushin_alpha"] = alpha
    with open(os.path.join(outdir, "k2.csv"), "w") as fh:
        fh.write("r_lo,r_hi,k2,stderr\n")
        for lo, hi, val, err in zip(est.edges[:-1], est.edges[1:], est.k2, est.k2_stderr):
            fh.write(f"{lo:.17g},{hi:.17g},{val:.17g},{err:.17g}\n")
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    if plots:
        _plot_k2(est, outdir)
    return 0


def cmd_hierarchy(cfg: dict, outdir: str, plots: bool) -> int:
    block = cfg.get("hierarchy")
    if not isinstance(block, dict):
        raise ConfigError(["hierarchy: missing block"])
    v = _Validator()
    u0 = v.number(block, "hierarchy", "u0", required=True, minimum=0.0)
    dt = v.number(block, "hierarchy", "dt", required=True, strict_min=0.0)
    t_max = v.number(block, "hierarchy", "t_max", required=True, minimum=0.0)
    closure = block.get("closure", "kirkwood")
    if closure not in ("poisson", "kirkwood", "zero"):
        v.fail("hierarchy.closure", f"unknown closure {closure!r}")
    v.raise_if_failed()
    p = cfg["_params"]
    grid = RadialGrid.for_params(p, dr=block.get("dr"), r_max=block.get("r_max"))
    state = HierarchyState.uncorrelated(u0, grid, closure)
    traj = integrate_hierarchy(
        state, p, dt, t_max,
        pair_dynamics=bool(block.get("pair_dynamics", True)),
        snapshot_every=int(block.get("snapshot_every", 0)),
    )
    with open(os.path.join(outdir, "u.csv"), "w") as fh:
        fh.write("t,u\n")
        for t, u in zip(traj.times, traj.u):
            fh.write(f"{t:.17g},{u:.17g}\n")
    with open(os.path.join(outdir, "w.csv"), "w") as fh:
        fh.write("t,r,w\n")
        for t, w in zip(traj.times, traj.w):
            for r, wr in zip(grid.radii, w):
                fh.write(f"{t:.17g},{r:.17g},{wr:.17g}\n")
    meta = {
        "closure": closure,
        "dr": grid.dr,
        "r_max": grid.r_max,
        "clip_events": traj.clip_events,
        "u_final": traj.u[-1],
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    if traj.clip_events:
        print(f"warning: {traj.clip_events} negative values clipped", file=sys.stderr)
    if plots:
        _plot_series(traj.times, traj.u, "t", "u", os.path.join(outdir, "u_vs_t.svg"))
    return 0


def cmd_kinetic(cfg: dict, outdir: str, plots: bool) -> int:
    block = cfg.get("kinetic")
    if not isinstance(block, dict):
        raise ConfigError(["kinetic: missing block"])
    v = _Validator()
    cells = v.integer(block, "kinetic", "cells", required=True, minimum=4)
    dt = v.number(block, "kinetic", "dt", required=True, strict_min=0.0)
    t_max = v.number(block, "kinetic", "t_max", required=True, minimum=0.0)
    rho0_spec = block.get("rho0")
    v.raise_if_failed()
    p = cfg["_params"]
    if isinstance(rho0_spec, dict) and "uniform" in rho0_spec:
        field0 = DensityField.uniform(float(rho0_spec["uniform"]), p.L, cells, p.d)
    elif isinstance(rho0_spec, dict) and "block" in rho0_spec and p.d == 1:
        b = rho0_spec["block"]
        field0 = DensityField.block(
            float(b["height"]), float(b["width"]), float(b.get("center", p.L / 2.0)), p.L, cells
        )
    else:
        raise ConfigError(["kinetic.rho0: need {'uniform': v} or {'block': {...}} (block is 1-d)"])
    try:
        model = KineticModel(p, cells)
    except ValueError as exc:
        raise ConfigError([f"kinetic: {exc}"]) from exc
    traj = integrate_kinetic(
        field0, p, dt, t_max, snapshot_every=int(block.get("snapshot_every", 0)), model=model
    )
    summary: dict = {"cells": cells, "dt": dt, "t_max": t_max, "clip_events": traj.clip_events}
    if block.get("logistic_reference") and "uniform" in rho0_spec:
        rho0 = float(rho0_spec["uniform"])
        mp, mm = p.a_plus.total_mass(), p.a_minus.total_mass()
        rate = mp - p.m
        errs = []
        for t, fld in zip(traj.times, traj.fields):
            ref = (
                float(logistic_solution(rho0, rate, rate / mm, t))
                if mm > 0.0 and rate != 0.0
                else rho0 * math.exp(rate * t)
            )
            errs.append(abs(float(fld.flat[0]) - ref))
        summary["max_abs_error"] = max(errs)
    level = block.get("front_level")
    if level is not None:
        fs = front_speed(traj, float(level))
        summary["front"] = {
            "speed": fs.speed,
            "fit_residual": fs.fit_residual,
            "window": list(fs.window),
            "flags": fs.flags,
        }
        if block.get("predict_speed") and p.d == 1:
            summary["front"]["linear_prediction"] = linear_spreading_speed(p.a_plus, p.m)
        if plots:
            _plot_series(
                fs.times, fs.positions, "t", "front position",
                os.path.join(outdir, "front_position.svg"),
            )
    stride = max(1, int(block.get("stride", 1)))
    with open(os.path.join(outdir, "rho.csv"), "w") as fh:
        fh.write("t,x,rho\n")
        x = field0.x
        for t, fld in zip(traj.times, traj.fields):
            flat = fld.reshape(-1) if p.d == 1 else fld[:, 0]
            for xi, ri in list(zip(x, flat))[::stride]:
                fh.write(f"{t:.17g},{xi:.17g},{ri:.17g}\n")
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return 0


def cmd_verify(cfg: dict, outdir: str, plots: bool) -> int:
    block = cfg.get("verify") or {}
    v = _Validator()
    cells = v.integer(block, "verify", "cells", default=4, minimum=2)
    cap = block.get("cap")
    alpha_low = v.number(block, "verify", "alpha_low", default=-0.5)
    alpha_high = v.number(block, "verify", "alpha_high", default=0.0)
    rungs = v.integer(block, "verify", "rungs", default=5, minimum=1)
    panels = v.integer(block, "verify", "panels", default=64, minimum=4)
    draws = v.integer(block, "verify", "draws", default=100, minimum=1)
    t_frac = v.number(block, "verify", "t_frac", default=0.5, strict_min=0.0)
    duality_tol = v.number(block, "verify", "duality_tol", default=1e-10, strict_min=0.0)
    ld_t = v.number(block, "verify", "local_density_t", default=0.5, minimum=0.0)
    v.raise_if_failed()
    p = cfg["_params"]
    lat = SiteLattice(p.L, p.d, cells)
    report = VerificationReport()
    report.extend(duality_battery(lat, p, cap, draws=draws, tol=duality_tol, seed=cfg["seed"] + 7))
    report.extend(stochasticity_battery(lat, p, seed=cfg["seed"] + 11))

    # zeta/Moebius inversion (exact on integer data) and positivity preservation
    rng = np.random.default_rng(cfg["seed"] + 13)
    space = SubsetSpace(lat, cap)
    inv_err = 0.0
    pos_ok = True
    for _ in range(50):
        g = TruncatedFunction(space, rng.integers(-50, 50, space.dim).astype(float))
        back = moebius_inverse(zeta_transform(g))
        inv_err = max(inv_err, float(np.max(np.abs(back.values - g.values))))
        gp = TruncatedFunction(space, rng.random(space.dim))
        pos_ok = pos_ok and bool(np.all(zeta_transform(gp).values >= 0.0))
    report.add("zeta_moebius_roundtrip", inv_err, 0.0, inv_err == 0.0)
    report.add("zeta_positivity_preservation", 0.0 if pos_ok else 1.0, 0.0, pos_ok)

    sched = OvcyannikovSchedule.from_lattice(lat, p, alpha_low, alpha_high, rungs)
    if math.isfinite(sched.T_star):
        report.extend(
            verify_bounds(sched, p, lat, cap=cap, t=t_frac * sched.T_star, panels=panels,
                          seed=cfg["seed"] + 17)
        )

    fixture = block.get("fixture_k0")
    full = SubsetSpace(lat, None)
    if isinstance(fixture, str):
        k0 = TruncatedFunction.from_json(open(fixture).read(), full)
    else:
        occ = 0.4
        k0 = TruncatedFunction.from_size_profile(full, lambda n: (occ / lat.v) ** n)
    ld = local_density_consistency(k0, lat, p, ld_t)
    report.add(
        "local_density_consistency", ld.residual, 1e-8, ld.residual <= 1e-8,
        realizable=ld.realizable, roundtrip_error=ld.roundtrip_error, t=ld_t,
    )

    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    for c in report.checks:
        status = "pass" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: value={c.value:.3e} bound={c.bound:.3e}")
    return 0 if report.passed else 2


# -- plots (presentation only; never gate results) -------------------------------------


def _plot_population(summary: dict, outdir: str):
    ts = [s["t"] for s in summary["snapshots"]]
    ns = [s["n_mean"] for s in summary["snapshots"]]
    _plot_series(ts, ns, "t", "mean population", os.path.join(outdir, "n_vs_t.svg"))


def _plot_k2(est, outdir: str):
    mid = 0.5 * (est.edges[:-1] + est.edges[1:])
    _plot_series(mid, est.k2, "r", "k2", os.path.join(outdir, "k2_vs_r.svg"))


def _plot_series(x, y, xlabel: str, ylabel: str, path: str):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib not available, skipping plots", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(x, y, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -- entry point -------------------------------------------------------------------------


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "hierarchy": cmd_hierarchy,
    "kinetic": cmd_kinetic,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="spatlog", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--replicas", type=int, default=None, help="override replica count")
        sp.add_argument("--out", default=None, help="override output directory")
        sp.add_argument("--label", default=None, help="run label (default: timestamp)")
        sp.add_argument("--plots", action="store_true", help="emit SVG plots")
        sp.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="dot-path config override (value parsed as JSON, else string)",
        )
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        doc = _apply_overrides(doc, args.override)
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.out is not None:
            doc["out"] = args.out
        if args.label is not None:
            doc["label"] = args.label
        if args.replicas is not None:
            doc.setdefault("simulate", {})["replicas"] = args.replicas
        cfg = parse_config(doc)
        outdir = _run_dir(cfg, args.command)
        start = time.perf_counter()
        code = _COMMANDS[args.command](cfg, outdir, args.plots)
        _write_run_metadata(cfg, outdir, args.command, time.perf_counter() - start)
        print(f"artifacts: {outdir}")
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
