"""Command-line entry point: ``meanfield <command> [options]``.

Every command reads one JSON experiment file (or a named preset), writes
its outputs plus ``manifest.json`` into the output directory, and exits
with 0 on success, 2 on configuration errors and 3 on numerical failure.
Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .ensemble import InitialLaw, run_ensemble, save_dataset, load_dataset
from .errors import ConfigError, CorruptCheckpoint, MeanFieldError, NumericalFailure
from .hierarchy import (HierarchyParams, bound_table, existence_time, final_marginal_bound,
                        induction_bound, growth_constant)
from .kernels import KernelSpec, smooth_kernel
from .marginals import GridDensity, GridSpec, estimate_marginal, weighted_lq_norm
from .particles import SimConfig, batch_energy, expected_energy_slope
from .plots import emit_plots
from .studies import ChaosStudy, run_chaos_study
from .tensorio import canonical_json, content_hash, file_hash, write_csv
from .vlasov import (PhaseGrid1D, SpatialGrid, cosine_spatial, landau_initial, phase_grid_from_density,
                     project, solve_first_order, solve_vpfp_1d)

COMMANDS = ("simulate", "solve_pde", "analyze", "bounds", "compare")

PRESETS = {
    "chaos_d1": {
        "command": "compare",
        "compare": ChaosStudy().to_dict(),
    },
    "coulomb_d2": {
        "command": "simulate",
        "simulate": {
            "sim": SimConfig(N=128, d=2, sigma=0.5, dt=0.005, t_end=0.5,
                             kernel=KernelSpec("coulomb", 1.0, 2), snapshot_stride=10).to_dict(),
            "replicas": 4,
            "law": {"kind": "product_gaussian", "velocity_std": 1.0, "perturbation": 0.5, "mode": 1},
        },
    },
    "first_order_d2": {
        "command": "solve_pde",
        "solve_pde": {
            "kind": "first_order",
            "kernel": KernelSpec("mild_power", 1.0, 2, exponent=0.5).to_dict(),
            "sigma": 0.5, "t_end": 0.1, "dt": 0.005,
            "initial": {"preset": "cosine", "n": 64, "eps": 0.5, "mode": 1},
        },
    },
    "bounds_worked": {
        "command": "bounds",
        "bounds": {"params": {"q": 2.0, "p": 2.0, "d": 2, "sigma": 1.0, "Lambda": 4.0, "C_const": 1.0,
                              "theta_exp": 1.0, "K_lp_norm": 1.0, "F0": 1.0, "F": 1.0, "N": 10},
                   "L": 1.0},
    },
}


@dataclass
class ExperimentConfig:
    command: str
    section: dict
    seed: int = 0
    output_dir: str = "results"
    thread_count: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command section {self.command!r}")
        if self.thread_count < 0:
            raise ConfigError("thread_count must be >= 0")

    def to_dict(self):
        return {"command": self.command, self.command: self.section, "seed": self.seed,
                "output_dir": self.output_dir, "thread_count": self.thread_count}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        command = data.get("command") or next((c for c in COMMANDS if c in data), None)
        if command is None or command not in data:
            raise ConfigError("config needs one of the sections " + ", ".join(COMMANDS))
        unknown = set(data) - set(COMMANDS) - {"command", "seed", "output_dir", "thread_count"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(command, data[command], int(data.get("seed", 0)),
                   data.get("output_dir", "results"), int(data.get("thread_count", 0)))

    def content_hash(self):
        """Hash of the settings that determine the results (not where they go)."""
        return content_hash(self.portable())

    def portable(self):
        data = self.to_dict()
        del data["output_dir"], data["thread_count"]
        return data

    @property
    def workers(self):
        return self.thread_count or (os.cpu_count() or 1)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def _law(section):
    return InitialLaw(**section.get("law", {}))


def _sim(section, seed):
    data = dict(section["sim"])
    data.setdefault("seed", seed)
    return SimConfig.from_dict(data)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, out):
    sim = _sim(cfg.section, cfg.seed)
    ds = run_ensemble(sim, int(cfg.section.get("replicas", 1)), _law(cfg.section), workers=cfg.workers)
    save_dataset(ds, out)
    energies = []
    for j in range(ds.snapshot_steps.size):
        v = None if ds.velocities is None else ds.velocities[:, j]
        energies.append(batch_energy(ds.positions[:, j], v, sim.kernel)[2])
    e = np.stack(energies, axis=1)
    de = e - e[:, :1]
    slope = expected_energy_slope(sim) if sim.order == "second" else 0.0
    rows = [[float(t), float(de[:, j].mean()), float(e[:, j].mean()), slope]
            for j, t in enumerate(ds.snapshot_times)]
    write_csv(os.path.join(out, "energy.csv"),
              ["time", "mean_energy_change", "mean_energy", "expected_slope"], rows)
    return ["energy.csv"] + _dataset_files(out)


def _dataset_files(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        inner = json.load(fh)
    os.replace(os.path.join(out, "manifest.json"), os.path.join(out, "dataset_manifest.json"))
    return list(inner["files"]) + ["dataset_manifest.json"]


def _initial_grid(section):
    init = section.get("initial", {"preset": "landau"})
    if "file" in init:
        dens = GridDensity.load(init["file"])
        if dens.spatial:
            return SpatialGrid(dens.x_bins, dens.d, dens.values, dens.time)
        return phase_grid_from_density(dens)
    preset = init.get("preset", "landau")
    if preset in ("landau", "uniform_gaussian"):
        eps = 0.0 if preset == "uniform_gaussian" else init.get("eps", 0.5)
        return landau_initial(init.get("nx", 128), init.get("nv", 128), init.get("v_max", 6.0), eps,
                              init.get("mode", 1), init.get("velocity_std", 1.0))
    if preset == "cosine":
        kd = section["kernel"].get("dim", 1)
        return cosine_spatial(init.get("n", 64), kd, init.get("eps", 0.5), init.get("mode", 1))
    raise ConfigError(f"unknown initial preset {preset!r}")


def cmd_solve_pde(cfg: ExperimentConfig, out):
    s = cfg.section
    kernel = KernelSpec.from_dict(s["kernel"])
    f0 = _initial_grid(s)
    kind = s.get("kind", "kinetic")
    if kind == "kinetic":
        if not isinstance(f0, PhaseGrid1D):
            raise ConfigError("the kinetic solver needs phase-space initial data")
        dt = s.get("dt") or 1.0 / (f0.nx * f0.v_max)
        sol = solve_vpfp_1d(f0, kernel, s["sigma"], s["t_end"], dt)
        x, rho0, rho = f0.x, f0.density(), sol.density()
    elif kind == "first_order":
        if not isinstance(f0, SpatialGrid):
            raise ConfigError("the first-order solver needs spatial initial data")
        sol = solve_first_order(f0, kernel, s["sigma"], s["t_end"], s["dt"])
        axes = tuple(range(1, f0.d))
        x = (np.arange(f0.n) + 0.5) / f0.n
        rho0, rho = f0.f.mean(axis=axes), sol.f.mean(axis=axes)
    else:
        raise ConfigError(f"unknown solver kind {kind!r}")
    dens = project(sol)
    dens.provenance = cfg.content_hash()
    dens.save(os.path.join(out, "solution.mft"))
    write_csv(os.path.join(out, "density.csv"), ["x", "rho_initial", "rho_final"],
              [[float(a), float(b), float(c)] for a, b, c in zip(x, rho0, rho)])
    with open(os.path.join(out, "stats.json"), "w") as fh:
        fh.write(json.dumps(sol.stats, indent=1, sort_keys=True))
    return ["solution.mft", "density.csv", "stats.json"]


def cmd_analyze(cfg: ExperimentConfig, out):
    s = cfg.section
    ds = load_dataset(s["dataset"])
    grid = GridSpec(**s.get("grid", {}))
    k = int(s.get("k", 1))
    t = float(s.get("time", ds.snapshot_times[-1]))
    dens = estimate_marginal(ds, k, t, grid)
    dens.save(os.path.join(out, "marginal.mft"))
    files = ["marginal.mft"]
    report = {"k": k, "time": t, "mass": dens.mass(), "truncation_mass": dens.truncation_mass,
              "dataset_config_hash": ds.config_hash}
    if "q" in s and not grid.spatial:
        w = weighted_lq_norm(dens, s["q"], s.get("lam", 0.0), ds.config.kernel, N=ds.config.N)
        report.update({"weighted_norm": w.value, "gaussian_moment": w.gaussian_moment})
    with open(os.path.join(out, "analysis.json"), "w") as fh:
        fh.write(json.dumps(report, indent=1, sort_keys=True))
    files.append("analysis.json")
    if k == 1 and dens.d == 1:
        dens.export_slice_csv(os.path.join(out, "marginal_slice.csv"))
        files.append("marginal_slice.csv")
    return files


def cmd_bounds(cfg: ExperimentConfig, out):
    s = cfg.section
    params = HierarchyParams.from_dict(s.get("params", {}))
    report = bound_table(params, s.get("t"))
    if "L" in s:
        L = float(s["L"])
        T = existence_time(L, params.F0, params.F)
        t = s.get("t", T / 2)
        report.update({"L": L, "L_from_params": growth_constant(params), "T_star": T, "t": t})
        rows = []
        for k in range(1, params.N + 1):
            fb = final_marginal_bound(k, params.N, params.F0, params.F, L, t) \
                if 4 * L * t * max(params.F0, params.F) < 1 else None
            ib = induction_bound(k, params.N - 1, t, params.F0, L, params.F**params.N) if k < params.N else None
            rows.append({"k": k, "final_bound": fb, "induction_bound": ib})
        report["table"] = rows
    with open(os.path.join(out, "bounds.json"), "w") as fh:
        fh.write(json.dumps(report, indent=1, sort_keys=True))
    write_csv(os.path.join(out, "bounds.csv"), ["k", "final_bound", "induction_bound"],
              [[r["k"], r["final_bound"], r["induction_bound"]] for r in report["table"]])
    return ["bounds.json", "bounds.csv"]


def cmd_compare(cfg: ExperimentConfig, out):
    data = dict(cfg.section)
    data.setdefault("seed", cfg.seed)
    study = ChaosStudy.from_dict(data)
    res = run_chaos_study(study, workers=cfg.workers)
    write_csv(os.path.join(out, "convergence.csv"),
              ["N", "l1_k1", "lq_k1", "l1_k2", "lq_k2", "weighted_norm_k1", "weighted_norm_k2",
               "recursion_passed"],
              [[r["N"], r["l1_k1"], r["lq_k1"], r["l1_k2"], r["lq_k2"], r["weighted_norm_k1"],
                r["weighted_norm_k2"], int(r["recursion_passed"])] for r in res["rows"]])
    ref = project(res["reference"])
    ref.provenance = cfg.content_hash()
    ref.save(os.path.join(out, "solution.mft"))
    summary = {k: v for k, v in res.items() if k not in ("reference",)}
    with open(os.path.join(out, "study.json"), "w") as fh:
        fh.write(json.dumps(summary, indent=1, sort_keys=True))
    return ["convergence.csv", "solution.mft", "study.json"]


HANDLERS = {"simulate": cmd_simulate, "solve_pde": cmd_solve_pde, "analyze": cmd_analyze,
            "bounds": cmd_bounds, "compare": cmd_compare}


def write_manifest(cfg: ExperimentConfig, out, files):
    manifest = {
        "command": cfg.command,
        "config": cfg.portable(),
        "config_hash": cfg.content_hash(),
        "version": __version__,
        "files": {rel: file_hash(os.path.join(out, rel)) for rel in sorted(set(files))},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        fh.write(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def verify_manifest(directory) -> list:
    """Names of files whose hash no longer matches ``manifest.json``."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise CorruptCheckpoint(f"no manifest in {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    bad = []
    for rel, digest in manifest["files"].items():
        full = os.path.join(directory, rel)
        if not os.path.exists(full) or file_hash(full) != digest:
            bad.append(rel)
    return bad


def run_experiment(cfg: ExperimentConfig, plots=False):
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "experiment.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(cfg.portable()))
    files = HANDLERS[cfg.command](cfg, out)
    files.append("experiment.json")
    if plots:
        files += [os.path.relpath(p, out) for p in emit_plots(out)]
    return write_manifest(cfg, out, files)


# --------------------------------------------------------------------------
# argument parsing


def _parser():
    ap = argparse.ArgumentParser(prog="meanfield", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("simulate", "solve-pde", "analyze", "bounds", "compare"):
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="experiment JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--output-dir", "-o")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads (0 = auto)")
        p.add_argument("--plots", action="store_true", help="also write SVG figures")
        if name == "compare":
            p.add_argument("--N", help="comma-separated particle numbers")
            p.add_argument("--replicas", type=int)
    st = sub.add_parser("selftest", help="re-verify manifest hashes of result directories")
    st.add_argument("dirs", nargs="*")
    pl = sub.add_parser("plots", help="render SVG figures for a results directory")
    pl.add_argument("dir")
    pr = sub.add_parser("preset", help="print a preset config")
    pr.add_argument("name", choices=sorted(PRESETS))
    return ap


def _build_config(args) -> ExperimentConfig:
    if args.preset:
        data = copy.deepcopy(PRESETS[args.preset])
    elif args.config:
        cfg = load_config(args.config)
        data = cfg.to_dict()
    else:
        raise ConfigError("pass --config FILE or --preset NAME")
    cmd = args.cmd.replace("-", "_")
    if data.get("command") != cmd:
        raise ConfigError(f"config is for {data.get('command')!r}, not {cmd!r}")
    if args.output_dir:
        data["output_dir"] = args.output_dir
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["thread_count"] = args.threads
    if cmd == "compare":
        if args.N:
            try:
                data["compare"]["N_values"] = [int(n) for n in args.N.split(",")]
            except ValueError as exc:
                raise ConfigError(f"bad --N list: {args.N}") from exc
        if args.replicas:
            data["compare"]["replicas"] = args.replicas
    return ExperimentConfig.from_dict(data)


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("step", "replica"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def run_cli(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        if args.cmd == "preset":
            print(json.dumps(PRESETS[args.name], indent=1, sort_keys=True))
            return 0
        if args.cmd == "plots":
            for path in emit_plots(args.dir):
                print(path)
            return 0
        if args.cmd == "selftest":
            failures = {d: verify_manifest(d) for d in args.dirs}
            print(json.dumps({"checked": args.dirs, "mismatches": failures}, sort_keys=True))
            return 1 if any(failures.values()) else 0
        cfg = _build_config(args)
        manifest = run_experiment(cfg, args.plots)
        print(json.dumps({"output_dir": cfg.output_dir, "config_hash": manifest["config_hash"],
                          "files": sorted(manifest["files"])}))
        return 0
    except NumericalFailure as exc:
        return _fail(exc, 3)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        return _fail(exc, 2)
    except MeanFieldError as exc:
        return _fail(exc, 1)


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
