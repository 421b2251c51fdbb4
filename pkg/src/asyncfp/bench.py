"""Experiment harness: validated suite specs, sweep expansion, per-run
trace CSVs and JSON summaries, suite-level summary tables with speedups,
and distinct-energy clustering for SCF runs."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path

import numpy as np
import yaml

from . import engine, lapjac, mdpvi, ppscf
from .accel import AccelMode
from .engine import FaultProfile, RunConfig, RunTrace, Selection

ENERGY_CLUSTER_GAP = 1e-4

TRACE_HEADER = "sim_time_s,worker_updates,residual,event"
SUMMARY_HEADER = "experiment,config,seed,status,wu,time_s,final_residual,speedup"


class ConfigError(Exception):
    """Invalid experiment specification."""


# --------------------------------------------------------------------------
# spec schema
# --------------------------------------------------------------------------

_PROBLEM_KEYS = {
    "jacobi": {"kind", "nx", "ny", "rows_per_block", "n_sweeps"},
    "garnet_vi": {"kind", "states", "actions", "branching", "gamma", "blocks",
                  "mdp_seed", "mdp_seed_per_run"},
    "gridworld_vi": {"kind", "side", "gamma", "blocks"},
    "scf": {"kind", "n_atoms", "u_over_t", "blocks", "de_tol", "t"},
}
_RUN_KEYS = {"mode", "workers", "tol", "max_worker_updates", "base_compute_time",
             "settle_window", "require_convergence", "accel", "selection", "faults"}
_ACCEL_KEYS = {"mode", "m", "fire_every", "mixing_beta", "regularization",
               "safeguard", "clear_on_reject", "period", "alpha"}
_SELECTION_KEYS = {"kind", "k"}
_FAULT_KEYS = {"delay_mean", "delay_std", "noise_std", "drop_prob", "max_staleness"}
_FAULTS_KEYS = {"default", "workers", "straggler_workers", "straggler_delay_std"}
_SWEEP_KEYS = {"mode", "straggler_delay", "delay_all_mean", "delay_all_std",
               "window_m", "fire_every", "accel_mode", "alpha", "gamma", "u_over_t",
               "rows_per_block", "n_sweeps", "selection_kind", "k", "noise_std",
               "drop_prob", "max_staleness"}
_VARIANT_KEYS = {"name", "problem", "run", "sweep", "seeds"}
_TOP_KEYS = {"experiment", "description", "variants", "problem", "run", "sweep", "seeds"}


def _check_keys(node: dict, allowed: set, path: str):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or 'spec'}: expected a mapping")
    for key in node:
        if key not in allowed:
            raise ConfigError(f"unknown key {path + '.' if path else ''}{key}")


def _require(node: dict, key: str, path: str):
    if key not in node:
        raise ConfigError(f"missing required key {path + '.' if path else ''}{key}")
    return node[key]


def _check_range(value, lo, hi, path):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number")
    if not (lo <= value <= hi):
        raise ConfigError(f"{path}: value {value} outside [{lo}, {hi}]")
    return value


@dataclass(frozen=True)
class Variant:
    name: str
    problem: dict
    run: dict
    sweep: dict
    seeds: tuple


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    description: str
    variants: tuple


def validate_spec(raw: dict) -> ExperimentSpec:
    _check_keys(raw, _TOP_KEYS, "")
    experiment = str(_require(raw, "experiment", ""))
    description = str(raw.get("description", ""))
    if "variants" in raw:
        raw_variants = raw["variants"]
        if not isinstance(raw_variants, list) or not raw_variants:
            raise ConfigError("variants: expected a nonempty list")
    else:
        raw_variants = [{"name": "base",
                         "problem": raw.get("problem"),
                         "run": raw.get("run"),
                         "sweep": raw.get("sweep", {}),
                         "seeds": raw.get("seeds", [0])}]
    variants = []
    seen = set()
    for i, var in enumerate(raw_variants):
        vpath = f"variants[{i}]"
        _check_keys(var, _VARIANT_KEYS, vpath)
        name = str(var.get("name", f"v{i}"))
        if name in seen:
            raise ConfigError(f"{vpath}.name: duplicate variant name {name!r}")
        seen.add(name)
        problem = _validate_problem(_require(var, "problem", vpath), f"{vpath}.problem")
        run = _validate_run(_require(var, "run", vpath), f"{vpath}.run")
        sweep = _validate_sweep(var.get("sweep") or {}, f"{vpath}.sweep")
        seeds = var.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError(f"{vpath}.seeds: expected a nonempty list")
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"{vpath}.seeds: seeds must be distinct")
        variants.append(Variant(name, problem, run, sweep, tuple(int(s) for s in seeds)))
    return ExperimentSpec(experiment, description, tuple(variants))


def _validate_problem(node: dict, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping")
    kind = _require(node, "kind", path)
    if kind not in _PROBLEM_KEYS:
        raise ConfigError(f"{path}.kind: unknown problem kind {kind!r}")
    _check_keys(node, _PROBLEM_KEYS[kind], path)
    out = dict(node)
    if kind == "jacobi":
        _check_range(out.get("nx", 0), 2, 10_000, f"{path}.nx")
        _check_range(out.get("ny", 0), 2, 10_000, f"{path}.ny")
    if kind == "garnet_vi":
        _check_range(_require(out, "gamma", path), 1e-6, 1 - 1e-9, f"{path}.gamma")
    if kind == "scf":
        _check_range(_require(out, "u_over_t", path), 1e-9, 1e3, f"{path}.u_over_t")
    return out


def _validate_run(node: dict, path: str) -> dict:
    _check_keys(node, _RUN_KEYS, path)
    out = dict(node)
    if "accel" in out and out["accel"] is not None:
        _check_keys(out["accel"], _ACCEL_KEYS, f"{path}.accel")
    if "selection" in out and out["selection"] is not None:
        _check_keys(out["selection"], _SELECTION_KEYS, f"{path}.selection")
    if "faults" in out and out["faults"] is not None:
        faults = out["faults"]
        _check_keys(faults, _FAULTS_KEYS, f"{path}.faults")
        if "default" in faults:
            _check_keys(faults["default"], _FAULT_KEYS, f"{path}.faults.default")
            _validate_profile(faults["default"], f"{path}.faults.default")
        for wid, prof in (faults.get("workers") or {}).items():
            _check_keys(prof, _FAULT_KEYS, f"{path}.faults.workers.{wid}")
            _validate_profile(prof, f"{path}.faults.workers.{wid}")
    if "tol" in out:
        _check_range(out["tol"], 1e-300, 1e300, f"{path}.tol")
    return out


def _validate_profile(node: dict, path: str):
    if "drop_prob" in node:
        _check_range(node["drop_prob"], 0.0, 1.0, f"{path}.drop_prob")
    for key in ("delay_mean", "delay_std", "noise_std"):
        if key in node:
            _check_range(node[key], 0.0, 1e6, f"{path}.{key}")


def _validate_sweep(node: dict, path: str) -> dict:
    _check_keys(node, _SWEEP_KEYS, path)
    out = {}
    for key, values in node.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}.{key}: expected a nonempty list")
        out[key] = list(values)
    return out


def load_spec(path) -> ExperimentSpec:
    """Parse and validate an experiment spec file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"spec file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: expected a mapping at the top level")
    return validate_spec(raw)


# --------------------------------------------------------------------------
# run construction
# --------------------------------------------------------------------------

def build_problem(problem: dict, seed: int):
    kind = problem["kind"]
    if kind == "jacobi":
        return lapjac.make_problem(problem.get("nx", 100), problem.get("ny", 100),
                                   problem.get("rows_per_block", 25),
                                   problem.get("n_sweeps", 1))
    if kind == "garnet_vi":
        mdp_seed = problem.get("mdp_seed", 0)
        if problem.get("mdp_seed_per_run", False):
            mdp_seed = mdp_seed + seed
        mdp = mdpvi.make_garnet(mdp_seed, problem.get("states", 500),
                                problem.get("actions", 4), problem.get("branching", 5),
                                problem["gamma"])
        part = mdpvi.make_state_partition(mdp.num_states, problem.get("blocks", 4))
        return mdpvi.VIProblem(mdp, part)
    if kind == "gridworld_vi":
        mdp, _ = mdpvi.make_gridworld(problem.get("side", 10), problem.get("gamma", 0.9))
        part = mdpvi.make_state_partition(mdp.num_states, problem.get("blocks", 4))
        return mdpvi.VIProblem(mdp, part)
    if kind == "scf":
        return ppscf.make_problem(problem.get("n_atoms", 8), problem["u_over_t"],
                                  problem.get("blocks", 4), problem.get("t", -1.0),
                                  problem.get("de_tol", 1e-10))
    raise ConfigError(f"unknown problem kind {kind!r}")


def build_run_config(run: dict, workers: int, seed: int) -> RunConfig:
    accel_node = run.get("accel") or {}
    accel = AccelMode(kind=accel_node.get("mode", "monitor_only"),
                      period=accel_node.get("period", 5),
                      alpha=accel_node.get("alpha", 1.0))
    sel_node = run.get("selection") or {}
    selection = Selection(kind=sel_node.get("kind", "fixed_partition"),
                          k=sel_node.get("k"))
    faults_node = run.get("faults") or {}
    default = FaultProfile(**(faults_node.get("default") or {}))
    profiles = []
    per_worker = {int(k): v for k, v in (faults_node.get("workers") or {}).items()}
    for w in range(workers):
        node = per_worker.get(w)
        profiles.append(FaultProfile(**node) if node is not None else default)
    try:
        return RunConfig(
            mode=run.get("mode", "sync"),
            workers=workers,
            fault_profiles=tuple(profiles),
            base_compute_time=run.get("base_compute_time", 0.007),
            accel=accel,
            window_m=accel_node.get("m", 5),
            fire_every=accel_node.get("fire_every", 1),
            mixing_beta=accel_node.get("mixing_beta", 1.0),
            regularization=accel_node.get("regularization", 0.0),
            safeguard=accel_node.get("safeguard", True),
            clear_on_reject=accel_node.get("clear_on_reject", False),
            selection=selection,
            tol=run.get("tol", 1e-6),
            max_worker_updates=run.get("max_worker_updates", 200_000),
            rng_seed=seed,
            settle_window=run.get("settle_window", 1),
        )
    except ValueError as exc:
        raise ConfigError(f"run config: {exc}") from exc


def _apply_sweep_value(problem: dict, run: dict, key: str, value):
    faults = run.setdefault("faults", {})
    if key == "mode":
        run["mode"] = value
    elif key == "straggler_delay":
        stragglers = faults.get("straggler_workers")
        if stragglers is None:
            stragglers = [None]   # resolved to the last worker later
        std = faults.get("straggler_delay_std", 0.0)
        workers = faults.setdefault("workers", {})
        for w in stragglers:
            workers[w] = dict(workers.get(w) or {},
                              delay_mean=float(value), delay_std=float(std))
    elif key == "delay_all_mean":
        faults.setdefault("default", {})["delay_mean"] = float(value)
    elif key == "delay_all_std":
        faults.setdefault("default", {})["delay_std"] = float(value)
    elif key in ("noise_std", "drop_prob", "max_staleness"):
        faults.setdefault("default", {})[key] = value
    elif key == "window_m":
        run.setdefault("accel", {})["m"] = int(value)
    elif key == "fire_every":
        run.setdefault("accel", {})["fire_every"] = int(value)
    elif key == "accel_mode":
        run.setdefault("accel", {})["mode"] = str(value)
    elif key == "alpha":
        run.setdefault("accel", {})["alpha"] = float(value)
    elif key == "gamma":
        problem["gamma"] = float(value)
    elif key == "u_over_t":
        problem["u_over_t"] = float(value)
    elif key == "rows_per_block":
        problem["rows_per_block"] = int(value)
    elif key == "n_sweeps":
        problem["n_sweeps"] = int(value)
    elif key == "selection_kind":
        run.setdefault("selection", {})["kind"] = str(value)
    elif key == "k":
        run.setdefault("selection", {})["k"] = int(value)
    else:
        raise ConfigError(f"sweep key {key!r} has no application rule")


@dataclass
class RunCell:
    variant: str
    config: str
    seed: int
    problem: dict
    run: dict
    sweep_values: dict


@dataclass
class RunRecord:
    experiment: str
    variant: str
    config: str
    seed: int
    sweep_values: dict
    run_mode: str
    trace: RunTrace
    require_convergence: bool
    fixed_point_label: str = ""

    @property
    def summary(self) -> dict:
        out = {"experiment": self.experiment, "variant": self.variant,
               "config": self.config, "seed": self.seed, "mode": self.run_mode}
        out.update(self.trace.summary_dict())
        return out

    @property
    def config_minus_mode(self) -> str:
        values = {k: v for k, v in self.sweep_values.items() if k != "mode"}
        return ";".join(f"{k}={values[k]}" for k in sorted(values))


def expand_cells(spec: ExperimentSpec, seed_offset: int = 0):
    cells = []
    for var in spec.variants:
        keys = sorted(var.sweep.keys())
        combos = [()] if not keys else product(*(var.sweep[k] for k in keys))
        for combo in combos:
            values = dict(zip(keys, combo))
            problem = dict(var.problem)
            run = json.loads(json.dumps(var.run))   # deep copy of plain data
            for k in keys:
                _apply_sweep_value(problem, run, k, values[k])
            label = ";".join(f"{k}={values[k]}" for k in keys)
            config = var.name if not label else f"{var.name}|{label}"
            for seed in var.seeds:
                cells.append(RunCell(var.name, config, seed + seed_offset,
                                     problem, run, values))
    return cells


def execute_cell(spec_name: str, cell: RunCell) -> RunRecord:
    problem = build_problem(cell.problem, cell.seed)
    workers = cell.run.get("workers")
    if workers in (None, "auto"):
        workers = problem.partition.num_blocks
    faults = cell.run.get("faults") or {}
    if faults.get("workers"):
        resolved = {}
        for wid, prof in faults["workers"].items():
            resolved[str(workers - 1 if wid in (None, "last") else wid)] = prof
        faults = dict(faults, workers=resolved)
        cell.run["faults"] = faults
    config = build_run_config(cell.run, int(workers), cell.seed)
    trace = engine.run(problem, config)
    return RunRecord(spec_name, cell.variant, cell.config, cell.seed,
                     cell.sweep_values, config.mode, trace,
                     bool(cell.run.get("require_convergence", True)))


def run_suite(spec: ExperimentSpec, out_dir, seed_offset: int = 0,
              threads: int = 1, write_traces: bool = True):
    """Execute the full cartesian product of sweep axes and seeds.

    Writes one trace CSV and one JSON summary per run plus a suite-level
    summary.csv (and clusters.csv when runs report energies). Output is
    deterministic for a given spec."""
    out = Path(out_dir) / spec.experiment
    out.mkdir(parents=True, exist_ok=True)
    cells = expand_cells(spec, seed_offset)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda c: execute_cell(spec.experiment, c), cells))
    else:
        records = [execute_cell(spec.experiment, c) for c in cells]

    label_clusters(records)
    rows = summarize(records)
    if write_traces:
        for rec in records:
            slug = _slug(f"{rec.config}__seed{rec.seed}")
            write_trace_csv(rec.trace, out / f"{slug}.trace.csv")
            (out / f"{slug}.summary.json").write_text(
                json.dumps(_run_json(rec), indent=1, sort_keys=True) + "\n")
    write_summary_csv(rows, out / "summary.csv")
    clusters = [r for r in records if r.fixed_point_label]
    if clusters:
        write_clusters_csv(clusters, out / "clusters.csv")
    return records, rows


def _run_json(rec: RunRecord) -> dict:
    out = rec.summary
    out["fixed_point_label"] = rec.fixed_point_label
    out["require_convergence"] = rec.require_convergence
    return out


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_=." else "_" for c in text)


def label_clusters(records) -> int:
    """Distinct-energy labels for SCF runs: converged energies sorted and
    split where consecutive values differ by more than 1e-4. Returns the
    cluster count."""
    energies = [(r.trace.metrics["energy"], r) for r in records
                if "energy" in r.trace.metrics and r.trace.status == engine.CONVERGED]
    if not energies:
        return 0
    energies.sort(key=lambda t: t[0])
    label = 0
    prev = None
    for e, rec in energies:
        if prev is not None and e - prev > ENERGY_CLUSTER_GAP:
            label += 1
        rec.fixed_point_label = f"fp{label}"
        prev = e
    return label + 1


def summarize(records) -> list:
    """Summary rows with speedup = sync time / async time recomputed from
    matched (config minus mode, seed) pairs of converged runs."""
    sync_time = {}
    for rec in records:
        if rec.trace.status != engine.CONVERGED:
            continue
        if rec.run_mode == "sync":
            sync_time[(rec.variant, rec.config_minus_mode, rec.seed)] = rec.trace.wall_time
    rows = []
    for rec in records:
        speedup = ""
        if rec.run_mode != "sync" and rec.trace.status == engine.CONVERGED:
            key = (rec.variant, rec.config_minus_mode, rec.seed)
            if key in sync_time and rec.trace.wall_time > 0:
                speedup = sync_time[key] / rec.trace.wall_time
        rows.append({
            "experiment": rec.experiment,
            "config": rec.config,
            "seed": rec.seed,
            "status": rec.trace.status,
            "wu": rec.trace.worker_updates,
            "time_s": rec.trace.wall_time,
            "final_residual": rec.trace.final_residual,
            "speedup": speedup,
        })
    return rows


def write_trace_csv(trace: RunTrace, path):
    lines = [TRACE_HEADER]
    for t, wu, res, kind in trace.events:
        lines.append(f"{t!r},{wu},{res!r},{kind}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_csv(rows, path):
    lines = [SUMMARY_HEADER]
    for row in rows:
        speed = row["speedup"]
        speed_txt = f"{speed!r}" if isinstance(speed, float) else str(speed)
        lines.append(f"{row['experiment']},{row['config']},{row['seed']},{row['status']},"
                     f"{row['wu']},{row['time_s']!r},{row['final_residual']!r},{speed_txt}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_clusters_csv(records, path):
    lines = ["experiment,config,seed,energy,label"]
    for rec in sorted(records, key=lambda r: (r.config, r.seed)):
        lines.append(f"{rec.experiment},{rec.config},{rec.seed},"
                     f"{rec.trace.metrics['energy']!r},{rec.fixed_point_label}")
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# shipped suites and CLI
# --------------------------------------------------------------------------

def shipped_suites() -> dict:
    out = {}
    for entry in resources.files("asyncfp.suites").iterdir():
        if entry.name.endswith(".yaml"):
            out[entry.name[:-5]] = entry
    return dict(sorted(out.items()))


def resolve_spec(name_or_path: str) -> ExperimentSpec:
    p = Path(name_or_path)
    if p.exists():
        return load_spec(p)
    suites = shipped_suites()
    if name_or_path in suites:
        raw = yaml.safe_load(suites[name_or_path].read_text())
        return validate_spec(raw)
    raise ConfigError(f"no spec file or shipped suite named {name_or_path!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asyncfp",
                                     description="asynchronous fixed-point experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a suite spec (file path or shipped name)")
    run_p.add_argument("spec")
    run_p.add_argument("--out", default="results")
    run_p.add_argument("--seed-offset", type=int, default=0)
    run_p.add_argument("--threads", type=int, default=1)
    sub.add_parser("list-suites", help="list shipped suite names")
    desc_p = sub.add_parser("describe", help="describe a shipped suite or spec file")
    desc_p.add_argument("spec")
    args = parser.parse_args(argv)

    if args.command == "list-suites":
        for name in shipped_suites():
            print(name)
        return 0
    try:
        spec = resolve_spec(args.spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "describe":
        print(f"experiment: {spec.experiment}")
        if spec.description:
            print(f"description: {spec.description}")
        for var in spec.variants:
            axes = ", ".join(f"{k}={v}" for k, v in sorted(var.sweep.items())) or "none"
            print(f"  variant {var.name}: problem={var.problem['kind']}, "
                  f"mode={var.run.get('mode', 'sync')}, sweep axes: {axes}, "
                  f"seeds: {list(var.seeds)}")
        return 0
    try:
        records, _ = run_suite(spec, args.out, args.seed_offset, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    bad = [r for r in records if r.require_convergence and r.trace.status == engine.DIVERGED]
    for rec in records:
        print(f"{rec.config} seed={rec.seed}: {rec.trace.status} "
              f"wu={rec.trace.worker_updates} time={rec.trace.wall_time:.3f}s")
    if bad:
        print(f"{len(bad)} run(s) diverged that were required to converge", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
