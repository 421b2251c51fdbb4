"""Readers for the benchmark output schemas: per-run trace CSVs with
their JSON summaries, the suite summary table, and SCF cluster labels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRACE_COLUMNS = ("sim_time_s", "worker_updates", "residual", "event")
SUMMARY_COLUMNS = ("experiment", "config", "seed", "status", "wu",
                   "time_s", "final_residual", "speedup")


class SchemaError(ValueError):
    """Input file does not match the benchmark schema."""


@dataclass
class RunData:
    config: str
    seed: int
    mode: str
    summary: dict
    sim_time: np.ndarray
    worker_updates: np.ndarray
    residual: np.ndarray
    event: list

    @property
    def variant(self) -> str:
        return self.config.split("|", 1)[0]

    def sweep_value(self, key: str, default=None):
        if "|" not in self.config:
            return default
        for part in self.config.split("|", 1)[1].split(";"):
            k, _, v = part.partition("=")
            if k == key:
                return v
        return default


def read_trace(path) -> dict:
    path = Path(path)
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty trace file")
        for col in TRACE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        idx = {c: header.index(c) for c in TRACE_COLUMNS}
        t, wu, res, ev = [], [], [], []
        for row in reader:
            t.append(float(row[idx["sim_time_s"]]))
            wu.append(int(row[idx["worker_updates"]]))
            res.append(float(row[idx["residual"]]))
            ev.append(row[idx["event"]])
    return {"sim_time": np.array(t), "worker_updates": np.array(wu),
            "residual": np.array(res), "event": ev}


def load_runs(experiment_dir) -> list:
    """All runs of one experiment directory, sorted by (config, seed)."""
    experiment_dir = Path(experiment_dir)
    runs = []
    for meta_path in sorted(experiment_dir.glob("*.summary.json")):
        summary = json.loads(meta_path.read_text())
        trace_path = meta_path.with_name(meta_path.name.replace(".summary.json", ".trace.csv"))
        if trace_path.exists():
            trace = read_trace(trace_path)
        else:
            trace = {"sim_time": np.array([]), "worker_updates": np.array([]),
                     "residual": np.array([]), "event": []}
        runs.append(RunData(summary["config"], int(summary["seed"]),
                            summary.get("mode", ""), summary,
                            trace["sim_time"], trace["worker_updates"],
                            trace["residual"], trace["event"]))
    runs.sort(key=lambda r: (r.config, r.seed))
    return runs


def read_summary(experiment_dir) -> list:
    path = Path(experiment_dir) / "summary.csv"
    if not path.exists():
        raise SchemaError(f"missing summary.csv in {experiment_dir}")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty summary file")
        for col in SUMMARY_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        idx = {c: header.index(c) for c in SUMMARY_COLUMNS}
        rows = []
        for row in reader:
            rows.append({
                "experiment": row[idx["experiment"]],
                "config": row[idx["config"]],
                "seed": int(row[idx["seed"]]),
                "status": row[idx["status"]],
                "wu": int(row[idx["wu"]]),
                "time_s": float(row[idx["time_s"]]),
                "final_residual": float(row[idx["final_residual"]]),
                "speedup": float(row[idx["speedup"]]) if row[idx["speedup"]] else None,
            })
    return rows


def read_clusters(experiment_dir) -> list:
    path = Path(experiment_dir) / "clusters.csv"
    if not path.exists():
        return []
    with path.open() as fh:
        reader = csv.DictReader(fh)
        return [dict(row) for row in reader]


def thin(x: np.ndarray, y: np.ndarray, max_points: int = 1500):
    """Deterministic downsampling that always keeps the last point."""
    n = len(x)
    if n <= max_points:
        return x, y
    step = int(np.ceil(n / max_points))
    keep = np.arange(0, n, step)
    if keep[-1] != n - 1:
        keep = np.append(keep, n - 1)
    return x[keep], y[keep]
