"""Figure families for the benchmark output: convergence panels, sweep
charts, and the stochastic SCF scatter. Rendering is deterministic for
fixed inputs: series are sorted, no timestamps or jitter."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import RunData, SchemaError, load_runs, read_clusters, read_summary, thin

SYNC_STYLE = {"linestyle": "-"}
ASYNC_STYLE = {"linestyle": "--"}


@dataclass(frozen=True)
class FigureSpec:
    family: str
    input_dir: str
    output_path: str


@dataclass
class RenderReport:
    family: str
    output_path: str
    series: int


def _style(mode: str) -> dict:
    return dict(SYNC_STYLE if mode == "sync" else ASYNC_STYLE)


def _finite_log(residual: np.ndarray) -> np.ndarray:
    out = np.array(residual, dtype=float)
    out[~np.isfinite(out)] = np.nan
    out[out <= 0] = np.nan
    return out


def _save(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata={"Software": "plotkit"})
    plt.close(fig)


def render_straggler(spec: FigureSpec) -> RenderReport:
    """Two panels: residual vs applied updates and residual vs simulated
    time. Solid lines are synchronous runs, dashed asynchronous."""
    runs = load_runs(spec.input_dir)
    if not runs:
        raise SchemaError(f"no runs found under {spec.input_dir}")
    fig, (ax_wu, ax_t) = plt.subplots(1, 2, figsize=(10, 4))
    series = 0
    for run in runs:
        if run.sim_time.size == 0:
            continue
        label = run.config if run.seed == 0 else f"{run.config} s{run.seed}"
        res = _finite_log(run.residual)
        x1, y1 = thin(run.worker_updates, res)
        ax_wu.semilogy(x1, y1, label=label, **_style(run.mode))
        x2, y2 = thin(run.sim_time, res)
        ax_t.semilogy(x2, y2, **_style(run.mode))
        series += 1
    if series == 0:
        plt.close(fig)
        raise SchemaError("trace files contain no events")
    ax_wu.set_xlabel("worker updates")
    ax_wu.set_ylabel("residual")
    ax_t.set_xlabel("simulated time (s)")
    ax_wu.legend(fontsize=6)
    fig.suptitle("straggler tolerance: solid = sync, dashed = async")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), series)


def render_anderson_sweep(spec: FigureSpec) -> RenderReport:
    """Window-size and firing-frequency panels against the unaccelerated
    asynchronous baseline; non-converged sweep points are marked."""
    rows = read_summary(spec.input_dir)
    sync_rows = sorted((r for r in rows if r["config"].startswith("sync-window")),
                       key=lambda r: int(r["config"].split("window_m=")[1]))
    fire_rows = sorted((r for r in rows if r["config"].startswith("async-fire")),
                       key=lambda r: int(r["config"].split("fire_every=")[1]))
    base_rows = [r for r in rows if r["config"].startswith("async-baseline")]
    if not sync_rows and not fire_rows:
        raise SchemaError("summary.csv has no sync-window or async-fire rows")
    fig, (ax_m, ax_e) = plt.subplots(1, 2, figsize=(10, 4))
    series = 0
    if sync_rows:
        ms = [int(r["config"].split("window_m=")[1]) for r in sync_rows]
        ax_m.semilogy(ms, [r["wu"] for r in sync_rows], "o-", label="sync")
        series += 1
    ax_m.set_xlabel("window size m")
    ax_m.set_ylabel("worker updates at convergence")
    ax_m.legend(fontsize=7)
    if fire_rows:
        es = [int(r["config"].split("fire_every=")[1]) for r in fire_rows]
        wu = [r["wu"] for r in fire_rows]
        ax_e.semilogy(es, wu, "s--", label="async accel")
        bad = [(e, w) for e, w, r in zip(es, wu, fire_rows) if r["status"] != "converged"]
        if bad:
            ax_e.plot([b[0] for b in bad], [b[1] for b in bad], "rx", markersize=10,
                      label="not converged")
            series += 1
        series += 1
    if base_rows:
        ax_e.axhline(base_rows[0]["wu"], color="gray", label="no acceleration")
        series += 1
    ax_e.set_xscale("log", base=2)
    ax_e.set_xlabel("returns between firings E")
    ax_e.legend(fontsize=7)
    fig.suptitle("extrapolation sweeps for block Jacobi")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), series)


def render_coupling(spec: FigureSpec) -> RenderReport:
    """Rounds to tolerance for one vs ten inner sweeps per block size."""
    runs = load_runs(spec.input_dir)
    if not runs:
        raise SchemaError(f"no runs found under {spec.input_dir}")
    points = {}
    for run in runs:
        rows = run.variant.replace("rows", "")
        sweeps = run.sweep_value("n_sweeps", "10")
        if not rows.isdigit():
            continue
        points[(int(rows), int(sweeps))] = run.summary["rounds"]
    if not points:
        raise SchemaError("no block-size runs found")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    series = 0
    for sweeps in sorted({k[1] for k in points}):
        xs = sorted(r for r, s2 in points if s2 == sweeps)
        ax.semilogy(xs, [points[(x, sweeps)] for x in xs], "o-",
                    label=f"{sweeps} sweep(s)")
        series += 1
    ax.set_xlabel("grid rows per block")
    ax.set_ylabel("rounds to tolerance")
    ax.legend()
    fig.suptitle("multi-sweep payoff vs block size")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), series)


def _median_band(ax, group, x_attr, label, style):
    """Median residual curve over realizations with a min-max band on a
    common update grid."""
    grids = []
    for run in group:
        res = _finite_log(run.residual)
        grids.append((getattr(run, x_attr), res))
    xmax = min(g[0][-1] for g in grids if len(g[0]))
    grid = np.linspace(0, xmax, 400)
    curves = []
    for x, y in grids:
        logy = np.log10(np.where(np.isnan(y), np.nanmin(y[np.isfinite(y)]) if np.any(np.isfinite(y)) else 1.0, y))
        curves.append(np.interp(grid, x, logy))
    curves = np.array(curves)
    med = 10 ** np.median(curves, axis=0)
    lo = 10 ** curves.min(axis=0)
    hi = 10 ** curves.max(axis=0)
    ax.semilogy(grid, med, label=label, **style)
    if len(curves) > 1:
        ax.fill_between(grid, lo, hi, alpha=0.2)


def render_vi_gamma(spec: FigureSpec) -> RenderReport:
    """Iteration reduction from extrapolation versus the discount factor."""
    runs = load_runs(spec.input_dir)
    plain = {run.sweep_value("gamma"): run.summary["rounds"]
             for run in runs if run.variant == "sync-plain"}
    accel = {run.sweep_value("gamma"): run.summary["rounds"]
             for run in runs if run.variant == "sync-anderson"}
    gammas = sorted(set(plain) & set(accel), key=float)
    if not gammas:
        raise SchemaError("need sync-plain and sync-anderson runs")
    async_plain = [r.summary["wu"] for r in runs if r.variant == "async-plain"]
    async_accel = [r.summary["wu"] for r in runs if r.variant == "async-anderson"]
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ratios = [plain[g] / accel[g] for g in gammas]
    ax.bar(range(len(gammas)), ratios, color="tab:orange")
    ax.set_xticks(range(len(gammas)), [str(g) for g in gammas])
    ax.set_xlabel("discount factor")
    ax.set_ylabel("iteration reduction (sync)")
    series = 1
    if async_plain and async_accel:
        ratio = np.median(async_plain) / np.median(async_accel)
        ax2.bar([0], [ratio], color="tab:blue")
        ax2.set_xticks([0], ["async @ 0.95"])
        ax2.set_ylabel("update reduction (async)")
        series += 1
    fig.suptitle("extrapolation benefit vs discount factor")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), series)


def render_vi_selection(spec: FigureSpec) -> RenderReport:
    """Median rounds per selection strategy."""
    runs = load_runs(spec.input_dir)
    groups = {}
    for run in runs:
        key = run.sweep_value("selection_kind", run.variant)
        groups.setdefault(key, []).append(
            run.summary["rounds"] if run.mode == "sync" else run.summary["wu"])
    if not groups:
        raise SchemaError(f"no runs found under {spec.input_dir}")
    names = sorted(groups)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(range(len(names)), [float(np.median(groups[n])) for n in names])
    ax.set_xticks(range(len(names)), names, rotation=20, fontsize=7)
    ax.set_ylabel("median iterations to tolerance")
    fig.suptitle("update-target selection")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), len(names))


def render_scf_stochastic(spec: FigureSpec) -> RenderReport:
    """Per-realization energy error for the damped asynchronous runs;
    circles mark runs on the reference solution, crosses the others."""
    runs = load_runs(spec.input_dir)
    ref = [r for r in runs if r.variant == "sync-diis-u25"]
    sto = [r for r in runs if r.variant == "stochastic-u25"]
    if not ref or not sto:
        raise SchemaError("need sync-diis-u25 and stochastic-u25 runs")
    e_ref = ref[0].summary["energy"]
    fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(9, 4))
    errs = np.array([abs(r.summary.get("energy", np.nan) - e_ref) for r in sto])
    correct = errs <= 1e-4
    ax_a.bar([0], [float(np.mean(correct))])
    ax_a.set_ylim(0, 1)
    ax_a.set_xticks([0], ["fraction on reference solution"])
    seeds = [r.seed for r in sto]
    floor = 1e-16
    ax_b.semilogy(np.array(seeds)[correct], np.maximum(errs[correct], floor), "o",
                  label="reference")
    ax_b.semilogy(np.array(seeds)[~correct], np.maximum(errs[~correct], floor), "x",
                  label="other")
    ax_b.set_xlabel("realization")
    ax_b.set_ylabel("|energy - reference|")
    ax_b.legend(fontsize=7)
    fig.suptitle("stochastic damped async SCF")
    fig.tight_layout()
    _save(fig, spec.output_path)
    return RenderReport(spec.family, str(spec.output_path), 2)


def render_scf_convergence(spec: FigureSpec) -> RenderReport:
    """Commutator-residual curves for the SCF regimes."""
    runs = load_runs(spec.input_dir)
    fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(10, 4))
    series = 0
    grouped = {}
    for run in runs:
        if run.variant in ("sync-diis-u2", "async-plain-u2", "async-diis-u2"):
            grouped.setdefault(run.variant, []).append(run)
    for name in sorted(grouped):
        group = [r for r in grouped[name] if r.worker_updates.size]
        if not group:
            continue
        _median_band(ax_a, group, "worker_updates", name, _style(group[0].mode))
        series += 1
    ax_a.set_xlabel("worker updates")
    ax_a.set_ylabel("commutator residual")
    ax_a.legend(fontsize=6)
    for run in runs:
        if run.variant.startswith("u4-") and run.sim_time.size:
            x, y = thin(run.sim_time, _finite_log(run.residual))
            ax_b.semilogy(x, y, label=run.variant, **_style(run.mode))
            series += 1
    ax_b.set_xlabel("simulated time (s)")
    ax_b.legend(fontsize=6)
    fig.suptitle("SCF convergence; solid = sync, dashed = async")
    fig.tight_layout()
    _save(fig, spec.output_path)
    if series == 0:
        raise SchemaError("no SCF runs found")
    return RenderReport(spec.family, str(spec.output_path), series)


FIGURE_FAMILIES = {
    "straggler": render_straggler,
    "anderson_sweep": render_anderson_sweep,
    "coupling": render_coupling,
    "vi_gamma": render_vi_gamma,
    "vi_selection": render_vi_selection,
    "scf_stochastic": render_scf_stochastic,
    "scf_convergence": render_scf_convergence,
}


def render(spec: FigureSpec) -> RenderReport:
    """Render one figure family from benchmark output; read-only over the
    input CSVs."""
    if spec.family not in FIGURE_FAMILIES:
        raise ValueError(f"unknown figure family {spec.family!r}; "
                         f"choose one of {sorted(FIGURE_FAMILIES)}")
    return FIGURE_FAMILIES[spec.family](spec)
