"""Execution runtimes for partitioned fixed-point problems: synchronous
rounds, a deterministic discrete-event asynchronous simulator, and a
real-thread variant; per-worker fault injection, target selection, and
trace collection."""

from __future__ import annotations

import heapq
import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .accel import (
    COORDINATOR_ACCEL,
    DAMPED_ONLY,
    MONITOR_ONLY,
    PERIODIC_ACCEL,
    AccelMode,
    AndersonWindow,
    anderson_candidate,
    damped_mix,
)
from .fpcore import FixedPointProblem, IterateState

SYNC = "sync"
ASYNC_DES = "async_des"
ASYNC_THREADS = "async_threads"

APPLY = "apply"
DROP = "drop"
STALE_DISCARD = "stale_discard"
ACCEL_ACCEPT = "accel_accept"
ACCEL_REJECT = "accel_reject"

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
DIVERGED = "diverged"

DIVERGENCE_SENTINEL = 1e12

FIXED_PARTITION = "fixed_partition"
UNIFORM_RANDOM = "uniform_random"
GREEDY_TOPK = "greedy_topk"


@dataclass(frozen=True)
class FaultProfile:
    """Per-worker fault knobs: completion delay (truncated Gaussian),
    additive Gaussian noise on returned components, drop probability, and
    a staleness cap (None = unlimited)."""

    delay_mean: float = 0.0
    delay_std: float = 0.0
    noise_std: float = 0.0
    drop_prob: float = 0.0
    max_staleness: int | None = None

    def __post_init__(self):
        if self.delay_mean < 0 or self.delay_std < 0 or self.noise_std < 0:
            raise ValueError("fault parameters must be nonnegative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.max_staleness is not None and self.max_staleness < 0:
            raise ValueError("max_staleness must be nonnegative")

    def sample_delay(self, rng: np.random.Generator) -> float:
        if self.delay_std == 0.0:
            return self.delay_mean
        return max(0.0, float(rng.normal(self.delay_mean, self.delay_std)))


@dataclass(frozen=True)
class Selection:
    """Which indices a worker updates per launch."""

    kind: str = FIXED_PARTITION
    k: int | None = None

    def __post_init__(self):
        if self.kind not in (FIXED_PARTITION, UNIFORM_RANDOM, GREEDY_TOPK):
            raise ValueError(f"unknown selection strategy {self.kind!r}")
        if self.kind != FIXED_PARTITION and (self.k is None or self.k < 1):
            raise ValueError("selection strategies need k >= 1")


@dataclass(frozen=True)
class RunConfig:
    mode: str = SYNC
    workers: int = 1
    fault_profiles: tuple = ()
    base_compute_time: float = 0.007
    accel: AccelMode = AccelMode()
    window_m: int = 5
    fire_every: int = 1
    mixing_beta: float = 1.0
    regularization: float = 0.0
    safeguard: bool = True
    clear_on_reject: bool = False
    selection: Selection = Selection()
    tol: float = 1e-6
    max_worker_updates: int = 200_000
    rng_seed: int = 0
    settle_window: int = 1

    def __post_init__(self):
        if self.mode not in (SYNC, ASYNC_DES, ASYNC_THREADS):
            raise ValueError(f"unknown run mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_worker_updates < 1:
            raise ValueError("worker-update budget must be positive")
        if self.settle_window < 1:
            raise ValueError("settle_window must be >= 1")
        if self.base_compute_time < 0:
            raise ValueError("base compute time must be nonnegative")
        profiles = self.fault_profiles
        if isinstance(profiles, FaultProfile):
            profiles = (profiles,) * self.workers
        elif not profiles:
            profiles = (FaultProfile(),) * self.workers
        else:
            profiles = tuple(profiles)
            if len(profiles) == 1:
                profiles = profiles * self.workers
            if len(profiles) != self.workers:
                raise ValueError("need one fault profile per worker")
        object.__setattr__(self, "fault_profiles", profiles)

    def make_window(self) -> AndersonWindow:
        return AndersonWindow(self.window_m, self.fire_every, self.mixing_beta,
                              self.regularization, self.safeguard, self.clear_on_reject)


@dataclass
class AccelEvent:
    sim_time: float
    worker_updates: int
    accepted: bool
    candidate_residual: float
    current_residual: float
    fallback: bool


@dataclass
class RunTrace:
    """Event log plus final status of one run."""

    events: list = field(default_factory=list)   # (sim_time, wu, residual, kind)
    accel_events: list = field(default_factory=list)
    status: str = BUDGET_EXHAUSTED
    final_residual: float = float("inf")
    wall_time: float = 0.0
    worker_updates: int = 0
    rounds: int = 0
    applied: int = 0
    dropped: int = 0
    stale_discarded: int = 0
    completions: int = 0
    accel_accepted: int = 0
    accel_rejected: int = 0
    safeguard_evals: int = 0
    final_x: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)

    def record(self, sim_time, wu, residual, kind):
        self.events.append((sim_time, wu, residual, kind))

    def residuals(self) -> np.ndarray:
        return np.array([e[2] for e in self.events])

    def max_residual(self) -> float:
        vals = [e[2] for e in self.events if np.isfinite(e[2])]
        top = max(vals) if vals else 0.0
        if any(not np.isfinite(e[2]) for e in self.events):
            return float("inf")
        return top

    def summary_dict(self) -> dict:
        out = {
            "status": self.status,
            "wu": self.worker_updates,
            "time_s": self.wall_time,
            "final_residual": self.final_residual,
            "rounds": self.rounds,
            "applied": self.applied,
            "dropped": self.dropped,
            "stale_discarded": self.stale_discarded,
            "completions": self.completions,
            "accel_accepted": self.accel_accepted,
            "accel_rejected": self.accel_rejected,
            "safeguard_evals": self.safeguard_evals,
        }
        out.update(self.metrics)
        return out


def select_targets(strategy: str, residual_vector, k: int | None, rng: np.random.Generator,
                   block: np.ndarray | None = None):
    """Index set a worker will update: its own block, k uniform indices
    without replacement, or the k largest-magnitude residual entries
    (ties to the lowest index)."""
    if strategy == FIXED_PARTITION:
        return block
    n = len(residual_vector)
    if k is None or k > n:
        raise ValueError("k must be given and at most the problem size")
    if strategy == UNIFORM_RANDOM:
        return np.sort(rng.choice(n, size=k, replace=False))
    if strategy == GREEDY_TOPK:
        order = np.argsort(-np.abs(np.asarray(residual_vector)), kind="stable")
        return np.sort(order[:k])
    raise ValueError(f"unknown selection strategy {strategy!r}")


def inject_faults(profile: FaultProfile, values: np.ndarray, staleness: int,
                  rng: np.random.Generator):
    """(outcome, values) where outcome is APPLY, DROP, or STALE_DISCARD.
    Drops are decided first, then the staleness cap, then additive noise."""
    if profile.drop_prob > 0.0 and rng.random() < profile.drop_prob:
        return DROP, None
    if profile.max_staleness is not None and staleness > profile.max_staleness:
        return STALE_DISCARD, None
    if profile.noise_std > 0.0:
        values = values + rng.normal(0.0, profile.noise_std, size=values.shape)
    return APPLY, values


class _Coordinator:
    """State shared by the run loops: iterate, window, firing policy,
    trace bookkeeping, and stop conditions."""

    def __init__(self, problem: FixedPointProblem, config: RunConfig):
        self.problem = problem
        self.config = config
        self.rng = np.random.default_rng(config.rng_seed)
        x0 = problem.initial_guess()
        self.state = IterateState.fresh(x0, problem.partition.num_blocks)
        self.window = config.make_window()
        self.trace = RunTrace()
        self.applied_since_fire = 0
        self.last_metrics: dict = {}
        self.settled_streak = 0
        self.stopped = False

    # -- residual & stopping -------------------------------------------------
    def residual_state(self):
        x = self.state.x
        if not np.all(np.isfinite(x)):
            return None, float("inf")
        rvec = self.problem.residual_vector(x)
        return rvec, self.problem.residual_norm_of(rvec)

    def check_stop(self, res: float) -> bool:
        if not np.isfinite(res) or res > DIVERGENCE_SENTINEL:
            self.trace.status = DIVERGED
            self.stopped = True
        elif res <= self.config.tol:
            metrics = self.problem.run_metrics(self.state.x) if self.problem.tracks_metrics else {}
            if self.problem.converged_extra(self.state.x, self.last_metrics, metrics):
                self.settled_streak += 1
                if self.settled_streak >= self.config.settle_window:
                    self.trace.status = CONVERGED
                    self.stopped = True
            else:
                self.settled_streak = 0
            self.last_metrics = metrics
        elif self.trace.worker_updates >= self.config.max_worker_updates:
            self.trace.status = BUDGET_EXHAUSTED
            self.stopped = True
        else:
            self.settled_streak = 0
            if self.problem.tracks_metrics:
                self.last_metrics = self.problem.run_metrics(self.state.x)
        return self.stopped

    # -- damping -------------------------------------------------------------
    def damping_alpha(self, firing_round: bool) -> float | None:
        mode = self.config.accel
        if mode.kind == DAMPED_ONLY:
            return mode.alpha
        if mode.kind == PERIODIC_ACCEL and not firing_round and mode.alpha < 1.0:
            return mode.alpha
        return None

    # -- acceleration --------------------------------------------------------
    def should_fire(self, sync_round: int | None = None) -> bool:
        mode = self.config.accel
        if mode.kind == COORDINATOR_ACCEL:
            if sync_round is not None:
                return True
            return self.applied_since_fire >= self.config.fire_every
        if mode.kind == PERIODIC_ACCEL:
            if sync_round is not None:
                return sync_round % mode.period == 0
            return self.applied_since_fire >= mode.period
        return False

    def fire(self, sim_time: float, x_base: np.ndarray, rvec: np.ndarray,
             cur_res: float, assembled: np.ndarray | None):
        """One extrapolation attempt. Returns the accepted candidate or
        None. x_base is the iterate whose residual gates acceptance;
        assembled, when given, is the plain step already applied."""
        self.applied_since_fire = 0
        problem = self.problem
        mix = problem.accel_mix_value(x_base, rvec, assembled=assembled)
        self.window.push(x_base, mix, rvec)
        mixed, info = anderson_candidate(self.window)
        if info.fallback:
            self.trace.accel_rejected += 1
            self.trace.record(sim_time, self.trace.worker_updates, cur_res, ACCEL_REJECT)
            self.trace.accel_events.append(
                AccelEvent(sim_time, self.trace.worker_updates, False, float("inf"), cur_res, True))
            return None
        try:
            candidate = problem.accel_candidate_to_iterate(mixed)
        except (ValueError, RuntimeError):
            candidate = None
        if candidate is not None and np.all(np.isfinite(candidate)):
            cand_res = problem.residual_norm(candidate)
        else:
            cand_res = float("inf")
        self.trace.safeguard_evals += 1
        accept = cand_res < cur_res if self.config.safeguard else candidate is not None
        if accept:
            self.trace.accel_accepted += 1
            self.trace.record(sim_time, self.trace.worker_updates, cand_res, ACCEL_ACCEPT)
            self.trace.accel_events.append(
                AccelEvent(sim_time, self.trace.worker_updates, True, cand_res, cur_res, False))
            return candidate
        if self.config.clear_on_reject:
            self.window.clear()
        self.trace.accel_rejected += 1
        self.trace.record(sim_time, self.trace.worker_updates, cur_res, ACCEL_REJECT)
        self.trace.accel_events.append(
            AccelEvent(sim_time, self.trace.worker_updates, False, cand_res, cur_res, False))
        return None

    def finalize(self, sim_time: float):
        self.trace.wall_time = sim_time
        self.trace.worker_updates = self.trace.applied
        if np.all(np.isfinite(self.state.x)):
            self.trace.final_residual = self.problem.residual_norm(self.state.x)
            self.trace.metrics = self.problem.run_metrics(self.state.x)
        else:
            self.trace.final_residual = float("inf")
        self.trace.final_x = self.state.x.copy()
        return self.trace


def _worker_targets(coord: _Coordinator, worker: int):
    sel = coord.config.selection
    if sel.kind == FIXED_PARTITION:
        return None
    if sel.kind == UNIFORM_RANDOM:
        return select_targets(sel.kind, np.zeros(coord.problem.n), sel.k, coord.rng)
    rvec = coord.problem.residual_vector(coord.state.x)
    return select_targets(sel.kind, rvec, sel.k, coord.rng)


def _evaluate(problem: FixedPointProblem, worker: int, targets, snapshot: np.ndarray):
    if targets is None:
        return problem.evaluate_block(worker, snapshot)
    return problem.evaluate_indices(targets, snapshot)


def run_sync(problem: FixedPointProblem, config: RunConfig) -> RunTrace:
    """Bulk-synchronous rounds: all workers evaluate on the same snapshot;
    the round's wall time is the base compute time plus the slowest
    sampled delay; acceleration fires at round granularity."""
    if config.mode != SYNC:
        raise ValueError("run_sync requires mode == 'sync'")
    _check_partition(problem, config)
    coord = _Coordinator(problem, config)
    state, trace, rng = coord.state, coord.trace, coord.rng
    sim_time = 0.0
    p = config.workers
    rvec, res = coord.residual_state()
    if problem.tracks_metrics:
        coord.last_metrics = problem.run_metrics(state.x)

    for rnd in range(1, 10 ** 9):
        snapshot = state.x.copy()
        snap_rvec, snap_res = rvec, res
        firing = coord.should_fire(sync_round=rnd) \
            and config.accel.kind in (COORDINATOR_ACCEL, PERIODIC_ACCEL)
        alpha = coord.damping_alpha(firing_round=firing)
        round_delay = 0.0
        outcomes = []
        for w in range(p):
            profile = config.fault_profiles[w]
            round_delay = max(round_delay, profile.sample_delay(rng))
            targets = _worker_targets(coord, w)
            values = _evaluate(problem, w, targets, snapshot)
            outcome, values = inject_faults(profile, values, 0, rng)
            outcomes.append((w, targets, outcome, values))
        sim_time += config.base_compute_time + round_delay
        trace.rounds = rnd
        for w, targets, outcome, values in outcomes:
            trace.completions += 1
            if outcome != APPLY:
                trace.dropped += 1
                continue
            if alpha is not None:
                idx = problem.partition.blocks[w] if targets is None else targets
                values = damped_mix(snapshot[idx], values, alpha)
            if targets is None:
                state.apply_block(problem.partition, w, values)
            else:
                state.apply_indices(problem.partition, targets, values)
            state.x = problem.post_apply(state.x)
            trace.applied += 1
        trace.worker_updates = trace.applied

        rvec, res = coord.residual_state()
        for w, targets, outcome, values in outcomes:
            kind = APPLY if outcome == APPLY else outcome
            trace.record(sim_time, trace.worker_updates, res, kind)

        if firing and snap_rvec is not None:
            candidate = coord.fire(sim_time, snapshot, snap_rvec, snap_res,
                                   assembled=state.x.copy())
            if candidate is not None:
                state.apply_full(candidate)
                state.x = problem.post_apply(state.x)
                rvec, res = coord.residual_state()
        if coord.check_stop(res):
            break
    return coord.finalize(sim_time)


def run_async_des(problem: FixedPointProblem, config: RunConfig) -> RunTrace:
    """Deterministic discrete-event simulation of the asynchronous loop:
    workers launch with a snapshot of the global iterate, complete after
    the base compute time plus a sampled delay, and are relaunched with
    the then-current snapshot; returns are applied in (time, worker)
    order with faults injected; acceleration fires every fire_every
    applied returns."""
    if config.mode != ASYNC_DES:
        raise ValueError("run_async_des requires mode == 'async_des'")
    _check_partition(problem, config)
    coord = _Coordinator(problem, config)
    state, trace, rng = coord.state, coord.trace, coord.rng
    if problem.tracks_metrics:
        coord.last_metrics = problem.run_metrics(state.x)
    heap = []

    def launch(worker: int, now: float):
        profile = config.fault_profiles[worker]
        targets = _worker_targets(coord, worker)
        delay = profile.sample_delay(rng)
        heapq.heappush(heap, (now + config.base_compute_time + delay, worker,
                              state.global_step, state.x.copy(), targets))

    for w in range(config.workers):
        launch(w, 0.0)
    sim_time = 0.0
    last_res = problem.residual_norm(state.x)
    max_completions = max(50_000, 20 * config.max_worker_updates)

    while heap:
        sim_time, w, launch_step, snapshot, targets = heapq.heappop(heap)
        trace.completions += 1
        values = _evaluate(problem, w, targets, snapshot)
        staleness = state.global_step - launch_step
        outcome, values = inject_faults(config.fault_profiles[w], values, staleness, rng)
        if outcome != APPLY:
            if outcome == DROP:
                trace.dropped += 1
            else:
                trace.stale_discarded += 1
            trace.record(sim_time, trace.worker_updates, last_res, outcome)
            if trace.completions >= max_completions:
                trace.status = BUDGET_EXHAUSTED
                break
            launch(w, sim_time)
            continue

        alpha = coord.damping_alpha(firing_round=False)
        idx = problem.partition.blocks[w] if targets is None else targets
        if alpha is not None:
            values = damped_mix(state.x[idx], values, alpha)
        if targets is None:
            state.apply_block(problem.partition, w, values)
        else:
            state.apply_indices(problem.partition, targets, values)
        state.x = problem.post_apply(state.x)
        trace.applied += 1
        trace.worker_updates = trace.applied
        coord.applied_since_fire += 1

        rvec, res = coord.residual_state()
        last_res = res
        trace.record(sim_time, trace.worker_updates, res, APPLY)
        if coord.check_stop(res):
            break

        if coord.should_fire() and rvec is not None:
            candidate = coord.fire(sim_time, state.x, rvec, res, None)
            if candidate is not None:
                state.apply_full(candidate)
                state.x = problem.post_apply(state.x)
                last_res = coord.trace.accel_events[-1].candidate_residual
                if not np.isfinite(last_res) or last_res > DIVERGENCE_SENTINEL:
                    trace.status = DIVERGED
                    break

        if trace.completions >= max_completions:
            trace.status = BUDGET_EXHAUSTED
            break
        launch(w, sim_time)

    return coord.finalize(sim_time)


def run_async_threads(problem: FixedPointProblem, config: RunConfig) -> RunTrace:
    """Real-concurrency analog of the discrete-event loop: one thread per
    worker, delays realized by sleeping, results passed through a queue.
    Traces are not reproducible across runs; worker exceptions count as
    drops."""
    if config.mode != ASYNC_THREADS:
        raise ValueError("run_async_threads requires mode == 'async_threads'")
    _check_partition(problem, config)
    coord = _Coordinator(problem, config)
    state, trace, rng = coord.state, coord.trace, coord.rng
    if problem.tracks_metrics:
        coord.last_metrics = problem.run_metrics(state.x)

    results: queue.Queue = queue.Queue()
    task_queues = [queue.Queue() for _ in range(config.workers)]

    def worker_loop(w: int):
        while True:
            task = task_queues[w].get()
            if task is None:
                return
            launch_step, snapshot, targets, delay = task
            time.sleep(config.base_compute_time + delay)
            try:
                values = _evaluate(problem, w, targets, snapshot)
                results.put((w, launch_step, values))
            except Exception:
                results.put((w, launch_step, None))

    threads = [threading.Thread(target=worker_loop, args=(w,), daemon=True)
               for w in range(config.workers)]
    for t in threads:
        t.start()

    targets_by_worker: dict[int, np.ndarray | None] = {}

    def launch(w: int):
        targets = _worker_targets(coord, w)
        targets_by_worker[w] = targets
        delay = config.fault_profiles[w].sample_delay(rng)
        task_queues[w].put((state.global_step, state.x.copy(), targets, delay))

    start = time.monotonic()
    for w in range(config.workers):
        launch(w)
    last_res = problem.residual_norm(state.x)

    while True:
        w, launch_step, values = results.get()
        now = time.monotonic() - start
        trace.completions += 1
        targets = targets_by_worker.get(w)
        if values is None:
            outcome = DROP
        else:
            staleness = state.global_step - launch_step
            outcome, values = inject_faults(config.fault_profiles[w], values, staleness, rng)
        if outcome != APPLY:
            if outcome == DROP:
                trace.dropped += 1
            else:
                trace.stale_discarded += 1
            trace.record(now, trace.worker_updates, last_res, outcome)
            launch(w)
            continue
        alpha = coord.damping_alpha(firing_round=False)
        idx = problem.partition.blocks[w] if targets is None else targets
        if alpha is not None:
            values = damped_mix(state.x[idx], values, alpha)
        if targets is None:
            state.apply_block(problem.partition, w, values)
        else:
            state.apply_indices(problem.partition, targets, values)
        state.x = problem.post_apply(state.x)
        trace.applied += 1
        trace.worker_updates = trace.applied
        coord.applied_since_fire += 1
        rvec, res = coord.residual_state()
        last_res = res
        trace.record(now, trace.worker_updates, res, APPLY)
        if coord.check_stop(res):
            break
        if coord.should_fire() and rvec is not None:
            candidate = coord.fire(now, state.x, rvec, res, None)
            if candidate is not None:
                state.apply_full(candidate)
                state.x = problem.post_apply(state.x)
        launch(w)

    for q in task_queues:
        q.put(None)
    return coord.finalize(time.monotonic() - start)


def run(problem: FixedPointProblem, config: RunConfig) -> RunTrace:
    if config.mode == SYNC:
        return run_sync(problem, config)
    if config.mode == ASYNC_DES:
        return run_async_des(problem, config)
    return run_async_threads(problem, config)


def _check_partition(problem: FixedPointProblem, config: RunConfig):
    if config.selection.kind == FIXED_PARTITION \
            and config.workers != problem.partition.num_blocks:
        raise ValueError("fixed partition requires one worker per block "
                         f"({problem.partition.num_blocks} blocks, {config.workers} workers)")
