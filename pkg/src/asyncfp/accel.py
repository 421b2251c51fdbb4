"""Coordinator-level Anderson/DIIS acceleration: bounded history window,
extrapolation candidate, residual-decrease safeguard, and damped mixing."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import numkit

MONITOR_ONLY = "monitor_only"
COORDINATOR_ACCEL = "coordinator_accel"
PERIODIC_ACCEL = "periodic_accel"
DAMPED_ONLY = "damped_only"

_MODES = (MONITOR_ONLY, COORDINATOR_ACCEL, PERIODIC_ACCEL, DAMPED_ONLY)


@dataclass(frozen=True)
class AccelMode:
    """Coordinator policy: monitor residuals only, extrapolate at every
    firing opportunity, fire periodically with damped mixing in between,
    or apply damped mixing alone."""

    kind: str = MONITOR_ONLY
    period: int = 5
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in _MODES:
            raise ValueError(f"unknown acceleration mode {self.kind!r}")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("damping alpha must be in (0, 1]")


class AndersonWindow:
    """Bounded FIFO of (iterate, map value, residual vector) triples.

    m is the window size: at most m+1 entries are retained, newest last.
    fire_every is the number of applied worker returns between firings in
    asynchronous mode. mixing_beta < 1 blends the extrapolated iterates
    into the extrapolated map values.
    """

    def __init__(self, m: int, fire_every: int = 1, mixing_beta: float = 1.0,
                 regularization: float = 0.0, safeguard: bool = True,
                 clear_on_reject: bool = False):
        if m < 0:
            raise ValueError("window size must be >= 0")
        if fire_every < 1:
            raise ValueError("fire_every must be >= 1")
        if not 0.0 < mixing_beta <= 1.0:
            raise ValueError("mixing_beta must be in (0, 1]")
        self.m = m
        self.fire_every = fire_every
        self.mixing_beta = mixing_beta
        self.regularization = regularization
        self.safeguard = safeguard
        self.clear_on_reject = clear_on_reject
        self._entries = deque(maxlen=m + 1)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, x, gx, residual) -> None:
        x = np.asarray(x, dtype=float)
        gx = np.asarray(gx, dtype=float)
        residual = np.asarray(residual, dtype=float)
        for v in (x, gx, residual):
            if not np.all(np.isfinite(v)):
                raise ValueError("window entries must be finite")
        if self._entries and self._entries[-1][0].size != x.size:
            raise ValueError("window entries must share a common length")
        self._entries.append((x, gx, residual))

    def clear(self) -> None:
        self._entries.clear()

    def entries(self):
        return list(self._entries)


@dataclass
class CandidateInfo:
    coefficients: np.ndarray | None
    ls_residual_norm: float | None
    dropped_columns: int
    fallback: bool


def anderson_candidate(window: AndersonWindow) -> tuple[np.ndarray, CandidateInfo]:
    """Extrapolated vector from the window history.

    Solves the sum-to-one residual minimization over the stored residual
    vectors and combines the stored map values with those weights; with
    mixing_beta < 1 the stored iterates are blended in. A least-squares
    failure falls back to the newest map value and is flagged.
    """
    entries = window.entries()
    if not entries:
        raise ValueError("window is empty")
    xs = [e[0] for e in entries]
    gs = [e[1] for e in entries]
    rs = [e[2] for e in entries]
    try:
        sol = numkit.solve_constrained_ls(rs, window.regularization)
        alpha = sol.coefficients
        if not np.all(np.isfinite(alpha)):
            raise ValueError("non-finite coefficients")
    except (ValueError, np.linalg.LinAlgError):
        return gs[-1].copy(), CandidateInfo(None, None, 0, True)
    mixed_g = alpha @ np.stack(gs)
    if window.mixing_beta < 1.0:
        mixed_x = alpha @ np.stack(xs)
        cand = (1.0 - window.mixing_beta) * mixed_x + window.mixing_beta * mixed_g
    else:
        cand = mixed_g
    if not np.all(np.isfinite(cand)):
        return gs[-1].copy(), CandidateInfo(None, None, 0, True)
    return cand, CandidateInfo(alpha, sol.residual_norm, sol.dropped_columns, False)


@dataclass
class SafeguardResult:
    next_x: np.ndarray
    accepted: bool
    candidate_residual: float
    current_residual: float
    fallback: bool
    candidate: np.ndarray | None = None


def safeguarded_step(problem, window: AndersonWindow, x_current,
                     gx_current=None, current_residual=None) -> SafeguardResult:
    """Extrapolate and accept only on strict native-residual decrease.

    The candidate replaces the plain step iff its native residual norm is
    strictly below the residual at x_current; otherwise the plain step
    G(x_current) is returned. gx_current and current_residual can be
    passed to reuse evaluations the caller already has.
    """
    x_current = np.asarray(x_current, dtype=float)
    if len(window) == 0:
        raise ValueError("window is empty")
    if gx_current is None:
        gx_current = problem.apply_full_map(x_current)
    if current_residual is None:
        current_residual = problem.residual_norm(x_current)

    mixed, info = anderson_candidate(window)
    if info.fallback:
        # gx_current is already an iterate-space plain step
        return SafeguardResult(np.asarray(gx_current, dtype=float), False,
                               float("inf"), current_residual, True)
    candidate = problem.accel_candidate_to_iterate(mixed)
    if np.all(np.isfinite(candidate)):
        cand_res = problem.residual_norm(candidate)
    else:
        cand_res = float("inf")
    if not window.safeguard or cand_res < current_residual:
        return SafeguardResult(candidate, True, cand_res, current_residual, False,
                               candidate=candidate)
    if window.clear_on_reject:
        window.clear()
    plain = np.asarray(gx_current, dtype=float)
    return SafeguardResult(plain, False, cand_res, current_residual, False,
                           candidate=candidate)


def damped_mix(x, gx, alpha: float) -> np.ndarray:
    """(1 - alpha) * x + alpha * gx elementwise."""
    x = np.asarray(x, dtype=float)
    gx = np.asarray(gx, dtype=float)
    if x.shape != gx.shape:
        raise ValueError("damped_mix requires vectors of equal shape")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    return (1.0 - alpha) * x + alpha * gx
