"""Partitioned fixed-point problem abstraction: block partitions, the
coordinator's iterate with staleness bookkeeping, native residual norms,
and the coupling-density measurement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

L2 = "l2"
LINF = "linf"


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint index blocks covering 0..n."""

    n: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=np.intp) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        seen = np.zeros(self.n, dtype=bool)
        for b in blocks:
            if b.size == 0:
                raise ValueError("empty block in partition")
            if np.any(b < 0) or np.any(b >= self.n):
                raise ValueError("block index out of range")
            if np.any(seen[b]):
                raise ValueError("blocks are not disjoint")
            seen[b] = True
        if not np.all(seen):
            raise ValueError("blocks do not cover the index set")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)


@dataclass
class IterateState:
    """Global solution vector plus per-block vintage counters.

    block_vintage[j] is the global step at which block j was last
    written; global_step increments by exactly one per applied update.
    """

    x: np.ndarray
    block_vintage: np.ndarray
    global_step: int = 0

    @classmethod
    def fresh(cls, x0: np.ndarray, num_blocks: int) -> "IterateState":
        return cls(np.array(x0, dtype=float), np.zeros(num_blocks, dtype=np.int64), 0)

    def apply_block(self, partition: BlockPartition, block_id: int, values: np.ndarray) -> None:
        self.x[partition.blocks[block_id]] = values
        self.global_step += 1
        self.block_vintage[block_id] = self.global_step

    def apply_indices(self, partition: BlockPartition, indices: np.ndarray, values: np.ndarray) -> None:
        self.x[indices] = values
        self.global_step += 1
        touched = np.zeros(partition.n, dtype=bool)
        touched[indices] = True
        for j, blk in enumerate(partition.blocks):
            if touched[blk].any():
                self.block_vintage[j] = self.global_step

    def apply_full(self, x_new: np.ndarray) -> None:
        """Coordinator-level rewrite of the whole iterate (acceleration)."""
        self.x = np.array(x_new, dtype=float)
        self.global_step += 1
        self.block_vintage[:] = self.global_step


class FixedPointProblem:
    """Base class for one partitioned fixed-point map.

    Subclasses provide the map restricted to blocks, the native residual,
    and the coupling measurement. Instances are immutable after
    construction and safe to share across workers.
    """

    name = "problem"
    native_norm = L2
    evaluation_kind = "partial-update"
    tracks_metrics = False

    def __init__(self, partition: BlockPartition):
        self.partition = partition
        self.n = partition.n

    def initial_guess(self) -> np.ndarray:
        return np.zeros(self.n)

    def evaluate_block(self, block_id: int, snapshot: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate_indices(self, indices: np.ndarray, snapshot: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.name} does not support index selection")

    def apply_full_map(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        for j, blk in enumerate(self.partition.blocks):
            out[blk] = self.evaluate_block(j, x)
        return out

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def norm(self, v: np.ndarray) -> float:
        if self.native_norm == LINF:
            return float(np.max(np.abs(v))) if v.size else 0.0
        return float(np.linalg.norm(v))

    def residual_norm_of(self, rvec: np.ndarray) -> float:
        """Monitoring norm of an already-computed residual vector."""
        return self.norm(rvec)

    def residual_norm(self, x: np.ndarray) -> float:
        if not np.all(np.isfinite(x)):
            return float("inf")
        return self.residual_norm_of(self.residual_vector(x))

    def map_and_residual(self, x: np.ndarray):
        """(G(x), native residual vector), sharing work where possible."""
        return self.apply_full_map(x), self.residual_vector(x)

    def coupling_fraction(self, partition: BlockPartition) -> np.ndarray:
        raise NotImplementedError

    def post_apply(self, x: np.ndarray) -> np.ndarray:
        """Coordinator hook after applying a partial update."""
        return x

    # -- acceleration hooks -------------------------------------------------
    def accel_mix_value(self, x: np.ndarray, rvec: np.ndarray, assembled=None) -> np.ndarray:
        """Vector entering the extrapolation history for iterate x.

        assembled, when present, is the engine's already-computed map value
        at x (a synchronous round result); otherwise the hook must derive
        the map value cheaply from the monitoring residual.
        """
        if assembled is not None:
            return assembled
        return self.apply_full_map(x)

    def accel_candidate_to_iterate(self, mixed: np.ndarray) -> np.ndarray:
        return mixed

    def run_metrics(self, x: np.ndarray) -> dict:
        """Problem-specific scalars recorded on the run summary."""
        return {}

    def converged_extra(self, x: np.ndarray, prev_metrics: dict, metrics: dict) -> bool:
        """Additional convergence predicate beyond the residual threshold."""
        return True


def evaluate_block(problem: FixedPointProblem, block_id: int, snapshot) -> np.ndarray:
    snapshot = np.asarray(snapshot, dtype=float)
    if snapshot.size != problem.n:
        raise ValueError("snapshot length does not match problem size")
    if not np.all(np.isfinite(snapshot)):
        raise ValueError("snapshot contains non-finite values")
    if not 0 <= block_id < problem.partition.num_blocks:
        raise ValueError("invalid block id")
    return problem.evaluate_block(block_id, snapshot)


def apply_full_map(problem: FixedPointProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("iterate contains non-finite values")
    return problem.apply_full_map(x)


def residual_norm(problem: FixedPointProblem, x) -> float:
    return problem.residual_norm(np.asarray(x, dtype=float))


def coupling_fraction(problem: FixedPointProblem, partition: BlockPartition) -> np.ndarray:
    return problem.coupling_fraction(partition)
