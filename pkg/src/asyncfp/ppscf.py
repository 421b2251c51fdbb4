"""Restricted Hartree-Fock self-consistent field on a one-dimensional
pi-electron chain Hamiltonian with Ohno-parameterized two-electron
integrals; the fixed point acts on the one-particle density matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .fpcore import L2, BlockPartition, FixedPointProblem

LEVEL_SHIFT = 0.1
DEGENERACY_GAP = 1e-10


def ohno_gamma(u: float, r: float) -> float:
    """Two-center repulsion u / sqrt(1 + (u r)^2): u on site, a 1/r
    Coulomb tail at large separation."""
    if u <= 0:
        raise ValueError("on-site repulsion must be positive")
    if r < 0:
        raise ValueError("distance must be nonnegative")
    return u / np.sqrt(1.0 + (u * r) ** 2)


@dataclass(frozen=True)
class PppSystem:
    """Chain of n_atoms sites with nearest-neighbor hopping t, on-site
    repulsion u, unit spacing, and a closed-shell electron count."""

    n_atoms: int
    t: float
    u: float
    n_electrons: int
    gamma_mat: np.ndarray
    h_core: np.ndarray

    @property
    def n_occ(self) -> int:
        return self.n_electrons // 2


def make_system(n_atoms: int, u: float, t: float = -1.0, n_electrons: int | None = None) -> PppSystem:
    if n_atoms < 2:
        raise ValueError("need at least two sites")
    if n_electrons is None:
        n_electrons = n_atoms          # half filling
    if n_electrons % 2 != 0:
        raise ValueError("closed shell requires an even electron count")
    idx = np.arange(n_atoms)
    r = np.abs(idx[:, None] - idx[None, :]).astype(float)
    gamma = u / np.sqrt(1.0 + (u * r) ** 2)
    h = np.zeros((n_atoms, n_atoms))
    for i in range(n_atoms - 1):
        h[i, i + 1] = h[i + 1, i] = t
    return PppSystem(n_atoms, t, u, n_electrons, gamma, h)


def build_fock(system: PppSystem, p: np.ndarray) -> np.ndarray:
    """Zero-differential-overlap Fock matrix:
    F_mm = sum_l P_ll g_ml - 0.5 P_mm g_mm, F_mn = H_mn - 0.5 P_mn g_mn."""
    g = system.gamma_mat
    f = system.h_core - 0.5 * p * g
    np.fill_diagonal(f, np.diag(system.h_core) + g @ np.diag(p) - 0.5 * np.diag(p) * np.diag(g))
    return f


def density_from_fock(system: PppSystem, f: np.ndarray) -> np.ndarray:
    """Occupy the lowest n_electrons / 2 orbitals of f; a degenerate
    frontier gap gets one level-shifted retry before failing."""
    nocc = system.n_occ
    w, c = numkit.sym_eig(f)
    if nocc < system.n_atoms and w[nocc] - w[nocc - 1] < DEGENERACY_GAP:
        c_occ = c[:, :nocc]
        shifted = f + LEVEL_SHIFT * (np.eye(system.n_atoms) - c_occ @ c_occ.T)
        w, c = numkit.sym_eig(shifted)
        if nocc < system.n_atoms and w[nocc] - w[nocc - 1] < DEGENERACY_GAP:
            raise RuntimeError("degenerate frontier orbitals persist after level shift")
    c_occ = c[:, :nocc]
    return 2.0 * c_occ @ c_occ.T


def scf_map(system: PppSystem, p: np.ndarray) -> np.ndarray:
    """One self-consistent field step: Fock build, diagonalization,
    occupation of the lowest orbitals, doubled closed-shell density."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("density matrix contains non-finite entries")
    return density_from_fock(system, build_fock(system, p))


def hf_energy(system: PppSystem, p: np.ndarray) -> float:
    """Closed-shell energy 0.5 * sum P (H + F(P))."""
    f = build_fock(system, p)
    return 0.5 * float(np.sum(p * (system.h_core + f)))


def diis_residual(f: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Commutator F P - P F, flattened row-major; vanishes exactly at
    self-consistency."""
    return (f @ p - p @ f).ravel()


def make_row_partition(n_atoms: int, num_blocks: int) -> BlockPartition:
    """Bands of density-matrix rows in flattened index space."""
    edges = np.linspace(0, n_atoms, num_blocks + 1).astype(int)
    blocks = []
    for i in range(num_blocks):
        rows = np.arange(edges[i], edges[i + 1])
        blocks.append((rows[:, None] * n_atoms + np.arange(n_atoms)[None, :]).ravel())
    return BlockPartition(n_atoms * n_atoms, tuple(blocks))


class ScfProblem(FixedPointProblem):
    """SCF fixed point on the flattened density matrix. Workers run the
    full map on their snapshot and return their owned rows; the
    coordinator symmetrizes after every applied update. Acceleration
    mixes Fock matrices with commutator residuals and converts the mixed
    Fock back to a density."""

    name = "scf"
    native_norm = L2
    evaluation_kind = "full-map"
    tracks_metrics = True

    def __init__(self, system: PppSystem, partition: BlockPartition, de_tol: float = 1e-10):
        super().__init__(partition)
        if partition.n != system.n_atoms ** 2:
            raise ValueError("partition does not match the flattened density size")
        self.system = system
        self.de_tol = de_tol

    def initial_guess(self) -> np.ndarray:
        return density_from_fock(self.system, self.system.h_core).ravel()

    def _mat(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(self.system.n_atoms, self.system.n_atoms)

    def evaluate_block(self, block_id: int, snapshot: np.ndarray) -> np.ndarray:
        p_next = scf_map(self.system, self._mat(snapshot))
        return p_next.ravel()[self.partition.blocks[block_id]]

    def apply_full_map(self, x: np.ndarray) -> np.ndarray:
        return scf_map(self.system, self._mat(x)).ravel()

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        p = self._mat(x)
        return diis_residual(build_fock(self.system, p), p)

    def map_and_residual(self, x: np.ndarray):
        p = self._mat(x)
        f = build_fock(self.system, p)
        return density_from_fock(self.system, f).ravel(), diis_residual(f, p)

    def post_apply(self, x: np.ndarray) -> np.ndarray:
        p = self._mat(x)
        return (0.5 * (p + p.T)).ravel()

    def accel_mix_value(self, x, rvec, assembled=None):
        return build_fock(self.system, self._mat(x)).ravel()

    def accel_candidate_to_iterate(self, mixed: np.ndarray) -> np.ndarray:
        f = self._mat(mixed)
        p = density_from_fock(self.system, 0.5 * (f + f.T))
        return p.ravel()

    def coupling_fraction(self, partition: BlockPartition) -> np.ndarray:
        return np.ones(partition.num_blocks)

    def run_metrics(self, x: np.ndarray) -> dict:
        return {"energy": hf_energy(self.system, self._mat(x))}

    def converged_extra(self, x: np.ndarray, prev_metrics: dict, metrics: dict) -> bool:
        if "energy" not in prev_metrics:
            return False
        return abs(metrics["energy"] - prev_metrics["energy"]) < self.de_tol


def make_problem(n_atoms: int, u: float, num_blocks: int, t: float = -1.0,
                 de_tol: float = 1e-10) -> ScfProblem:
    system = make_system(n_atoms, u, t)
    return ScfProblem(system, make_row_partition(n_atoms, num_blocks), de_tol)
