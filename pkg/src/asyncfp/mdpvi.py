"""MDP generators (Garnet, grid world), the Bellman optimality operator,
policy evaluation, and exact-solution oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fpcore import LINF, BlockPartition, FixedPointProblem


@dataclass(frozen=True)
class Mdp:
    """Finite MDP with a fixed branching factor.

    successors[s, a] lists the b reachable states and probs[s, a] their
    probabilities (each row sums to one). rewards[s, a] is the immediate
    reward and gamma the discount factor.
    """

    successors: np.ndarray   # (S, A, b) int
    probs: np.ndarray        # (S, A, b) float
    rewards: np.ndarray      # (S, A) float
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        sums = self.probs.sum(axis=2)
        if np.any(self.probs < 0) or np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValueError("transition probabilities must be nonnegative and sum to 1")

    @property
    def num_states(self) -> int:
        return self.successors.shape[0]

    @property
    def num_actions(self) -> int:
        return self.successors.shape[1]


def make_garnet(seed: int, num_states: int, num_actions: int, branching: int,
                gamma: float) -> Mdp:
    """Random Garnet MDP: per (s, a), `branching` distinct successors drawn
    uniformly without replacement, probabilities from sorted uniform cut
    points, rewards uniform on [0, 1]. Fully determined by the seed."""
    if branching > num_states:
        raise ValueError("branching factor exceeds the number of states")
    rng = np.random.default_rng(seed)
    succ = np.empty((num_states, num_actions, branching), dtype=np.int64)
    probs = np.empty((num_states, num_actions, branching))
    rewards = np.empty((num_states, num_actions))
    for s in range(num_states):
        for a in range(num_actions):
            succ[s, a] = rng.choice(num_states, size=branching, replace=False)
            if branching == 1:
                probs[s, a] = 1.0
            else:
                cuts = np.sort(rng.uniform(0.0, 1.0, size=branching - 1))
                edges = np.concatenate(([0.0], cuts, [1.0]))
                probs[s, a] = np.diff(edges)
            rewards[s, a] = rng.uniform(0.0, 1.0)
    return Mdp(succ, probs, rewards, gamma)


def make_gridworld(side: int, gamma: float):
    """Deterministic four-action navigation on a side-by-side grid with an
    absorbing goal in the far corner; reward 1 on transitions entering the
    goal. Returns (mdp, v_star) with the closed-form optimal values
    v*(s) = gamma^(d(s) - 1) for Manhattan distance d, v*(goal) = 0."""
    if side < 2:
        raise ValueError("side must be >= 2")
    n = side * side
    goal = n - 1
    moves = ((0, -1), (0, 1), (-1, 0), (1, 0))   # up, down, left, right in (row, col)
    succ = np.empty((n, 4, 1), dtype=np.int64)
    probs = np.ones((n, 4, 1))
    rewards = np.zeros((n, 4))
    for s in range(n):
        r, c = divmod(s, side)
        for a, (dr, dc) in enumerate(moves):
            if s == goal:
                succ[s, a, 0] = goal
                continue
            rr = min(max(r + dr, 0), side - 1)
            cc = min(max(c + dc, 0), side - 1)
            nxt = rr * side + cc
            succ[s, a, 0] = nxt
            if nxt == goal:
                rewards[s, a] = 1.0
    mdp = Mdp(succ, probs, rewards, gamma)
    v_star = np.empty(n)
    gr, gc = divmod(goal, side)
    for s in range(n):
        r, c = divmod(s, side)
        d = abs(r - gr) + abs(c - gc)
        v_star[s] = 0.0 if s == goal else gamma ** (d - 1)
    return mdp, v_star


def _q_values(mdp: Mdp, v: np.ndarray, states=None) -> np.ndarray:
    if states is None:
        succ = mdp.successors
        rew = mdp.rewards
        pr = mdp.probs
    else:
        succ = mdp.successors[states]
        rew = mdp.rewards[states]
        pr = mdp.probs[states]
    return rew + mdp.gamma * np.einsum("sab,sab->sa", pr, v[succ])


def bellman_apply(mdp: Mdp, v: np.ndarray, states=None) -> np.ndarray:
    """(T v)(s) = max_a [R(s, a) + gamma * sum P(s'|s, a) v(s')], with
    argmax ties resolved toward the lowest action index."""
    v = np.asarray(v, dtype=float)
    return _q_values(mdp, v, states).max(axis=1)


def greedy_policy(mdp: Mdp, v: np.ndarray) -> np.ndarray:
    return _q_values(mdp, np.asarray(v, dtype=float)).argmax(axis=1)


def policy_eval_apply(mdp: Mdp, policy: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Linear policy-evaluation map r_pi + gamma * P_pi v."""
    policy = np.asarray(policy, dtype=np.intp)
    v = np.asarray(v, dtype=float)
    s_idx = np.arange(mdp.num_states)
    succ = mdp.successors[s_idx, policy]
    pr = mdp.probs[s_idx, policy]
    return mdp.rewards[s_idx, policy] + mdp.gamma * np.einsum("sb,sb->s", pr, v[succ])


def policy_matrix(mdp: Mdp, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(P_pi, r_pi) as dense arrays, for direct-solve oracles."""
    n = mdp.num_states
    policy = np.asarray(policy, dtype=np.intp)
    p = np.zeros((n, n))
    for s in range(n):
        a = policy[s]
        for t, pr in zip(mdp.successors[s, a], mdp.probs[s, a]):
            p[s, t] += pr
    r = mdp.rewards[np.arange(n), policy]
    return p, r


def value_iteration(mdp: Mdp, tol: float = 1e-8, max_iters: int = 1_000_000) -> np.ndarray:
    v = np.zeros(mdp.num_states)
    for _ in range(max_iters):
        tv = bellman_apply(mdp, v)
        if np.max(np.abs(tv - v)) <= tol:
            return tv
        v = tv
    raise RuntimeError("value iteration did not converge within the budget")


def make_state_partition(num_states: int, num_blocks: int) -> BlockPartition:
    edges = np.linspace(0, num_states, num_blocks + 1).astype(int)
    blocks = tuple(np.arange(edges[i], edges[i + 1]) for i in range(num_blocks))
    return BlockPartition(num_states, blocks)


class VIProblem(FixedPointProblem):
    """Partitioned value iteration; the native residual is the Bellman
    residual T v - v in the supremum norm."""

    name = "value_iteration"
    native_norm = LINF
    evaluation_kind = "partial-update"

    def __init__(self, mdp: Mdp, partition: BlockPartition):
        super().__init__(partition)
        if partition.n != mdp.num_states:
            raise ValueError("partition does not match the state count")
        self.mdp = mdp

    def evaluate_block(self, block_id: int, snapshot: np.ndarray) -> np.ndarray:
        return bellman_apply(self.mdp, snapshot, self.partition.blocks[block_id])

    def evaluate_indices(self, indices: np.ndarray, snapshot: np.ndarray) -> np.ndarray:
        return bellman_apply(self.mdp, snapshot, np.asarray(indices, dtype=np.intp))

    def apply_full_map(self, x: np.ndarray) -> np.ndarray:
        return bellman_apply(self.mdp, x)

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        return bellman_apply(self.mdp, x) - x

    def map_and_residual(self, x: np.ndarray):
        tv = bellman_apply(self.mdp, x)
        return tv, tv - x

    def accel_mix_value(self, x, rvec, assembled=None):
        if assembled is not None:
            return assembled
        return x + rvec      # T v recovered from the Bellman residual

    def coupling_fraction(self, partition: BlockPartition) -> np.ndarray:
        """Per block, the mean in-block transition-probability mass over
        the block's (state, action) pairs."""
        block_of = np.empty(self.n, dtype=np.intp)
        for j, blk in enumerate(partition.blocks):
            block_of[blk] = j
        out = np.empty(partition.num_blocks)
        for j, blk in enumerate(partition.blocks):
            succ = self.mdp.successors[blk]
            pr = self.mdp.probs[blk]
            inside = block_of[succ] == j
            mass = np.where(inside, pr, 0.0).sum(axis=2)
            out[j] = float(mass.mean())
        return out


class PolicyEvalProblem(FixedPointProblem):
    """Linear policy-evaluation fixed point for a fixed policy."""

    name = "policy_evaluation"
    native_norm = LINF
    evaluation_kind = "partial-update"

    def __init__(self, mdp: Mdp, policy: np.ndarray, partition: BlockPartition):
        super().__init__(partition)
        self.mdp = mdp
        self.policy = np.asarray(policy, dtype=np.intp)

    def apply_full_map(self, x: np.ndarray) -> np.ndarray:
        return policy_eval_apply(self.mdp, self.policy, x)

    def evaluate_block(self, block_id: int, snapshot: np.ndarray) -> np.ndarray:
        return self.apply_full_map(snapshot)[self.partition.blocks[block_id]]

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        return self.apply_full_map(x) - x

    def map_and_residual(self, x: np.ndarray):
        gx = self.apply_full_map(x)
        return gx, gx - x

    def accel_mix_value(self, x, rvec, assembled=None):
        if assembled is not None:
            return assembled
        return x + rvec

    def coupling_fraction(self, partition: BlockPartition) -> np.ndarray:
        return VIProblem.coupling_fraction(self, partition)
