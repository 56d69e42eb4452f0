"""Instance generators and independent oracles shared by the test modules.

Nothing here calls the package's oracle or iteration code paths it checks.
"""

from collections import deque
from pathlib import Path

import numpy as np
import scipy.linalg

from randkm.graphs import GraphUniverse, WeightedGraph, connected_undirected_edges
from randkm.problem import PartitionedSystem

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

EX1_ROWS = [[1, 2, 1], [2, 4, 2], [3, 6, 3]]
EX1_B = [1, 2, 3]
EX1_X0 = np.array([-3, 1, 2, 2, -2, 1, 1, 3, -1], dtype=float)
EX1_THETAS = np.array([1 / 6, 1 / 24, 1 / 54])
EX1_LIMIT = np.array([-0.1667, 0.3333, 0.5000])

EX2_ROWS = [[1, 0, 0], [2, 1, 0], [3, 1, 2]]
EX2_B = [1, 2, 1]
EX2_SOLUTION = np.array([1.0, 0.0, -1.0])

GOSSIP_ROWS = [[1, 0, 1], [0, 1, 1], [1, 1, 2], [1, -1, 0]]
GOSSIP_B = [3, 1, 4, 2]
GOSSIP_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0)]
GOSSIP_X0 = np.array([-2, -1, 0, 1, 2, -2, -1, 0, 1, 2, -2, -1], dtype=float)


def example1():
    return PartitionedSystem.from_rows(EX1_ROWS, EX1_B)


def example2():
    return PartitionedSystem.from_rows(EX2_ROWS, EX2_B)


def gossip_system():
    return PartitionedSystem.from_rows(GOSSIP_ROWS, GOSSIP_B)


def complete_universe(m):
    return GraphUniverse((WeightedGraph.complete(m),))


def random_instance(rng, m_max=5, q_max=4, n_max=4, directed_prob=0.3, rank_drop_prob=0.4):
    """Consistent desk-scale system plus a universe whose union is strongly connected.

    Small integer coefficients keep everything well conditioned.  Some
    instances have a rank-deficient stacked matrix so the solution set is a
    proper affine family.
    """
    m = int(rng.integers(2, m_max + 1))
    q = int(rng.integers(1, q_max + 1))
    n_graphs = int(rng.integers(1, n_max + 1))
    blocks = []
    x_true = rng.integers(-3, 4, size=q).astype(float)
    drop = q > 1 and rng.random() < rank_drop_prob
    basis = None
    while drop:
        basis = rng.integers(-2, 3, size=(q - 1, q)).astype(float)
        if np.linalg.matrix_rank(basis) == q - 1:
            break
    for _ in range(m):
        mu = int(rng.integers(1, 3))
        while True:
            if drop:
                A = rng.integers(-2, 3, size=(mu, q - 1)).astype(float) @ basis
            else:
                A = rng.integers(-3, 4, size=(mu, q)).astype(float)
            if np.all(np.any(A != 0, axis=1)):
                break
        blocks.append((A, A @ x_true))
    system = PartitionedSystem(blocks)

    tree = connected_undirected_edges(m, rng, extra_prob=0.2)
    buckets = [[] for _ in range(n_graphs)]
    for e in tree:
        buckets[int(rng.integers(n_graphs))].append(e)
    graphs = []
    for k, edges in enumerate(buckets):
        if edges:
            graphs.append(WeightedGraph.metropolis(m, edges, label=f"g{k}"))
        elif rng.random() < directed_prob and m >= 2:
            # directed cycle through a random ordering, doubly stochastic
            perm = rng.permutation(m)
            P = np.zeros((m, m))
            for a, b in zip(perm, np.roll(perm, 1)):
                P[a, b] = 1.0
            graphs.append(WeightedGraph(f"g{k}", 0.5 * (np.eye(m) + P)))
        else:
            graphs.append(WeightedGraph.identity(m, label=f"g{k}"))
    return system, GraphUniverse(tuple(graphs))


def strongly_connected_bfs(adjacency):
    """Reachability from node 0 forwards and backwards, by plain BFS."""
    adjacency = np.asarray(adjacency, dtype=bool)
    n = adjacency.shape[0]

    def reach(adj):
        seen = {0}
        todo = deque([0])
        while todo:
            u = todo.popleft()
            for v in np.flatnonzero(adj[u]):
                if v not in seen:
                    seen.add(int(v))
                    todo.append(int(v))
        return len(seen) == n

    return reach(adjacency) and reach(adjacency.T)


def dense_tilde(system, thetas):
    """Block-diagonal (I - theta A^T A) and offsets, built from scratch."""
    mats = [np.eye(system.q) - t * A.T @ A for (A, _), t in zip(system.blocks, thetas)]
    offs = [t * A.T @ b for (A, b), t in zip(system.blocks, thetas)]
    return scipy.linalg.block_diag(*mats), np.concatenate(offs)


def dense_step_oracle(system, thetas, W, beta, x):
    """One iteration via an explicitly assembled mq x mq matrix."""
    At, bt = dense_tilde(system, thetas)
    mq = At.shape[0]
    M = 0.5 * np.eye(mq) + 0.5 * ((1 - beta) * np.kron(W, np.eye(system.q)) + beta * At)
    return M @ x + 0.5 * beta * bt


def explicit_basis_projection(system, x0):
    """Projection of x0 onto {1 kron v : A v = b}, for a union-connected universe.

    Uses a pivoted QR of A^T to get an orthonormal null-space basis, a
    particular solution from the same factorization, then the closed-form
    projection ``v* = v_p + N N^T (mean(x0) - v_p)``.
    """
    A, b = system.stacked()
    m, q = system.m, system.q
    Q, R, piv = scipy.linalg.qr(A.T, pivoting=True)
    diag = np.abs(np.diag(R))
    r = int(np.sum(diag > 1e-10 * diag[0])) if diag.size else 0
    N = Q[:, r:]
    # A^T P = Q R  =>  rows piv[:r] of A are independent; solve on them
    Ar = A[piv[:r]]
    br = b[piv[:r]]
    v_p = Q[:, :r] @ np.linalg.solve(R[:r, :r].T, br) if r else np.zeros(q)
    assert np.allclose(Ar @ v_p, br)
    mean = np.asarray(x0, dtype=float).reshape(m, q).mean(axis=0)
    v_star = v_p + N @ (N.T @ (mean - v_p))
    return np.tile(v_star, m), N.shape[1]


def power_norm(B, iters=5000):
    """Spectral norm by power iteration on B^T B."""
    v = np.ones(B.shape[1]) / np.sqrt(B.shape[1])
    v = v + 0.01 * np.arange(B.shape[1])
    for _ in range(iters):
        w = B.T @ (B @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.sqrt(np.linalg.norm(B.T @ (B @ v))))
