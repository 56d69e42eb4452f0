"""Weighted communication graphs and finite graph universes.

Agent indices are 0-based here; the config loader converts from the
1-based numbering used in files.  ``W[i, j] > 0`` means agent ``i`` uses the
value received from agent ``j``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator

from randkm.errors import ConsistencyError

STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class WeightedGraph:
    """A communication graph with its weight matrix.

    ``edges`` holds the declared arcs ``(i, j)`` (receiver, sender) with
    ``i != j``.  The diagonal self-weight is always allowed and is not an
    edge.  When ``edges`` is omitted it is read off the off-diagonal support
    of ``W``.
    """

    label: str
    W: np.ndarray
    edges: frozenset = field(default=None)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"graph {self.label!r}: weight matrix must be square")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        support = {(int(i), int(j)) for i, j in zip(*np.nonzero(W)) if i != j}
        if self.edges is None:
            object.__setattr__(self, "edges", frozenset(support))
            return
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise ValueError(f"graph {self.label!r}: self-loop ({i + 1},{i + 1}) declared")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"graph {self.label!r}: edge ({i + 1},{j + 1}) out of range")
        extra = support - edges
        if extra:
            i, j = min(extra)
            raise ValueError(
                f"graph {self.label!r}: weight at ({i + 1},{j + 1}) without a declared edge"
            )
        object.__setattr__(self, "edges", edges)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def undirected_edges(self):
        """Unordered pairs ``(i, j)``, ``i < j``, present in either direction."""
        return frozenset((min(i, j), max(i, j)) for i, j in self.edges)

    def is_symmetric_pattern(self) -> bool:
        return all((j, i) in self.edges for i, j in self.edges)

    @classmethod
    def from_edges(cls, m, edges, self_weights=None, undirected=False, label="G"):
        """Build from ``(i, j, w)`` triples.

        Missing self-weights default to ``1 - row sum``.
        """
        W = np.zeros((m, m))
        arcs = set()
        for i, j, w in edges:
            i, j = int(i), int(j)
            W[i, j] = w
            arcs.add((i, j))
            if undirected:
                W[j, i] = w
                arcs.add((j, i))
        if self_weights is None:
            np.fill_diagonal(W, 1.0 - W.sum(axis=1))
        else:
            np.fill_diagonal(W, self_weights)
        return cls(label, W, frozenset(arcs))

    @classmethod
    def metropolis(cls, m, edges, label="G"):
        """Symmetric Metropolis weights on an undirected edge list."""
        pairs = {(min(i, j), max(i, j)) for i, j in edges}
        deg = np.zeros(m, dtype=int)
        for i, j in pairs:
            deg[i] += 1
            deg[j] += 1
        triples = [(i, j, 1.0 / (1 + max(deg[i], deg[j]))) for i, j in pairs]
        return cls.from_edges(m, triples, undirected=True, label=label)

    @classmethod
    def complete(cls, m, label="complete"):
        return cls(label, np.full((m, m), 1.0 / m))

    @classmethod
    def identity(cls, m, label="idle"):
        return cls(label, np.eye(m))


def reweighted(g: WeightedGraph, scheme="metropolis", seed=0, label=None):
    """Same undirected edge set with a different symmetric doubly stochastic weighting.

    ``scheme`` is ``"metropolis"``, ``"lazy-metropolis"`` (average with the
    identity) or ``"random"`` (edge weights drawn in ``[0.2, 1] / (1 + max deg)``).
    """
    if not g.is_symmetric_pattern():
        raise ValueError(f"graph {g.label!r}: reweighting needs an undirected edge set")
    label = label or g.label
    base = WeightedGraph.metropolis(g.m, g.undirected_edges, label=label)
    if scheme == "metropolis":
        return base
    if scheme == "lazy-metropolis":
        return WeightedGraph(label, 0.5 * (np.eye(g.m) + base.W), base.edges)
    if scheme == "random":
        rng = np.random.default_rng(seed)
        deg = np.zeros(g.m, dtype=int)
        for i, j in g.undirected_edges:
            deg[i] += 1
            deg[j] += 1
        triples = [
            (i, j, rng.uniform(0.2, 1.0) / (1 + max(deg[i], deg[j])))
            for i, j in sorted(g.undirected_edges)
        ]
        return WeightedGraph.from_edges(g.m, triples, undirected=True, label=label)
    raise ValueError(f"unknown weighting scheme {scheme!r}")


@dataclass(frozen=True)
class GraphUniverse:
    """Finite set of graphs the network may switch among.

    ``core`` optionally designates (0-based) indices of a subset of graphs
    whose common fixed points already equal the consensus subspace.
    """

    graphs: tuple
    core: tuple = None

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise ValueError("graph universe must contain at least one graph")
        m = graphs[0].m
        for g in graphs:
            if g.m != m:
                raise ValueError(
                    f"graph {g.label!r} has {g.m} agents, expected {m}"
                )
        object.__setattr__(self, "graphs", graphs)
        if self.core is not None:
            core = tuple(sorted({int(k) for k in self.core}))
            if not core or core[0] < 0 or core[-1] >= len(graphs):
                raise ValueError("core indices out of range")
            object.__setattr__(self, "core", core)

    @property
    def m(self) -> int:
        return self.graphs[0].m

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, k) -> WeightedGraph:
        return self.graphs[k]

    @property
    def labels(self):
        return [g.label for g in self.graphs]

    @property
    def weights(self):
        return np.stack([g.W for g in self.graphs])

    def index(self, label) -> int:
        return self.labels.index(label)

    @classmethod
    def per_edge(cls, m, edges, weight=0.5):
        """One graph per undirected edge, for pairwise gossip."""
        graphs = []
        for i, j in edges:
            i, j = int(i), int(j)
            graphs.append(
                WeightedGraph.from_edges(
                    m, [(i, j, weight)], undirected=True, label=f"edge-{i + 1}-{j + 1}"
                )
            )
        return cls(tuple(graphs))

    def reweighted(self, scheme="metropolis", seed=0):
        return GraphUniverse(
            tuple(reweighted(g, scheme, seed + k) for k, g in enumerate(self.graphs)),
            self.core,
        )

    def effective_core(self, tol=1e-9):
        """The designated core, else one graph that alone pins the consensus set.

        Failing both, every graph that is not the identity; idle graphs
        constrain nothing, so their recurrence is irrelevant.
        """
        if self.core is not None:
            return self.core
        m = self.m
        stack = np.vstack([np.eye(m) - g.W for g in self.graphs])
        full = np.linalg.matrix_rank(stack, tol=tol)
        for k, g in enumerate(self.graphs):
            if np.linalg.matrix_rank(np.eye(m) - g.W, tol=tol) == full:
                return (k,)
        active = tuple(k for k, g in enumerate(self.graphs)
                       if np.any(np.abs(g.W - np.eye(m)) > tol))
        return active or tuple(range(len(self.graphs)))


@dataclass(frozen=True)
class StochasticityReport:
    passed: bool
    row_sums: np.ndarray
    col_sums: np.ndarray
    bad_rows: tuple
    bad_cols: tuple
    negative_entries: tuple

    def describe(self):
        if self.passed:
            return "doubly stochastic"
        parts = []
        if self.bad_rows:
            parts.append(
                "row sums off at "
                + ", ".join(f"{i + 1} ({self.row_sums[i]:.6g})" for i in self.bad_rows)
            )
        if self.bad_cols:
            parts.append(
                "column sums off at "
                + ", ".join(f"{j + 1} ({self.col_sums[j]:.6g})" for j in self.bad_cols)
            )
        if self.negative_entries:
            parts.append(
                "negative weights at "
                + ", ".join(f"({i + 1},{j + 1})" for i, j in self.negative_entries)
            )
        return "; ".join(parts)

    def to_dict(self):
        return {
            "passed": self.passed,
            "row_sums": self.row_sums.tolist(),
            "col_sums": self.col_sums.tolist(),
            "bad_rows": [i + 1 for i in self.bad_rows],
            "bad_cols": [j + 1 for j in self.bad_cols],
            "negative_entries": [[i + 1, j + 1] for i, j in self.negative_entries],
        }


def validate_doubly_stochastic(g, tol=STOCHASTIC_TOL) -> StochasticityReport:
    """Check that a graph's (or a raw matrix's) rows and columns each sum to one."""
    W = g.W if isinstance(g, WeightedGraph) else np.asarray(g, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("weight matrix must be square")
    rows, cols = W.sum(axis=1), W.sum(axis=0)
    bad_rows = tuple(int(i) for i in np.flatnonzero(np.abs(rows - 1.0) > tol))
    bad_cols = tuple(int(j) for j in np.flatnonzero(np.abs(cols - 1.0) > tol))
    neg = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(W < -tol)))
    return StochasticityReport(
        not (bad_rows or bad_cols or neg), rows, cols, bad_rows, bad_cols, neg
    )


@dataclass(frozen=True)
class ConnectivityReport:
    passed: bool
    lambda2_real: float
    eigenvalues: np.ndarray
    strongly_connected: bool
    spectral_applicable: bool

    def to_dict(self):
        return {
            "passed": self.passed,
            "lambda2_real": self.lambda2_real,
            "strongly_connected": self.strongly_connected,
            "spectral_applicable": self.spectral_applicable,
        }


def sorted_eigenvalues(M):
    """Eigenvalues ordered by real part, ties broken by imaginary part."""
    ev = np.linalg.eigvals(M)
    order = np.lexsort((ev.imag, ev.real))
    return ev[order]


def union_strongly_connected(u: GraphUniverse) -> bool:
    pattern = np.zeros((u.m, u.m), dtype=bool)
    for g in u.graphs:
        for i, j in g.edges:
            if g.W[i, j] > 0:
                pattern[j, i] = True
    n, _ = connected_components(pattern, directed=True, connection="strong")
    return n == 1


def validate_union_connectivity(u: GraphUniverse, tol=1e-8) -> ConnectivityReport:
    """Spectral test on ``sum(I - W)`` cross-checked by directed reachability.

    The spectral test is only meaningful for doubly stochastic weights; when
    some graph fails that check the verdict falls back to reachability and
    no cross-check is made.
    """
    m = u.m
    reach = union_strongly_connected(u)
    if m == 1:
        return ConnectivityReport(True, float("inf"), np.zeros(1, complex), True, True)
    M = sum(np.eye(m) - g.W for g in u.graphs)
    ev = sorted_eigenvalues(M)
    lam2 = float(ev[1].real)
    spectral = lam2 > tol * len(u)
    applicable = all(validate_doubly_stochastic(g).passed for g in u.graphs)
    if applicable and spectral != reach:
        raise ConsistencyError(
            f"spectral connectivity test (Re lambda2 = {lam2:.3e}) disagrees with "
            f"reachability ({'connected' if reach else 'disconnected'})"
        )
    return ConnectivityReport(spectral if applicable else reach, lam2, ev, reach, applicable)


def lift(g, q) -> LinearOperator:
    """The action of ``W kron I_q`` on stacked vectors, without forming the product."""
    W = g.W if isinstance(g, WeightedGraph) else np.asarray(g, dtype=float)
    m = W.shape[0]

    def matvec(x):
        return (W @ np.asarray(x, dtype=float).reshape(m, q)).ravel()

    def rmatvec(x):
        return (W.T @ np.asarray(x, dtype=float).reshape(m, q)).ravel()

    return LinearOperator((m * q, m * q), matvec=matvec, rmatvec=rmatvec, dtype=float)


def lift_dense(g, q):
    W = g.W if isinstance(g, WeightedGraph) else np.asarray(g, dtype=float)
    return np.kron(W, np.eye(q))


def connected_undirected_edges(m, rng, extra_prob=0.3):
    """Random connected undirected edge list: a random spanning tree plus extras."""
    perm = rng.permutation(m)
    edges = set()
    for k in range(1, m):
        j = perm[rng.integers(k)]
        i = perm[k]
        edges.add((min(i, j), max(i, j)))
    for i, j in itertools.combinations(range(m), 2):
        if (i, j) not in edges and rng.random() < extra_prob:
            edges.add((i, j))
    return sorted((int(i), int(j)) for i, j in edges)
