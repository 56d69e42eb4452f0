"""Random rules that pick which graph is active at each iteration.

Every process draws from a PCG64 generator seeded through
:class:`numpy.random.SeedSequence`.  A bare run uses ``SeedSequence(seed)``;
trial ``t`` of a Monte Carlo run uses ``SeedSequence(seed, spawn_key=(t,))``,
which is hashed into an independent substream.  Each step consumes exactly one
uniform double (none for the cyclic rule), so the stepwise cursor API and
the chunked :meth:`GraphProcess.stream` produce identical sequences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.sparse.csgraph import connected_components

from randkm.errors import UnmodeledActivationError

PROB_TOL = 1e-10
_CHUNK = 1024


def _check_distribution(p, name):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a nonempty vector")
    if np.any(p < -PROB_TOL) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} must be nonnegative and sum to 1, got sum {p.sum():.12g}")
    return np.clip(p, 0.0, None)


def _cdf(p):
    c = np.cumsum(p)
    c[-1] = 1.0
    return c


def seed_sequence(seed, trial=None):
    if trial is None:
        return np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(int(seed), spawn_key=(int(trial),))


def make_generator(seed, trial=None):
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, trial)))


@dataclass(frozen=True)
class Cursor:
    """Position in a graph sequence: step count, generator state, chain state."""

    step: int
    rng_state: dict
    chain_state: int = -1


class GraphProcess:
    """Base class; subclasses implement :meth:`_emit`."""

    variant = "abstract"
    seed: int = 0

    @property
    def n_graphs(self) -> int:
        raise NotImplementedError

    def _emit(self, step, u, prev):
        """Graph index for ``step`` given uniform ``u`` and the previous chain state."""
        raise NotImplementedError

    def start(self, seed=None, trial=None) -> Cursor:
        gen = make_generator(self.seed if seed is None else seed, trial)
        return Cursor(0, gen.bit_generator.state)

    def next_graph(self, cursor: Cursor):
        """Return ``(graph index, advanced cursor)``; the input cursor is untouched."""
        bg = np.random.PCG64()
        bg.state = cursor.rng_state
        u = np.random.Generator(bg).random()
        k = self._emit(cursor.step, u, cursor.chain_state)
        return k, Cursor(cursor.step + 1, bg.state, k)

    def stream(self, seed=None, trial=None) -> Iterator[int]:
        gen = make_generator(self.seed if seed is None else seed, trial)
        step, prev = 0, -1
        while True:
            for u in gen.random(_CHUNK):
                prev = self._emit(step, u, prev)
                step += 1
                yield prev

    def sample(self, n, seed=None, trial=None):
        it = self.stream(seed, trial)
        return np.fromiter((next(it) for _ in range(n)), dtype=np.int64, count=n)

    def to_dict(self):
        raise NotImplementedError


def next_graph(process: GraphProcess, cursor: Cursor):
    return process.next_graph(cursor)


class IIDProcess(GraphProcess):
    """Independent draws from a fixed distribution over the graphs."""

    variant = "iid"

    def __init__(self, probabilities, seed=0):
        self.probabilities = _check_distribution(probabilities, "probabilities")
        self._cdf = _cdf(self.probabilities)
        self.seed = int(seed)

    @property
    def n_graphs(self):
        return self.probabilities.size

    def graph_probabilities(self):
        return self.probabilities

    def _emit(self, step, u, prev):
        return int(np.searchsorted(self._cdf, u, side="right"))

    def to_dict(self):
        return {"variant": self.variant, "probabilities": self.probabilities.tolist(),
                "seed": self.seed}


class MarkovProcess(GraphProcess):
    """Time-invariant Markov chain over graph indices."""

    variant = "markov"

    def __init__(self, transition, initial, seed=0):
        P = np.asarray(transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        self.transition = np.vstack(
            [_check_distribution(row, f"transition row {i + 1}") for i, row in enumerate(P)]
        )
        self.initial = _check_distribution(initial, "initial distribution")
        if self.initial.size != P.shape[0]:
            raise ValueError("initial distribution size does not match transition matrix")
        self._row_cdf = np.vstack([_cdf(r) for r in self.transition])
        self._init_cdf = _cdf(self.initial)
        self.seed = int(seed)

    @property
    def n_graphs(self):
        return self.initial.size

    def _emit(self, step, u, prev):
        cdf = self._init_cdf if step == 0 else self._row_cdf[prev]
        return int(np.searchsorted(cdf, u, side="right"))

    def is_irreducible(self):
        n, _ = connected_components(self.transition > 0, directed=True, connection="strong")
        return n == 1

    def stationary(self):
        """Stationary distribution (left null vector of ``P - I``)."""
        n = self.n_graphs
        M = np.vstack([self.transition.T - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return pi

    def to_dict(self):
        return {"variant": self.variant, "transition": self.transition.tolist(),
                "initial": self.initial.tolist(), "seed": self.seed}


class CyclicProcess(GraphProcess):
    """Deterministic rotation through a fixed order of graph indices."""

    variant = "cyclic"

    def __init__(self, order, n_graphs=None, seed=0):
        self.order = tuple(int(k) for k in order)
        if not self.order:
            raise ValueError("cyclic order must be nonempty")
        self._n = max(self.order) + 1 if n_graphs is None else int(n_graphs)
        if min(self.order) < 0 or max(self.order) >= self._n:
            raise ValueError("cyclic order refers to a graph outside the universe")
        self.seed = int(seed)

    @property
    def n_graphs(self):
        return self._n

    def _emit(self, step, u, prev):
        return self.order[step % len(self.order)]

    def to_dict(self):
        return {"variant": self.variant, "order": list(self.order), "seed": self.seed}


class GossipProcess(GraphProcess):
    """One undirected edge wakes up per step; the matching per-edge graph is emitted.

    ``edges`` are 0-based unordered pairs.  An edge with no graph whose edge
    set is exactly that pair raises :class:`UnmodeledActivationError` when
    it is drawn.
    """

    variant = "gossip"

    def __init__(self, universe, edges=None, probabilities=None, seed=0):
        if edges is None:
            edges = [next(iter(g.undirected_edges)) for g in universe.graphs
                     if len(g.undirected_edges) == 1]
        self.edges = tuple((min(int(i), int(j)), max(int(i), int(j))) for i, j in edges)
        if not self.edges:
            raise ValueError("gossip process needs at least one edge")
        if probabilities is None:
            probabilities = np.full(len(self.edges), 1.0 / len(self.edges))
        self.probabilities = _check_distribution(probabilities, "edge probabilities")
        if self.probabilities.size != len(self.edges):
            raise ValueError("one probability per gossip edge is required")
        self._cdf = _cdf(self.probabilities)
        lookup = {}
        for k, g in enumerate(universe.graphs):
            und = g.undirected_edges
            if len(und) == 1:
                lookup.setdefault(next(iter(und)), k)
        self.mapping = tuple(lookup.get(e, -1) for e in self.edges)
        self._n = len(universe)
        self.seed = int(seed)

    @property
    def n_graphs(self):
        return self._n

    def graph_probabilities(self):
        p = np.zeros(self._n)
        for k, pr in zip(self.mapping, self.probabilities):
            if k >= 0:
                p[k] += pr
        return p

    def _emit(self, step, u, prev):
        e = int(np.searchsorted(self._cdf, u, side="right"))
        k = self.mapping[e]
        if k < 0:
            i, j = self.edges[e]
            raise UnmodeledActivationError(
                f"unmodeled activation: no graph for edge ({i + 1},{j + 1})"
            )
        return k

    def to_dict(self):
        return {"variant": self.variant, "edges": [[i + 1, j + 1] for i, j in self.edges],
                "edge_probabilities": self.probabilities.tolist(), "seed": self.seed}


@dataclass(frozen=True)
class RecurrenceVerdict:
    satisfied: bool
    justification: str
    core: tuple

    @property
    def verdict(self):
        return "satisfied-by-known-criterion" if self.satisfied else "unknown"

    def to_dict(self):
        return {"verdict": self.verdict, "justification": self.justification,
                "core": [k + 1 for k in self.core]}


def check_recurrence(process: GraphProcess, universe) -> RecurrenceVerdict:
    """Certify that the core graphs recur infinitely often, when a known criterion applies.

    Every graph of the core is required to recur, not just one of them.
    Anything outside the recognised criteria gets ``unknown``; a violation
    is never claimed.
    """
    core = universe.effective_core()
    names = ", ".join(universe[k].label for k in core)
    if process.n_graphs != len(universe):
        return RecurrenceVerdict(
            False, f"process covers {process.n_graphs} graphs, universe has {len(universe)}",
            core)
    if isinstance(process, (IIDProcess, GossipProcess)):
        p = process.graph_probabilities()
        if all(p[k] > 0 for k in core):
            return RecurrenceVerdict(
                True,
                f"independent draws give every core graph ({names}) a fixed positive "
                f"probability (min {min(p[k] for k in core):.4g}); the probabilities sum "
                "to infinity, so by Borel-Cantelli each recurs almost surely",
                core,
            )
        return RecurrenceVerdict(False, "some core graph has zero probability", core)
    if isinstance(process, MarkovProcess):
        if not process.is_irreducible():
            return RecurrenceVerdict(False, "Markov chain is not irreducible", core)
        pi = process.stationary()
        if np.max(np.abs(pi - process.initial)) > 1e-9:
            return RecurrenceVerdict(
                False, "initial distribution is not the stationary distribution", core)
        if all(pi[k] > 0 for k in core):
            return RecurrenceVerdict(
                True,
                f"irreducible stationary Markov chain is ergodic with positive mass on "
                f"every core graph ({names})",
                core,
            )
        return RecurrenceVerdict(False, "stationary mass vanishes on the core", core)
    if isinstance(process, CyclicProcess):
        if set(core) <= set(process.order):
            return RecurrenceVerdict(
                True, f"cyclic schedule visits every core graph ({names}) once per period",
                core)
        return RecurrenceVerdict(False, "cyclic schedule omits a core graph", core)
    return RecurrenceVerdict(False, f"no known criterion for {process.variant!r}", core)
