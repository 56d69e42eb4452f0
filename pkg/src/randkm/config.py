"""Experiment configuration files (TOML).

Agent and graph indices are 1-based in files.  Numbers may be written as
TOML numbers or as fraction strings such as ``"1/3"``.  The full schema is
documented in ``docs/config.md``.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from randkm.errors import ConfigError
from randkm.graphs import GraphUniverse, WeightedGraph
from randkm.operators import OperatorBundle
from randkm.problem import PartitionedSystem, build_tilde, default_thetas, row_sum_thetas
from randkm.process import (
    CyclicProcess,
    GossipProcess,
    IIDProcess,
    MarkovProcess,
    make_generator,
)

EXAMPLE1_X0 = (-3.0, 1.0, 2.0, 2.0, -2.0, 1.0, 1.0, 3.0, -1.0)
_RANDOM_RE = re.compile(r"^random\((\d+)\)$")


@dataclass
class ExperimentConfig:
    name: str
    system: PartitionedSystem
    universe: GraphUniverse
    process_table: dict
    beta: float
    thetas: object
    x0: np.ndarray
    max_iters: int = 100_000
    stop_tol: float = 1e-12
    record_stride: int = 1
    trials: int = 100
    decay_window: tuple = None
    output_dir: str = "out"
    sweep: dict = field(default_factory=dict)
    sha256: str = ""
    path: Path = None

    @property
    def m(self):
        return self.system.m

    @property
    def q(self):
        return self.system.q

    @property
    def seed(self):
        return int(self.process_table.get("seed", 0))

    def resolved_thetas(self):
        if isinstance(self.thetas, str):
            if self.thetas == "default":
                return default_thetas(self.system)
            if self.thetas == "row-sum":
                return row_sum_thetas(self.system)
            raise ConfigError(f"unknown step-size rule {self.thetas!r}", "algorithm.thetas")
        return np.asarray(self.thetas, dtype=float)

    def tilde(self):
        return build_tilde(self.system, self.resolved_thetas())

    def bundle(self, beta=None, universe=None):
        return OperatorBundle(
            universe or self.universe, self.tilde(), self.beta if beta is None else beta
        )

    def process(self, universe=None, seed=None):
        return build_process(self.process_table, universe or self.universe, seed)


def number(v, where):
    """A float from a TOML number or a fraction string."""
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}", where)
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"expected a number or fraction string, got {v!r}", where)


def vector(v, where):
    if not isinstance(v, list):
        raise ConfigError("expected an array", where)
    return np.array([number(e, f"{where}[{k}]") for k, e in enumerate(v)])


def matrix(v, where):
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a nonempty array of rows", where)
    rows = [vector(r, f"{where}[{k}]") for k, r in enumerate(v)]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("rows have different lengths", where)
    return np.vstack(rows)


def _index(v, n, where):
    if not isinstance(v, int) or isinstance(v, bool) or not (1 <= v <= n):
        raise ConfigError(f"index must be an integer in 1..{n}, got {v!r}", where)
    return v - 1


def _load_block(blk, k, base):
    where = f"problem.blocks[{k}]"
    if not isinstance(blk, dict):
        raise ConfigError("expected a table", where)
    if "csv" in blk:
        path = Path(blk["csv"])
        if not path.is_absolute():
            path = base / path
        try:
            with open(path, newline="") as fh:
                rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}", f"{where}.csv") from exc
        data = matrix([[c.strip() for c in r] for r in rows], f"{where}.csv")
        if data.shape[1] < 2:
            raise ConfigError("csv needs at least one coefficient column and b", where)
        return data[:, :-1], data[:, -1]
    if "rows" not in blk or "b" not in blk:
        raise ConfigError("block needs 'rows' and 'b' or a 'csv' path", where)
    A = matrix(blk["rows"], f"{where}.rows")
    b = vector(blk["b"], f"{where}.b")
    if b.size != A.shape[0]:
        raise ConfigError(f"{A.shape[0]} rows but {b.size} entries in b", where)
    return A, b


def _load_graph(g, k, m):
    where = f"universe.graphs[{k}]"
    if not isinstance(g, dict):
        raise ConfigError("expected a table", where)
    label = str(g.get("label", f"G{k + 1}"))
    edges = g.get("edges", [])
    if not isinstance(edges, list):
        raise ConfigError("expected an array", f"{where}.edges")
    try:
        if g.get("auto_stochastic", False):
            pairs = []
            for e, item in enumerate(edges):
                if not isinstance(item, list) or len(item) < 2:
                    raise ConfigError("expected [i, j]", f"{where}.edges[{e}]")
                pairs.append((_index(item[0], m, f"{where}.edges[{e}]"),
                              _index(item[1], m, f"{where}.edges[{e}]")))
            return WeightedGraph.metropolis(m, pairs, label=label)
        triples = []
        for e, item in enumerate(edges):
            w = f"{where}.edges[{e}]"
            if not isinstance(item, list) or len(item) != 3:
                raise ConfigError("expected [i, j, weight]", w)
            i, j = _index(item[0], m, w), _index(item[1], m, w)
            if i == j:
                raise ConfigError("self-loops are not edges; use self_weights", w)
            triples.append((i, j, number(item[2], w)))
        sw = None
        if "self_weights" in g:
            sw = vector(g["self_weights"], f"{where}.self_weights")
            if sw.size != m:
                raise ConfigError(f"expected {m} self weights", f"{where}.self_weights")
        return WeightedGraph.from_edges(
            m, triples, self_weights=sw, undirected=bool(g.get("undirected", False)),
            label=label,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), where) from exc


def _load_universe(tab, m):
    if not isinstance(tab, dict):
        raise ConfigError("missing [universe] table", "universe")
    if "gossip" in tab:
        gos = tab["gossip"]
        edges = []
        for e, item in enumerate(gos.get("edges", [])):
            w = f"universe.gossip.edges[{e}]"
            if not isinstance(item, list) or len(item) != 2:
                raise ConfigError("expected [i, j]", w)
            edges.append((_index(item[0], m, w), _index(item[1], m, w)))
        if not edges:
            raise ConfigError("gossip universe needs at least one edge", "universe.gossip.edges")
        weight = number(gos.get("weight", 0.5), "universe.gossip.weight")
        universe = GraphUniverse.per_edge(m, edges, weight)
    else:
        graphs = tab.get("graphs")
        if not isinstance(graphs, list) or not graphs:
            raise ConfigError("need [[universe.graphs]] entries or universe.gossip",
                              "universe.graphs")
        universe = GraphUniverse(tuple(_load_graph(g, k, m) for k, g in enumerate(graphs)))
    if "core" in tab:
        core = [_index(v, len(universe), f"universe.core[{k}]")
                for k, v in enumerate(tab["core"])]
        universe = GraphUniverse(universe.graphs, tuple(core))
    return universe


def build_process(tab, universe, seed=None):
    """Graph process from a ``[process]`` table."""
    n = len(universe)
    variant = tab.get("variant", "cyclic" if n == 1 else "iid")
    seed = int(tab.get("seed", 0)) if seed is None else int(seed)
    try:
        if variant == "cyclic":
            order = [_index(v, n, f"process.order[{k}]")
                     for k, v in enumerate(tab.get("order", list(range(1, n + 1))))]
            return CyclicProcess(order, n_graphs=n, seed=seed)
        if variant == "iid":
            p = tab.get("probabilities")
            p = np.full(n, 1.0 / n) if p is None else vector(p, "process.probabilities")
            if p.size != n:
                raise ConfigError(f"expected {n} probabilities", "process.probabilities")
            return IIDProcess(p, seed=seed)
        if variant == "markov":
            P = matrix(tab.get("transition", []), "process.transition")
            if P.shape != (n, n):
                raise ConfigError(f"transition must be {n}x{n}", "process.transition")
            init = tab.get("initial", "stationary")
            if init == "stationary":
                proc = MarkovProcess(P, np.full(n, 1.0 / n), seed=seed)
                pi = np.clip(proc.stationary(), 0.0, None)
                return MarkovProcess(P, pi / pi.sum(), seed=seed)
            return MarkovProcess(P, vector(init, "process.initial"), seed=seed)
        if variant == "gossip":
            edges = None
            if "edges" in tab:
                edges = []
                for k, item in enumerate(tab["edges"]):
                    w = f"process.edges[{k}]"
                    if not isinstance(item, list) or len(item) != 2:
                        raise ConfigError("expected [i, j]", w)
                    edges.append((_index(item[0], universe.m, w),
                                  _index(item[1], universe.m, w)))
            p = tab.get("edge_probabilities")
            p = None if p is None else vector(p, "process.edge_probabilities")
            return GossipProcess(universe, edges, p, seed=seed)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "process") from exc
    raise ConfigError(f"unknown variant {variant!r}", "process.variant")


def resolve_x0(spec, m, q):
    """Initial state from an array, ``"zeros"``, ``"example1-start"`` or ``"random(seed)"``."""
    if isinstance(spec, list):
        x0 = vector(spec, "run.x0")
    elif spec == "zeros":
        x0 = np.zeros(m * q)
    elif spec == "example1-start":
        if (m, q) != (3, 3):
            raise ConfigError("preset needs 3 agents and 3 unknowns", "run.x0")
        x0 = np.array(EXAMPLE1_X0)
    elif isinstance(spec, str) and _RANDOM_RE.match(spec):
        x0 = make_generator(int(_RANDOM_RE.match(spec).group(1))).standard_normal(m * q)
    else:
        raise ConfigError(f"unrecognised initial state {spec!r}", "run.x0")
    if x0.shape != (m * q,):
        raise ConfigError(f"expected {m * q} entries, got {x0.size}", "run.x0")
    return x0


def _positive_int(v, where, minimum=1):
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"must be an integer >= {minimum}, got {v!r}", where)
    return v


def parse_config(text, base=Path("."), name="config"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    prob = raw.get("problem")
    if not isinstance(prob, dict) or not isinstance(prob.get("blocks"), list):
        raise ConfigError("need [[problem.blocks]] entries", "problem.blocks")
    blocks = [_load_block(b, k, base) for k, b in enumerate(prob["blocks"])]
    if not blocks:
        raise ConfigError("need at least one block", "problem.blocks")
    try:
        system = PartitionedSystem(blocks)
    except ValueError as exc:
        raise ConfigError(str(exc), "problem.blocks") from exc
    if prob.get("strip_zero_rows", False):
        system = system.strip_zero_rows()
    m, q = system.m, system.q

    universe = _load_universe(raw.get("universe"), m)
    algo = raw.get("algorithm", {})
    beta = number(algo.get("beta", 0.5), "algorithm.beta")
    thetas = algo.get("thetas", "default")
    if isinstance(thetas, list):
        thetas = vector(thetas, "algorithm.thetas")
        if thetas.size != m:
            raise ConfigError(f"expected {m} step sizes", "algorithm.thetas")
    elif thetas not in ("default", "row-sum"):
        raise ConfigError(f"unknown step-size rule {thetas!r}", "algorithm.thetas")

    proc = dict(raw.get("process", {}))
    build_process(proc, universe)  # fail early on malformed process tables

    run = raw.get("run", {})
    x0 = resolve_x0(run.get("x0", "zeros"), m, q)
    max_iters = _positive_int(run.get("max_iters", 100_000), "run.max_iters")
    stop_tol = number(run.get("stop_tol", 1e-12), "run.stop_tol")
    if stop_tol < 0:
        raise ConfigError("must be nonnegative", "run.stop_tol")
    stride = _positive_int(run.get("record_stride", 1), "run.record_stride")
    trials = _positive_int(run.get("trials", 100), "run.trials")
    window = run.get("decay_window")
    if window is not None:
        if not (isinstance(window, list) and len(window) == 2):
            raise ConfigError("expected [first, last]", "run.decay_window")
        window = (int(window[0]), int(window[1]))

    return ExperimentConfig(
        name=str(raw.get("name", name)),
        system=system,
        universe=universe,
        process_table=proc,
        beta=beta,
        thetas=thetas,
        x0=x0,
        max_iters=max_iters,
        stop_tol=stop_tol,
        record_stride=stride,
        trials=trials,
        decay_window=window,
        output_dir=str(raw.get("output", {}).get("dir", "out")),
        sweep=dict(raw.get("sweep", {})),
        sha256=hashlib.sha256(text.encode()).hexdigest(),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = parse_config(text, path.parent, path.stem)
    cfg.path = path
    return cfg
