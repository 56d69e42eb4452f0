"""scikit-learn style wrapper: fit a consistent linear system distributedly."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from randkm.engine import RunConfig, run_trajectory
from randkm.graphs import GraphUniverse, WeightedGraph
from randkm.operators import OperatorBundle
from randkm.oracle import build_constraints, project_affine
from randkm.problem import PartitionedSystem, build_tilde
from randkm.process import CyclicProcess, GossipProcess, GraphProcess, IIDProcess


class DistributedKMSolver(RegressorMixin, BaseEstimator):
    """Solve ``X w = y`` with rows split among agents that talk over random graphs.

    Parameters
    ----------
    partition : list of int, optional
        Rows per agent.  Default: one row per agent.
    graphs : {"complete", "gossip"}, GraphUniverse or list of WeightedGraph
        ``"gossip"`` builds one graph per edge of the complete graph.
    process : {"auto", "cyclic", "iid", "gossip"} or GraphProcess
        ``"auto"`` is cyclic for a single graph and i.i.d. uniform otherwise.
    beta : float
        Mixing weight between averaging and the local relaxation, in (0, 1).
    thetas : array-like, optional
        Per-agent step sizes; defaults to ``1 / lambda_max(A_i A_i^T)``.
    x0 : array-like, optional
        Initial stacked state (``m * n_features`` entries); zeros by default.
    max_iter, tol : iteration budget and displacement stopping tolerance.
    random_state : int, optional
        Seed for the graph process.

    Attributes
    ----------
    coef_ : ndarray (n_features,)
        Mean of the agents' final estimates.
    agent_coefs_ : ndarray (n_agents, n_features)
    limit_ : ndarray (n_features,)
        Predicted limit from the projection oracle (agent mean).
    n_iter_ : int
    record_ : RunRecord
    """

    def __init__(self, partition=None, graphs="complete", process="auto", beta=0.5,
                 thetas=None, x0=None, max_iter=100_000, tol=1e-12, random_state=None):
        self.partition = partition
        self.graphs = graphs
        self.process = process
        self.beta = beta
        self.thetas = thetas
        self.x0 = x0
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _universe(self, m):
        if isinstance(self.graphs, GraphUniverse):
            return self.graphs
        if self.graphs == "complete":
            return GraphUniverse((WeightedGraph.complete(m),))
        if self.graphs == "gossip":
            pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
            if not pairs:
                return GraphUniverse((WeightedGraph.identity(m),))
            return GraphUniverse.per_edge(m, pairs)
        if isinstance(self.graphs, str):
            raise ValueError(f"unknown graphs option {self.graphs!r}")
        return GraphUniverse(tuple(self.graphs))

    def _process(self, universe, seed):
        p = self.process
        if isinstance(p, GraphProcess):
            return p
        if p == "auto":
            p = "cyclic" if len(universe) == 1 else "iid"
        if p == "cyclic":
            return CyclicProcess(range(len(universe)), seed=seed)
        if p == "iid":
            return IIDProcess(np.full(len(universe), 1.0 / len(universe)), seed=seed)
        if p == "gossip":
            return GossipProcess(universe, seed=seed)
        raise ValueError(f"unknown process option {p!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if not isinstance(self.max_iter, numbers.Integral) or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        self.n_features_in_ = X.shape[1]
        system = PartitionedSystem.from_rows(X, y, self.partition)
        m, q = system.m, system.q
        universe = self._universe(m)
        if universe.m != m:
            raise ValueError(f"graph universe has {universe.m} agents, partition has {m}")
        seed = 0 if self.random_state is None else int(self.random_state)
        tilde = build_tilde(system, self.thetas)
        bundle = OperatorBundle(universe, tilde, float(self.beta))
        x0 = np.zeros(m * q) if self.x0 is None else np.asarray(self.x0, dtype=float)
        oracle = project_affine(build_constraints(universe, tilde), x0)
        cfg = RunConfig(bundle, self._process(universe, seed), x0, system=system,
                        max_iters=int(self.max_iter), stop_tol=float(self.tol), seed=seed)
        rec = run_trajectory(cfg, oracle.x_star)
        self.record_ = rec
        self.n_iter_ = rec.terminated_at
        self.agent_coefs_ = rec.final_state.reshape(m, q)
        self.coef_ = self.agent_coefs_.mean(axis=0)
        self.limit_ = oracle.x_star.reshape(m, q).mean(axis=0)
        self.intercept_ = 0.0
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}"
            )
        return X @ self.coef_
