"""The six maps of the iteration and property checks for them.

With ``W_k = W(graph k) kron I_q`` and ``H(x) = Ãx + b̃``:

    T(k, x)  = W_k x
    D(k, x)  = (1 - beta) T(k, x) + beta H(x)
    S(k, x)  = (1 - beta) T(k, x) + beta Ãx
    Q1(k, x) = x/2 + D(k, x)/2        (one step of the iteration)
    Q2(k, x) = x/2 + S(k, x)/2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from randkm.graphs import GraphUniverse, lift_dense
from randkm.problem import TildeSystem

PAIR_BOX = 10.0
PAIR_TRIALS = 1000
PAIR_SLACK = 1e-9
AFFINE_RTOL = 1e-9


@dataclass(frozen=True)
class OperatorBundle:
    universe: GraphUniverse
    tilde: TildeSystem
    beta: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ValueError(f"beta must lie in the open interval (0, 1), got {self.beta}")
        if self.universe.m != self.tilde.m:
            raise ValueError(
                f"universe has {self.universe.m} agents, system has {self.tilde.m}"
            )

    @property
    def m(self):
        return self.tilde.m

    @property
    def q(self):
        return self.tilde.q

    @property
    def dim(self):
        return self.m * self.q

    def _graph(self, k):
        if not (0 <= k < len(self.universe)):
            raise IndexError(f"graph index {k} outside universe of {len(self.universe)}")
        return self.universe.graphs[k].W

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"stacked state must have shape ({self.dim},), got {x.shape}")
        return x

    def eval_T(self, k, x):
        W = self._graph(k)
        x = self._check(x)
        return (W @ x.reshape(self.m, self.q)).ravel()

    def eval_H(self, x):
        return self.tilde.apply(self._check(x))

    def eval_D(self, k, x):
        return (1.0 - self.beta) * self.eval_T(k, x) + self.beta * self.eval_H(x)

    def eval_S(self, k, x):
        return (1.0 - self.beta) * self.eval_T(k, x) + self.beta * self.tilde.apply_linear(
            self._check(x)
        )

    def eval_Q1(self, k, x):
        x = self._check(x)
        return 0.5 * x + 0.5 * self.eval_D(k, x)

    def eval_Q2(self, k, x):
        x = self._check(x)
        return 0.5 * x + 0.5 * self.eval_S(k, x)

    # dense forms, for desk-scale checks only

    def dense_T(self, k):
        self._graph(k)
        return lift_dense(self.universe.graphs[k], self.q)

    def dense_H(self):
        return self.tilde.dense(), self.tilde.offset.copy()

    def dense_D(self, k):
        At, bt = self.dense_H()
        return (1 - self.beta) * self.dense_T(k) + self.beta * At, self.beta * bt

    def dense_S(self, k):
        return (1 - self.beta) * self.dense_T(k) + self.beta * self.tilde.dense()

    def dense_Q1(self, k):
        M, c = self.dense_D(k)
        return 0.5 * np.eye(self.dim) + 0.5 * M, 0.5 * c

    def maps(self):
        """Name -> list of per-graph callables (H is repeated for uniformity)."""
        K = range(len(self.universe))
        return {
            "T": [lambda x, k=k: self.eval_T(k, x) for k in K],
            "H": [self.eval_H],
            "D": [lambda x, k=k: self.eval_D(k, x) for k in K],
            "S": [lambda x, k=k: self.eval_S(k, x) for k in K],
            "Q1": [lambda x, k=k: self.eval_Q1(k, x) for k in K],
            "Q2": [lambda x, k=k: self.eval_Q2(k, x) for k in K],
        }

    def property_report(self, trials=PAIR_TRIALS, seed=0):
        """Nonexpansiveness of every map and firm nonexpansiveness of Q1, as a dict."""
        rng = np.random.default_rng(seed)
        out = {}
        for name, fs in self.maps().items():
            reps = [check_nonexpansive(f, self.dim, trials, rng=rng) for f in fs]
            out[name] = _merge(reps).to_dict()
        firm = [
            check_firmly_nonexpansive(f, self.dim, trials, rng=rng)
            for f in self.maps()["Q1"]
        ]
        out["Q1_firm"] = _merge(firm).to_dict()
        return out


@dataclass(frozen=True)
class PropertyReport:
    passed: bool
    trials: int
    violations: int
    worst_margin: float

    def to_dict(self):
        return {"passed": self.passed, "trials": self.trials,
                "violations": self.violations, "worst_margin": self.worst_margin}


def _merge(reports):
    return PropertyReport(
        all(r.passed for r in reports),
        sum(r.trials for r in reports),
        sum(r.violations for r in reports),
        min(r.worst_margin for r in reports),
    )


def _pairs(dim, trials, box, rng):
    rng = np.random.default_rng(rng)
    X = rng.uniform(-box, box, size=(trials, dim))
    Y = rng.uniform(-box, box, size=(trials, dim))
    return X, Y


def check_nonexpansive(f, dim, trials=PAIR_TRIALS, tol=PAIR_SLACK, box=PAIR_BOX, rng=None):
    """Sample pairs and test ``||f(x) - f(y)|| <= ||x - y||``.

    The margin is ``||x-y||^2 - ||f(x)-f(y)||^2``; a pair violates when it
    drops below ``-tol * (1 + ||x - y||^2)``.
    """
    X, Y = _pairs(dim, trials, box, rng)
    worst, bad = np.inf, 0
    for x, y in zip(X, Y):
        d2 = float(np.dot(x - y, x - y))
        fd = f(x) - f(y)
        margin = d2 - float(np.dot(fd, fd))
        worst = min(worst, margin)
        bad += margin < -tol * (1.0 + d2)
    return PropertyReport(bad == 0, trials, int(bad), float(worst))


def check_firmly_nonexpansive(f, dim, trials=PAIR_TRIALS, tol=PAIR_SLACK, box=PAIR_BOX,
                              rng=None):
    """Sample pairs and test ``||f(x) - f(y)||^2 <= <f(x) - f(y), x - y>``."""
    X, Y = _pairs(dim, trials, box, rng)
    worst, bad = np.inf, 0
    for x, y in zip(X, Y):
        d = x - y
        fd = f(x) - f(y)
        margin = float(np.dot(fd, d) - np.dot(fd, fd))
        worst = min(worst, margin)
        bad += margin < -tol * (1.0 + float(np.dot(d, d)))
    return PropertyReport(bad == 0, trials, int(bad), float(worst))


@dataclass(frozen=True)
class AffineSet:
    """``point + span(basis)``; ``basis`` has orthonormal columns.  ``point`` is None if empty."""

    point: np.ndarray
    basis: np.ndarray
    residual: float

    @property
    def empty(self):
        return self.point is None

    @property
    def dimension(self):
        return self.basis.shape[1]

    def distance(self, x):
        d = np.asarray(x, dtype=float) - self.point
        return float(np.linalg.norm(d - self.basis @ (self.basis.T @ d)))

    def contains(self, x, tol=1e-9):
        return self.distance(x) <= tol * (1.0 + np.linalg.norm(x))

    def same_as(self, other, tol=1e-9):
        if self.empty or other.empty:
            return self.empty and other.empty
        if self.dimension != other.dimension:
            return False
        # equal dimensions, so mutual containment of directions is one-sided
        gap = np.linalg.norm(other.basis - self.basis @ (self.basis.T @ other.basis))
        return gap <= tol and self.contains(other.point, tol) and other.contains(self.point, tol)


def solve_affine(C, d, rtol=AFFINE_RTOL, feas_tol=1e-9):
    """Solution set of ``Cx = d`` via SVD with a relative rank threshold."""
    C = np.asarray(C, dtype=float)
    d = np.asarray(d, dtype=float)
    U, s, Vt = np.linalg.svd(C, full_matrices=True)
    cutoff = rtol * (s[0] if s.size else 0.0)
    r = int(np.sum(s > cutoff))
    x = Vt[:r].T @ ((U[:, :r].T @ d) / s[:r])
    res = float(np.linalg.norm(C @ x - d))
    basis = Vt[r:].T
    if res > feas_tol * (1.0 + np.linalg.norm(d)):
        return AffineSet(None, basis, res)
    return AffineSet(x, basis, res)


def common_fixed_points(affine_maps, dim):
    """Common fixed points of maps ``x -> Mx + c`` given as ``(M, c)`` pairs."""
    C = np.vstack([np.eye(dim) - M for M, _ in affine_maps])
    d = np.concatenate([c for _, c in affine_maps])
    return solve_affine(C, d)


def fvp_D(bundle: OperatorBundle):
    return common_fixed_points([bundle.dense_D(k) for k in range(len(bundle.universe))],
                               bundle.dim)


def fix_H_cap_fvp_T(bundle: OperatorBundle):
    zero = np.zeros(bundle.dim)
    maps = [bundle.dense_H()] + [
        (bundle.dense_T(k), zero) for k in range(len(bundle.universe))
    ]
    return common_fixed_points(maps, bundle.dim)


def fvp_S(bundle: OperatorBundle):
    zero = np.zeros(bundle.dim)
    return common_fixed_points(
        [(bundle.dense_S(k), zero) for k in range(len(bundle.universe))], bundle.dim
    )
