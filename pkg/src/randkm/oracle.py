"""Closed-form limit of the iteration: projection of ``x0`` onto the equilibrium set.

The equilibria are the points fixed by every graph's averaging map and by
``H``.  They form the affine set ``{x : Cx = d}`` with

    C = [ (I - W_1) kron I_q ; ... ; (I - W_N) kron I_q ; I - Ã ],
    d = [ 0 ; ... ; 0 ; b̃ ].

``beta`` does not enter, and nothing here iterates.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from randkm.errors import InfeasibleError
from randkm.graphs import GraphUniverse
from randkm.problem import TildeSystem

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ConstraintStack:
    """Stacked equilibrium constraints, graph blocks kept as ``m x m`` patterns."""

    graph_blocks: tuple  # (I - W_k), each m x m
    tilde: TildeSystem

    @property
    def m(self):
        return self.tilde.m

    @property
    def q(self):
        return self.tilde.q

    @property
    def shape(self):
        mq = self.m * self.q
        return ((len(self.graph_blocks) + 1) * mq, mq)

    def apply(self, x):
        X = np.asarray(x, dtype=float).reshape(self.m, self.q)
        parts = [(L @ X).ravel() for L in self.graph_blocks]
        parts.append(np.asarray(x, dtype=float) - self.tilde.apply_linear(x))
        return np.concatenate(parts)

    def matrix(self):
        Iq = np.eye(self.q)
        mq = self.m * self.q
        return np.vstack(
            [np.kron(L, Iq) for L in self.graph_blocks] + [np.eye(mq) - self.tilde.dense()]
        )

    def rhs(self):
        mq = self.m * self.q
        return np.concatenate([np.zeros(len(self.graph_blocks) * mq), self.tilde.offset])


def build_constraints(universe: GraphUniverse, tilde: TildeSystem) -> ConstraintStack:
    if universe.m != tilde.m:
        raise ValueError("universe and system disagree on the number of agents")
    blocks = tuple(np.eye(universe.m) - g.W for g in universe.graphs)
    return ConstraintStack(blocks, tilde)


@dataclass(frozen=True)
class OracleResult:
    x_star: np.ndarray
    constraint_residual: float
    nullspace_dim: int
    rank: int
    elapsed: float
    nullspace_basis: np.ndarray

    def to_dict(self, m=None):
        out = {
            "x_star": self.x_star.tolist(),
            "constraint_residual": self.constraint_residual,
            "nullspace_dim": self.nullspace_dim,
            "rank": self.rank,
            "elapsed_seconds": self.elapsed,
        }
        if m is not None:
            out["agents"] = self.x_star.reshape(m, -1).tolist()
        return out

    def write_json(self, path, m=None, extra=None):
        out = self.to_dict(m)
        if extra:
            out.update(extra)
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2)


def project_affine(stack: ConstraintStack, x0, tol=1e-9) -> OracleResult:
    """Nearest point to ``x0`` satisfying every equilibrium constraint.

    Computes ``x0 - C^T w`` with ``w`` the minimum-norm solution of
    ``C C^T w = C x0 - d``, which equals ``x0 - pinv(C) (C x0 - d)``; the
    pseudo-inverse comes from an SVD truncated at ``1e-10 * sigma_max``.

    Raises
    ------
    InfeasibleError
        If ``||C x* - d|| > tol * (1 + ||d||)``.
    """
    t0 = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    C = stack.matrix()
    d = stack.rhs()
    if x0.shape != (C.shape[1],):
        raise ValueError(f"x0 must have {C.shape[1]} entries, got shape {x0.shape}")
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    r = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    gap = C @ x0 - d
    x_star = x0 - Vt[:r].T @ ((U[:, :r].T @ gap) / s[:r])
    res = float(np.linalg.norm(C @ x_star - d))
    if res > tol * (1.0 + np.linalg.norm(d)):
        raise InfeasibleError(
            f"infeasible: the equation has no solution (least-squares constraint "
            f"residual {res:.3e})",
            residual=res,
        )
    _, _, Vfull = np.linalg.svd(C, full_matrices=True)
    basis = Vfull[r:].T
    return OracleResult(x_star, res, C.shape[1] - r, r, time.perf_counter() - t0, basis)


def verify_limit(record, x_star, tol=1e-6) -> bool:
    """True when the run's final state is within ``tol`` of ``x_star``."""
    return bool(np.linalg.norm(record.final_state - np.asarray(x_star, dtype=float)) <= tol)
