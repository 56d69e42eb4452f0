"""Row-partitioned linear systems and their fixed-point reformulation.

Agent ``i`` privately knows ``A_i x = b_i``.  Stacked agent estimates are
flat vectors of length ``m*q``; block ``i`` is ``x[i*q:(i+1)*q]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from randkm.errors import DegenerateBlockError, InfeasibleError, StepSizeError

POWER_TOL = 1e-12
POWER_MAXITER = 10_000


def lambda_max(G, tol=POWER_TOL, maxiter=POWER_MAXITER):
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Power iteration from a fixed pseudo-random start, stopped when the
    Rayleigh quotient changes by less than ``tol`` relative to its size.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    if n == 1:
        return float(G[0, 0])
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


@dataclass(frozen=True)
class PartitionedSystem:
    """The equation ``Ax = b`` split into ``m`` private row blocks.

    Parameters
    ----------
    blocks : sequence of (A_i, b_i)
        ``A_i`` has shape ``(mu_i, q)`` and ``b_i`` shape ``(mu_i,)``.
    """

    blocks: tuple

    def __init__(self, blocks: Sequence):
        if len(blocks) < 1:
            raise ValueError("need at least one agent block")
        clean = []
        q = None
        for i, (A, b) in enumerate(blocks):
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
            if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
                raise ValueError(f"block {i + 1}: A_i must be a nonempty matrix")
            if q is None:
                q = A.shape[1]
            if A.shape[1] != q:
                raise ValueError(
                    f"block {i + 1}: expected {q} columns, got {A.shape[1]}"
                )
            if b.shape[0] != A.shape[0]:
                raise ValueError(
                    f"block {i + 1}: b_i has {b.shape[0]} entries for {A.shape[0]} rows"
                )
            A.setflags(write=False)
            b.setflags(write=False)
            clean.append((A, b))
        object.__setattr__(self, "blocks", tuple(clean))

    @classmethod
    def from_rows(cls, A, b, partition=None):
        """Split a stacked system among agents.

        ``partition`` lists the number of rows per agent; by default every
        row goes to its own agent.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if partition is None:
            partition = [1] * A.shape[0]
        if sum(partition) != A.shape[0]:
            raise ValueError("partition sizes must add up to the number of rows")
        cuts = np.cumsum([0, *partition])
        return cls([(A[s:e], b[s:e]) for s, e in zip(cuts[:-1], cuts[1:])])

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def q(self) -> int:
        return self.blocks[0][0].shape[1]

    @property
    def row_counts(self) -> tuple:
        return tuple(A.shape[0] for A, _ in self.blocks)

    def stacked(self):
        """Return the stacked ``(A, b)``."""
        return (
            np.vstack([A for A, _ in self.blocks]),
            np.concatenate([b for _, b in self.blocks]),
        )

    def strip_zero_rows(self, tol=0.0) -> "PartitionedSystem":
        """Drop equation rows that read ``0 = 0``.

        A zero row with a nonzero right-hand side makes the system
        inconsistent and raises :class:`InfeasibleError`.  An agent left with
        no rows cannot be dropped without changing the network, so that
        raises :class:`DegenerateBlockError`.
        """
        out = []
        for i, (A, b) in enumerate(self.blocks):
            zero = np.all(np.abs(A) <= tol, axis=1)
            bad = zero & (np.abs(b) > tol)
            if np.any(bad):
                raise InfeasibleError(
                    f"block {i + 1}: row {int(np.flatnonzero(bad)[0]) + 1} reads 0 = "
                    f"{b[bad][0]:g}",
                    residual=float(np.linalg.norm(b[bad])),
                )
            if np.all(zero):
                raise DegenerateBlockError(f"block {i + 1}: every row is zero")
            out.append((A[~zero], b[~zero]))
        return PartitionedSystem(out)

    def least_squares_residual(self) -> float:
        """Minimum of ``||Ax - b||^2`` over a single common ``x``."""
        A, b = self.stacked()
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        return float(np.sum((A @ x - b) ** 2))


def as_blocks(x, m, q):
    x = np.asarray(x, dtype=float)
    if x.shape != (m * q,):
        raise ValueError(f"stacked state must have shape ({m * q},), got {x.shape}")
    return x.reshape(m, q)


def block_lambda_max(sys: PartitionedSystem):
    return np.array([lambda_max(A @ A.T) for A, _ in sys.blocks])


def default_thetas(sys: PartitionedSystem):
    """Step sizes ``1 / lambda_max(A_i A_i^T)``, halfway into the admissible range."""
    lam = block_lambda_max(sys)
    for i, v in enumerate(lam):
        if v <= 0.0:
            raise DegenerateBlockError(f"degenerate block {i + 1}: A_i is zero")
    return 1.0 / lam


def row_sum_thetas(sys: PartitionedSystem, kappas=None):
    """Step sizes ``2 / kappa_i`` with ``kappa_i >= ||A_i A_i^T||_inf``.

    The infinity norm bounds the top eigenvalue, so this rule can land on
    the open interval's right endpoint; that case raises
    :class:`StepSizeError`.
    """
    if kappas is None:
        kappas = [np.linalg.norm(A @ A.T, ord=np.inf) for A, _ in sys.blocks]
    kappas = np.asarray(kappas, dtype=float)
    if np.any(kappas <= 0.0):
        raise DegenerateBlockError("degenerate block: A_i is zero")
    thetas = 2.0 / kappas
    check_thetas(sys, thetas)
    return thetas


def check_thetas(sys: PartitionedSystem, thetas):
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (sys.m,):
        raise ValueError(f"expected {sys.m} step sizes, got shape {thetas.shape}")
    lam = block_lambda_max(sys)
    for i, (t, v) in enumerate(zip(thetas, lam)):
        if v <= 0.0:
            raise DegenerateBlockError(f"degenerate block {i + 1}: A_i is zero")
        # relative slack on the endpoint absorbs the power-iteration error
        if not (t > 0.0 and t * v < 2.0 * (1.0 - 1e-10)):
            raise StepSizeError(
                f"step size out of range for agent {i + 1}: theta={t:g}, "
                f"admissible (0, {2.0 / v:g})"
            )
    return thetas


@dataclass(frozen=True)
class TildeSystem:
    """Block-diagonal affine map ``H(x) = Ãx + b̃``.

    ``matrices[i] = I - theta_i A_i^T A_i`` and ``offsets[i] = theta_i A_i^T b_i``.
    The full ``mq x mq`` matrix is never formed except by :meth:`dense`.
    """

    thetas: np.ndarray
    matrices: np.ndarray  # (m, q, q)
    offsets: np.ndarray  # (m, q)

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    @property
    def q(self) -> int:
        return self.matrices.shape[1]

    @property
    def tilde_blocks(self):
        return list(zip(self.matrices, self.offsets))

    @property
    def offset(self):
        return self.offsets.ravel()

    def apply_linear(self, x):
        X = as_blocks(x, self.m, self.q)
        return np.einsum("ijk,ik->ij", self.matrices, X).ravel()

    def apply(self, x):
        X = as_blocks(x, self.m, self.q)
        return (np.einsum("ijk,ik->ij", self.matrices, X) + self.offsets).ravel()

    def dense(self):
        m, q = self.m, self.q
        out = np.zeros((m * q, m * q))
        for i in range(m):
            out[i * q : (i + 1) * q, i * q : (i + 1) * q] = self.matrices[i]
        return out


def build_tilde(sys: PartitionedSystem, thetas=None) -> TildeSystem:
    """Fixed-point reformulation whose fixed points solve every ``A_i x_i = b_i``."""
    thetas = default_thetas(sys) if thetas is None else check_thetas(sys, thetas)
    q = sys.q
    mats = np.empty((sys.m, q, q))
    offs = np.empty((sys.m, q))
    for i, ((A, b), t) in enumerate(zip(sys.blocks, thetas)):
        mats[i] = np.eye(q) - t * (A.T @ A)
        offs[i] = t * (A.T @ b)
    thetas = np.array(thetas, dtype=float)
    for arr in (thetas, mats, offs):
        arr.setflags(write=False)
    return TildeSystem(thetas, mats, offs)


def residual(sys: PartitionedSystem, x) -> float:
    """Sum over agents of ``||A_i x_i - b_i||^2``."""
    X = as_blocks(x, sys.m, sys.q)
    return float(sum(np.sum((A @ xi - b) ** 2) for (A, b), xi in zip(sys.blocks, X)))


def residuals_many(sys: PartitionedSystem, X):
    """:func:`residual` for each row of an ``(n, m*q)`` array of stacked states."""
    X = np.asarray(X, dtype=float).reshape(len(X), sys.m, sys.q)
    out = np.zeros(len(X))
    for i, (A, b) in enumerate(sys.blocks):
        out += np.sum((X[:, i, :] @ A.T - b) ** 2, axis=1)
    return out


def consensus_errors_many(X, m):
    X = np.asarray(X, dtype=float).reshape(len(X), m, -1)
    return np.sum((X - X.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2))


def consensus_error(x, m=None, q=None) -> float:
    """Squared distance of the agent estimates from their mean.

    ``x`` is either an ``(m, q)`` array or a flat stacked vector together
    with ``m`` (``q`` is inferred).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if m is None:
            raise ValueError("m is required for a flat stacked state")
        x = x.reshape(m, -1 if q is None else q)
    return float(np.sum((x - x.mean(axis=0)) ** 2))


def consensus_vector(v, m):
    """Stack ``m`` copies of ``v``."""
    return np.tile(np.asarray(v, dtype=float).ravel(), m)
