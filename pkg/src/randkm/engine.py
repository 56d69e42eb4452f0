"""Random Krasnoselskii-Mann iteration, trajectory diagnostics and Monte Carlo."""

from __future__ import annotations

import csv
import math
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from randkm.errors import NumericalDivergenceError
from randkm.operators import OperatorBundle
from randkm.problem import PartitionedSystem, consensus_errors_many, residuals_many

FEJER_SLACK = 1e-10


def km_step(bundle: OperatorBundle, k, x):
    """One iteration ``x/2 + [(1-beta) W_k x + beta (Ãx + b̃)]/2`` with graph ``k`` active."""
    return bundle.eval_Q1(k, x)


@dataclass
class RunConfig:
    bundle: OperatorBundle
    process: object
    x0: np.ndarray
    system: PartitionedSystem = None
    max_iters: int = 100_000
    stop_tol: float = 1e-12
    record_stride: int = 1
    seed: int = None
    trial: int = None

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float)
        if self.x0.shape != (self.bundle.dim,):
            raise ValueError(
                f"x0 must have {self.bundle.dim} entries, got shape {self.x0.shape}"
            )
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be at least 1")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")
        if self.process.n_graphs != len(self.bundle.universe):
            raise ValueError("process and universe disagree on the number of graphs")
        if self.seed is None:
            self.seed = self.process.seed


@dataclass
class RunRecord:
    """Diagnostics of one trajectory.

    ``n`` lists the logged iteration counts; the per-``n`` arrays align with
    it.  ``graph_trace[t]`` is the graph used to move from ``x_t`` to
    ``x_{t+1}``.  ``errors`` and the Fejér count are only filled when a
    reference point was supplied.
    """

    n: np.ndarray
    errors: np.ndarray = None
    iterates: np.ndarray = None
    residuals: np.ndarray = None
    consensus_errors: np.ndarray = None
    fejer_violations: int = 0
    graph_trace: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    terminated_at: int = 0
    seed: int = None
    trial: int = None
    final_state: np.ndarray = None
    max_norm: float = float("nan")
    converged: bool = False

    def summary(self, window=None):
        out = {
            "iterations": int(self.terminated_at),
            "converged": bool(self.converged),
            "seed": self.seed,
            "trial": self.trial,
            "fejer_violations": int(self.fejer_violations),
            "terminal_state": None if self.final_state is None else self.final_state.tolist(),
            "max_norm": float(self.max_norm),
        }
        if self.errors is not None:
            out["initial_error"] = float(self.errors[0])
            out["terminal_error"] = float(self.errors[-1])
            try:
                out["decay_rate"] = estimate_decay_rate(self, window)
            except ValueError:
                out["decay_rate"] = None
        if self.residuals is not None:
            out["terminal_residual"] = float(self.residuals[-1])
        return out

    def to_csv(self, path, header=()):
        """Columns: n, e_n, residual, consensus_error, graph_index, harmonic_reference.

        ``graph_index`` is 1-based and blank on the last row.
        ``harmonic_reference`` is ``e_0 / (1 + n)``.
        """
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "e_n", "residual", "consensus_error", "graph_index",
                        "harmonic_reference"])
            e0 = None if self.errors is None else self.errors[0]
            for row, n in enumerate(self.n):
                g = self.graph_trace[n] + 1 if n < len(self.graph_trace) else ""
                w.writerow([
                    int(n),
                    _fmt(None if self.errors is None else self.errors[row]),
                    _fmt(None if self.residuals is None else self.residuals[row]),
                    _fmt(self.consensus_errors[row]),
                    g,
                    _fmt(None if e0 is None else e0 / (1 + n)),
                ])

    def to_error_file(self, path, header=()):
        """Two whitespace-separated columns ``n e_n`` for plotting."""
        if self.errors is None:
            raise ValueError("no error column: run without a reference point")
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            for n, e in zip(self.n, self.errors):
                fh.write(f"{int(n)} {_fmt(e)}\n")


def _fmt(v):
    return "" if v is None else f"{float(v):.17g}"


def run_trajectory(cfg: RunConfig, x_star=None) -> RunRecord:
    """Iterate until ``||x_{n+1} - x_n|| <= stop_tol`` or ``max_iters`` steps.

    With ``x_star`` given, ``||x_n - x_star||`` is logged and every step is
    checked for Fejér monotonicity against it.
    """
    bundle = cfg.bundle
    m, q = bundle.m, bundle.q
    stride = int(cfg.record_stride)
    x = cfg.x0.copy()
    c = None if x_star is None else np.asarray(x_star, dtype=float)

    logged_n, logged_x = [], []
    trace = []
    fejer = 0
    dist = None if c is None else float(np.linalg.norm(x - c))
    max_norm = float(np.linalg.norm(x))

    def log(n, state):
        logged_n.append(n)
        logged_x.append(state.copy())

    log(0, x)
    stream = cfg.process.stream(cfg.seed, cfg.trial)
    n = 0
    converged = False
    while n < cfg.max_iters:
        k = next(stream)
        trace.append(k)
        x_new = km_step(bundle, k, x)
        if not np.all(np.isfinite(x_new)):
            raise NumericalDivergenceError(f"numerical divergence at iteration {n + 1}")
        dx = x_new - x
        step = math.sqrt(dx @ dx)
        x = x_new
        n += 1
        max_norm = max(max_norm, math.sqrt(x @ x))
        if c is not None:
            dc = x - c
            new_dist = math.sqrt(dc @ dc)
            if new_dist > dist + FEJER_SLACK:
                fejer += 1
            dist = new_dist
        if step <= cfg.stop_tol:
            converged = True
            break
        if n % stride == 0:
            log(n, x)
    if logged_n[-1] != n:
        log(n, x)

    X = np.array(logged_x)
    rec = RunRecord(
        n=np.array(logged_n, dtype=np.int64),
        iterates=X,
        consensus_errors=consensus_errors_many(X, m),
        fejer_violations=fejer,
        graph_trace=np.array(trace, dtype=np.int64),
        terminated_at=n,
        seed=cfg.seed,
        trial=cfg.trial,
        final_state=x,
        max_norm=max_norm,
        converged=converged,
    )
    if c is not None:
        rec.errors = np.linalg.norm(X - c, axis=1)
    if cfg.system is not None:
        rec.residuals = residuals_many(cfg.system, X)
    return rec


@dataclass
class MonteCarloResult:
    """Mean-square error curve over independent trials.

    ``n`` is the common iteration grid ``0, stride, 2*stride, ..., max_iters``;
    trials that stopped early hold their terminal error on the remainder.
    """

    n: np.ndarray
    mse: np.ndarray
    terminal_errors: np.ndarray
    fejer_violations: np.ndarray
    seed: int
    trials: int

    def to_csv(self, path, header=()):
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["n", "mse"])
            for n, v in zip(self.n, self.mse):
                w.writerow([int(n), _fmt(v)])

    def summary(self):
        return {
            "seed": self.seed,
            "trials": self.trials,
            "terminal_mse": float(self.mse[-1]),
            "max_terminal_error": float(self.terminal_errors.max()),
            "terminal_errors": self.terminal_errors.tolist(),
            "fejer_violations": int(self.fejer_violations.sum()),
        }


def _trial_errors(args):
    cfg, x_star, grid = args
    rec = run_trajectory(cfg, x_star)
    # piecewise-constant hold after early termination
    idx = np.searchsorted(rec.n, grid, side="right") - 1
    return rec.errors[idx], rec.fejer_violations


def monte_carlo(cfg: RunConfig, trials, x_star, jobs=1) -> MonteCarloResult:
    """Run ``trials`` independent seeded trajectories and average ``||x_n - x*||^2``.

    Trial ``t`` draws graphs from substream ``(seed, t)``.  Results are
    reduced in trial order, so the output does not depend on ``jobs``.
    """
    if int(trials) < 1:
        raise ValueError("trials must be at least 1")
    stride = int(cfg.record_stride)
    grid = np.arange(0, cfg.max_iters + 1, stride, dtype=np.int64)
    if grid[-1] != cfg.max_iters:
        grid = np.append(grid, cfg.max_iters)
    tasks = [(replace(cfg, trial=t), x_star, grid) for t in range(int(trials))]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_errors, tasks))
    else:
        results = [_trial_errors(t) for t in tasks]
    E = np.array([r[0] for r in results])
    return MonteCarloResult(
        n=grid,
        mse=np.mean(E ** 2, axis=0),
        terminal_errors=E[:, -1],
        fejer_violations=np.array([r[1] for r in results]),
        seed=cfg.seed,
        trials=int(trials),
    )


def geometric_ratio(n, e):
    """``exp`` of the least-squares slope of ``log e`` against ``n``."""
    n = np.asarray(n, dtype=float)
    e = np.asarray(e, dtype=float)
    if n.size < 2:
        raise ValueError("need at least two points to fit a rate")
    if np.any(e <= 0):
        raise ValueError("window beyond convergence: nonpositive error in window")
    slope = np.polyfit(n, np.log(e), 1)[0]
    return float(np.exp(slope))


def estimate_decay_rate(record: RunRecord, window=None):
    """Per-iteration geometric error ratio fitted over ``window = (first, last)`` (inclusive)."""
    if record.errors is None:
        raise ValueError("record has no error column")
    n = np.asarray(record.n)
    e = np.asarray(record.errors)
    if window is not None:
        lo, hi = window
        mask = (n >= lo) & (n <= hi)
        n, e = n[mask], e[mask]
    return geometric_ratio(n, e)


def summary_json(record: RunRecord, path, extra=None, window=None):
    out = record.summary(window)
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
