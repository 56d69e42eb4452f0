import numpy as np
import pytest

from helpers import (
    EX1_THETAS,
    EX1_X0,
    GOSSIP_EDGES,
    complete_universe,
    dense_step_oracle,
    example1,
    gossip_system,
)
from randkm.engine import (
    RunConfig,
    RunRecord,
    estimate_decay_rate,
    geometric_ratio,
    km_step,
    monte_carlo,
    run_trajectory,
)
from randkm.errors import NumericalDivergenceError
from randkm.graphs import GraphUniverse
from randkm.operators import OperatorBundle
from randkm.oracle import build_constraints, project_affine
from randkm.problem import build_tilde
from randkm.process import CyclicProcess, GossipProcess

EX1_STAR = np.tile([-1 / 6, 1 / 3, 1 / 2], 3)


def _ex1_cfg(**kw):
    bundle = OperatorBundle(complete_universe(3), build_tilde(example1(), EX1_THETAS), 0.5)
    return RunConfig(bundle, CyclicProcess([0]), EX1_X0, system=example1(), **kw)


def _gossip_cfg(beta=0.5, seed=11, **kw):
    system = gossip_system()
    universe = GraphUniverse.per_edge(4, GOSSIP_EDGES)
    bundle = OperatorBundle(universe, build_tilde(system), beta)
    x0 = np.arange(12, dtype=float) - 5
    return RunConfig(bundle, GossipProcess(universe, seed=seed), x0, system=system, **kw)


def _oracle(cfg):
    return project_affine(build_constraints(cfg.bundle.universe, cfg.bundle.tilde),
                          cfg.x0).x_star


def test_first_step_matches_dense_oracle():
    cfg = _ex1_cfg(max_iters=1, stop_tol=0.0)
    rec = run_trajectory(cfg)
    W = complete_universe(3).graphs[0].W
    np.testing.assert_allclose(
        rec.final_state, dense_step_oracle(example1(), EX1_THETAS, W, 0.5, EX1_X0), atol=1e-14
    )


def test_example_run_reaches_limit():
    rec = run_trajectory(_ex1_cfg(), EX1_STAR)
    assert rec.converged
    assert rec.errors[-1] < 1e-10
    assert rec.fejer_violations == 0
    assert rec.residuals[-1] < 1e-9
    assert rec.consensus_errors[-1] < 1e-10
    np.testing.assert_array_equal(rec.n, np.arange(rec.terminated_at + 1))


def test_start_at_limit_stays_put():
    cfg = _ex1_cfg()
    cfg.x0 = EX1_STAR.copy()
    rec = run_trajectory(cfg, EX1_STAR)
    assert rec.terminated_at == 1 and rec.converged
    assert np.all(rec.errors < 1e-15)


def test_runs_are_reproducible():
    a = run_trajectory(_gossip_cfg(max_iters=300, stop_tol=0.0))
    b = run_trajectory(_gossip_cfg(max_iters=300, stop_tol=0.0))
    np.testing.assert_array_equal(a.graph_trace, b.graph_trace)
    np.testing.assert_array_equal(a.iterates, b.iterates)
    c = run_trajectory(_gossip_cfg(seed=12, max_iters=300, stop_tol=0.0))
    assert not np.array_equal(a.graph_trace, c.graph_trace)


def test_fejer_and_boundedness_on_gossip():
    cfg = _gossip_cfg(max_iters=3000)
    star = _oracle(cfg)
    rec = run_trajectory(cfg, star)
    assert rec.fejer_violations == 0
    assert np.all(np.diff(rec.errors) <= 1e-10)
    bound = np.linalg.norm(cfg.x0 - star) + np.linalg.norm(star)
    assert rec.max_norm <= bound + 1e-12
    assert rec.errors[-1] < 1e-6


def test_record_stride_logs_last_point():
    rec = run_trajectory(_gossip_cfg(max_iters=95, stop_tol=0.0, record_stride=10))
    assert list(rec.n) == list(range(0, 91, 10)) + [95]
    assert rec.iterates.shape == (11, 12)
    assert rec.errors is None and len(rec.graph_trace) == 95


def test_beta_does_not_move_the_limit():
    finals = []
    for beta in (0.1, 0.5, 0.9):
        cfg = _gossip_cfg(beta=beta, max_iters=60000)
        finals.append(run_trajectory(cfg).final_state)
    for f in finals[1:]:
        np.testing.assert_allclose(f, finals[0], atol=1e-8)


def test_decay_rate_on_synthetic_geometric():
    n = np.arange(41)
    rec = RunRecord(n=n, errors=3.0 * 0.25 ** n)
    assert estimate_decay_rate(rec) == pytest.approx(0.25, abs=1e-9)
    assert estimate_decay_rate(rec, (5, 40)) == pytest.approx(0.25, abs=1e-9)


def test_decay_rate_on_harmonic_trends_to_one():
    n = np.arange(0, 20001)
    e = 1.0 / (1.0 + n)
    early = geometric_ratio(n[10:100], e[10:100])
    late = geometric_ratio(n[10000:], e[10000:])
    assert early < late < 1.0
    assert late > 0.9999


def test_decay_rate_rejects_converged_window():
    rec = RunRecord(n=np.arange(5), errors=np.array([1.0, 0.1, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError, match="window beyond convergence"):
        estimate_decay_rate(rec)
    with pytest.raises(ValueError):
        geometric_ratio([1], [1.0])


def test_run_config_validation():
    with pytest.raises(ValueError, match="x0"):
        RunConfig(_ex1_cfg().bundle, CyclicProcess([0]), np.zeros(8))
    with pytest.raises(ValueError, match="max_iters"):
        _ex1_cfg(max_iters=0)
    with pytest.raises(ValueError, match="number of graphs"):
        RunConfig(_ex1_cfg().bundle, CyclicProcess([0, 1]), EX1_X0)


def test_divergence_is_reported():
    cfg = _ex1_cfg()
    cfg.x0 = np.full(9, np.inf)
    with pytest.raises(NumericalDivergenceError, match="numerical divergence"):
        run_trajectory(cfg)


def test_single_trial_matches_trajectory():
    cfg = _gossip_cfg(max_iters=400, stop_tol=0.0)
    star = _oracle(cfg)
    mc = monte_carlo(cfg, 1, star)
    cfg.trial = 0
    rec = run_trajectory(cfg, star)
    np.testing.assert_allclose(mc.mse, rec.errors ** 2, rtol=0, atol=0)


def test_deterministic_process_gives_squared_errors():
    cfg = _ex1_cfg(max_iters=50)
    mc = monte_carlo(cfg, 4, EX1_STAR)
    rec = run_trajectory(cfg, EX1_STAR)
    idx = np.minimum(mc.n, rec.n[-1])
    np.testing.assert_allclose(mc.mse, rec.errors[idx] ** 2, atol=0)


def test_early_stop_is_held():
    cfg = _ex1_cfg(max_iters=500)
    mc = monte_carlo(cfg, 2, EX1_STAR)
    assert mc.n[-1] == 500
    assert mc.mse[-1] == mc.mse[200]


def test_monte_carlo_is_job_invariant():
    cfg = _gossip_cfg(max_iters=200, stop_tol=0.0)
    star = _oracle(cfg)
    a = monte_carlo(cfg, 6, star, jobs=1)
    b = monte_carlo(cfg, 6, star, jobs=2)
    np.testing.assert_array_equal(a.mse, b.mse)
    np.testing.assert_array_equal(a.terminal_errors, b.terminal_errors)


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        monte_carlo(_ex1_cfg(), 0, EX1_STAR)


def test_trajectory_csv(tmp_path):
    rec = run_trajectory(_ex1_cfg(max_iters=5, stop_tol=0.0), EX1_STAR)
    path = tmp_path / "t.csv"
    rec.to_csv(path, header=["seed: 0"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed: 0"
    assert lines[1] == "n,e_n,residual,consensus_error,graph_index,harmonic_reference"
    assert len(lines) == 2 + 6
    first = lines[2].split(",")
    assert float(first[1]) == pytest.approx(np.linalg.norm(EX1_X0 - EX1_STAR))
    assert first[4] == "1" and lines[-1].split(",")[4] == ""
    assert float(lines[-1].split(",")[5]) == pytest.approx(float(first[1]) / 6)


def test_iid_gossip_on_example1_mean_square():
    universe = GraphUniverse.per_edge(3, [(0, 1), (0, 2), (1, 2)])
    bundle = OperatorBundle(universe, build_tilde(example1(), EX1_THETAS), 0.5)
    process = GossipProcess(universe, seed=2)
    cfg = RunConfig(bundle, process, EX1_X0, max_iters=2000)
    star = _oracle(cfg)
    mc = monte_carlo(cfg, 100, star)
    assert mc.mse[-1] <= 1e-8
    assert mc.fejer_violations.sum() == 0
