"""Command line runner: ``randkm {validate,oracle,run,montecarlo,sweep}``.

Exit codes: 0 success, 1 validation failure (including malformed
configs), 2 runtime or numerical error, 3 infeasible system.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from randkm.config import ExperimentConfig, load_config
from randkm.engine import RunConfig, estimate_decay_rate, monte_carlo, run_trajectory
from randkm.errors import ConfigError, InfeasibleError, RandKMError, StepSizeError
from randkm.graphs import validate_doubly_stochastic, validate_union_connectivity
from randkm.oracle import build_constraints, project_affine
from randkm.problem import check_thetas
from randkm.process import check_recurrence

log = logging.getLogger("randkm")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 1, 2, 3


class ValidationFailed(RandKMError):
    def __init__(self, report):
        super().__init__("configuration failed validation")
        self.report = report


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, payload):
    def write(tmp):
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    _atomic_write(path, write)


def _header(cfg: ExperimentConfig, seeds):
    return [
        f"config={cfg.name}",
        f"config_sha256={cfg.sha256}",
        "seeds=" + ",".join(str(s) for s in seeds),
    ]


def _provenance(cfg, seeds):
    return {"config": cfg.name, "config_sha256": cfg.sha256, "seeds": list(seeds)}


def cmd_validate(cfg: ExperimentConfig) -> dict:
    """Run every assumption check; ``report["passed"]`` is False on any hard failure."""
    checks = []

    def add(name, status, detail, **data):
        checks.append({"check": name, "status": status, "detail": detail, **data})

    try:
        thetas = check_thetas(cfg.system, cfg.resolved_thetas())
        add("step_sizes", "pass", "every step size inside its admissible interval",
            thetas=thetas.tolist())
    except (StepSizeError, ConfigError, ValueError) as exc:
        add("step_sizes", "fail", str(exc))
    if 0.0 < cfg.beta < 1.0:
        add("beta", "pass", f"beta={cfg.beta:g} in (0, 1)")
    else:
        add("beta", "fail", f"beta={cfg.beta:g} must lie in the open interval (0, 1)")

    stochastic = True
    for k, g in enumerate(cfg.universe.graphs):
        rep = validate_doubly_stochastic(g)
        stochastic &= rep.passed
        add(f"doubly_stochastic[{k + 1}:{g.label}]", "pass" if rep.passed else "fail",
            rep.describe(), **rep.to_dict())
    conn = validate_union_connectivity(cfg.universe)
    add("union_connectivity", "pass" if conn.passed else "fail",
        f"Re(lambda2) = {conn.lambda2_real:.6g}; strongly connected: "
        f"{conn.strongly_connected}", **conn.to_dict())

    ls = cfg.system.least_squares_residual()
    A, b = cfg.system.stacked()
    consistent = ls <= 1e-9 * (1.0 + float(b @ b))
    add("consistency", "pass" if consistent else "fail",
        f"minimum stacked least-squares residual {ls:.3e}", least_squares_residual=ls)

    try:
        verdict = check_recurrence(cfg.process(), cfg.universe)
        add("recurrence", "pass" if verdict.satisfied else "warn", verdict.justification,
            **verdict.to_dict())
    except (ValueError, RandKMError) as exc:
        add("recurrence", "fail", str(exc))

    passed = all(c["status"] != "fail" for c in checks)
    return {"passed": passed, **_provenance(cfg, [cfg.seed]), "checks": checks}


def cmd_oracle(cfg: ExperimentConfig, out=None):
    """Projection-oracle limit; written to ``out/oracle.json`` when ``out`` is given."""
    result = project_affine(build_constraints(cfg.universe, cfg.tilde()), cfg.x0)
    if out is not None:
        payload = result.to_dict(cfg.m)
        payload.update(_provenance(cfg, [cfg.seed]))
        _write_json(Path(out) / "oracle.json", payload)
    return result


def _require_valid(cfg):
    report = cmd_validate(cfg)
    for c in report["checks"]:
        if c["status"] == "warn":
            log.warning("%s: %s", c["check"], c["detail"])
    if not report["passed"]:
        # an inconsistent system is reported as infeasible rather than invalid
        bad = [c for c in report["checks"] if c["status"] == "fail"]
        if [c["check"] for c in bad] == ["consistency"]:
            raise InfeasibleError(f"infeasible: {bad[0]['detail']}",
                                  residual=bad[0]["least_squares_residual"])
        raise ValidationFailed(report)
    return report


def cmd_run(cfg: ExperimentConfig, out=None, seed=None):
    """Oracle first, then one trajectory measured against it.

    Writes ``trajectory.csv``, ``errors.dat`` (``n e_n``) and ``summary.json``.
    """
    _require_valid(cfg)
    oracle = cmd_oracle(cfg, out)
    seed = cfg.seed if seed is None else int(seed)
    run_cfg = RunConfig(cfg.bundle(), cfg.process(seed=seed), cfg.x0, system=cfg.system,
                        max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                        record_stride=cfg.record_stride, seed=seed)
    rec = run_trajectory(run_cfg, oracle.x_star)
    if out is not None:
        out = Path(out)
        header = _header(cfg, [seed])
        _atomic_write(out / "trajectory.csv", lambda p: rec.to_csv(p, header))
        _atomic_write(out / "errors.dat", lambda p: rec.to_error_file(p, header))
        summary = rec.summary(cfg.decay_window)
        summary.update(_provenance(cfg, [seed]))
        summary["decay_window"] = cfg.decay_window
        summary["oracle_nullspace_dim"] = oracle.nullspace_dim
        _write_json(out / "summary.json", summary)
    return rec, oracle


def cmd_montecarlo(cfg: ExperimentConfig, out=None, trials=None, seed=None, jobs=1):
    _require_valid(cfg)
    oracle = cmd_oracle(cfg, out)
    seed = cfg.seed if seed is None else int(seed)
    trials = cfg.trials if trials is None else int(trials)
    run_cfg = RunConfig(cfg.bundle(), cfg.process(seed=seed), cfg.x0, system=None,
                        max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                        record_stride=cfg.record_stride, seed=seed)
    res = monte_carlo(run_cfg, trials, oracle.x_star, jobs=jobs)
    if out is not None:
        out = Path(out)
        header = _header(cfg, [seed]) + [f"trials={trials}"]
        _atomic_write(out / "mse.csv", lambda p: res.to_csv(p, header))
        payload = res.summary()
        payload.update(_provenance(cfg, [seed]))
        _write_json(out / "montecarlo.json", payload)
    return res, oracle


def _seed_list(v):
    if isinstance(v, dict):
        return list(range(int(v["from"]), int(v["to"]) + 1))
    return [int(s) for s in v]


def sweep_cells(cfg: ExperimentConfig, sweep: dict):
    betas = [float(b) for b in sweep.get("beta", [cfg.beta])]
    weights = [str(w) for w in sweep.get("weights", ["configured"])]
    seeds = _seed_list(sweep.get("seeds", [cfg.seed]))
    trials = [None if t in (None, 0) else int(t) for t in sweep.get("trials", [None])]
    return [dict(beta=b, weights=w, seed=s, trials=t)
            for b, w, s, t in itertools.product(betas, weights, seeds, trials)]


def _universe_for(cfg, scheme):
    if scheme == "configured":
        return cfg.universe
    if scheme.startswith("random(") and scheme.endswith(")"):
        return cfg.universe.reweighted("random", int(scheme[7:-1]))
    if scheme in ("metropolis", "lazy-metropolis"):
        return cfg.universe.reweighted(scheme)
    raise ConfigError(f"unknown weighting {scheme!r}", "sweep.weights")


def run_cell(args):
    """One sweep cell; returns a flat dict row."""
    cfg, cell, base_star = args
    universe = _universe_for(cfg, cell["weights"])
    bundle = cfg.bundle(beta=cell["beta"], universe=universe)
    oracle = project_affine(build_constraints(universe, bundle.tilde), cfg.x0)
    run_cfg = RunConfig(bundle, cfg.process(universe=universe, seed=cell["seed"]), cfg.x0,
                        system=cfg.system, max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                        record_stride=cfg.record_stride, seed=cell["seed"])
    row = dict(cell)
    row["oracle_shift"] = float(np.linalg.norm(oracle.x_star - base_star))
    if cell["trials"] is None:
        rec = run_trajectory(run_cfg, oracle.x_star)
        try:
            rate = estimate_decay_rate(rec, cfg.decay_window)
        except ValueError:
            rate = None
        row.update(
            iterations=rec.terminated_at,
            terminal_error=float(rec.errors[-1]),
            terminal_mse=None,
            decay_rate=rate,
            fejer_violations=rec.fejer_violations,
            limit_shift=float(np.linalg.norm(rec.final_state - base_star)),
            final_state=rec.final_state.tolist(),
        )
    else:
        res = monte_carlo(run_cfg, cell["trials"], oracle.x_star)
        row.update(
            iterations=cfg.max_iters,
            terminal_error=float(res.terminal_errors.max()),
            terminal_mse=float(res.mse[-1]),
            decay_rate=None,
            fejer_violations=int(res.fejer_violations.sum()),
            limit_shift=None,
            final_state=None,
        )
    return row


def cmd_sweep(cfg: ExperimentConfig, sweep=None, out=None, jobs=1):
    """Cartesian sweep over ``beta``, ``weights``, ``seeds`` and ``trials``.

    Each finished cell is written atomically to ``out/cells/``; the
    aggregate ``sweep.csv`` lists cells in their fixed enumeration order.
    """
    _require_valid(cfg)
    sweep = cfg.sweep if sweep is None else sweep
    cells = sweep_cells(cfg, sweep)
    base = cmd_oracle(cfg).x_star
    tasks = [(cfg, c, base) for c in cells]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(run_cell, tasks))
    else:
        rows = [run_cell(t) for t in tasks]
    if out is not None:
        out = Path(out)
        for k, row in enumerate(rows):
            _write_json(out / "cells" / f"cell-{k:04d}.json", row)
        seeds = sorted({c["seed"] for c in cells})
        mq = cfg.m * cfg.q
        cols = ["cell", "beta", "weights", "seed", "trials", "iterations", "terminal_error",
                "terminal_mse", "decay_rate", "fejer_violations", "oracle_shift",
                "limit_shift"] + [f"x{k + 1}" for k in range(mq)]

        def write(tmp):
            with open(tmp, "w", newline="") as fh:
                for line in _header(cfg, seeds):
                    fh.write(f"# {line}\n")
                w = csv.writer(fh)
                w.writerow(cols)
                for k, r in enumerate(rows):
                    xs = r["final_state"] or [None] * mq
                    w.writerow([k, _g(r["beta"]), r["weights"], r["seed"],
                                "" if r["trials"] is None else r["trials"], r["iterations"],
                                _g(r["terminal_error"]), _g(r["terminal_mse"]),
                                _g(r["decay_rate"]), r["fejer_violations"],
                                _g(r["oracle_shift"]), _g(r["limit_shift"])]
                               + [_g(v) for v in xs])

        _atomic_write(out / "sweep.csv", write)
    return rows


def _g(v):
    return "" if v is None else f"{float(v):.17g}"


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "max_iters", None) is not None:
        if args.max_iters < 1:
            raise ConfigError("must be at least 1", "--max-iters")
        changes["max_iters"] = args.max_iters
    if getattr(args, "tol", None) is not None:
        if args.tol < 0:
            raise ConfigError("must be nonnegative", "--tol")
        changes["stop_tol"] = args.tol
    if getattr(args, "seed", None) is not None:
        changes["process_table"] = {**cfg.process_table, "seed": args.seed}
    return replace(cfg, **changes) if changes else cfg


def build_parser():
    p = argparse.ArgumentParser(prog="randkm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run_flags=True):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--out", help="output directory (default: [output] dir)")
        if run_flags:
            sp.add_argument("--seed", type=int, help="override the process seed")
            sp.add_argument("--max-iters", type=int, dest="max_iters")
            sp.add_argument("--tol", type=float, help="displacement stopping tolerance")
            sp.add_argument("--jobs", type=int, default=1)

    common(sub.add_parser("validate", help="check every assumption"), run_flags=False)
    common(sub.add_parser("oracle", help="compute the limit point"), run_flags=False)
    common(sub.add_parser("run", help="single trajectory"))
    mc = sub.add_parser("montecarlo", help="mean-square error over seeded trials")
    common(mc)
    mc.add_argument("--trials", type=int)
    sw = sub.add_parser("sweep", help="invariance and robustness sweeps")
    common(sw)
    sw.add_argument("--sweep", help="TOML file with a [sweep] table (default: the config's)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out) if args.out else (cfg.path.parent / cfg.output_dir)
        if args.command == "validate":
            report = cmd_validate(cfg)
            for c in report["checks"]:
                print(f"{c['status'].upper():5} {c['check']}: {c['detail']}")
            _write_json(out / "validate.json", report)
            return EXIT_OK if report["passed"] else EXIT_INVALID
        if args.command == "oracle":
            res = cmd_oracle(cfg, out)
            print(json.dumps({"x_star": res.x_star.tolist(),
                              "nullspace_dim": res.nullspace_dim,
                              "constraint_residual": res.constraint_residual}))
        elif args.command == "run":
            rec, _ = cmd_run(cfg, out)
            print(json.dumps({k: v for k, v in rec.summary(cfg.decay_window).items()
                              if k != "terminal_state"}))
        elif args.command == "montecarlo":
            res, _ = cmd_montecarlo(cfg, out, trials=args.trials, jobs=args.jobs)
            print(json.dumps({k: v for k, v in res.summary().items()
                              if k != "terminal_errors"}))
        elif args.command == "sweep":
            sweep = None
            if args.sweep:
                with open(args.sweep, "rb") as fh:
                    raw = tomllib.load(fh)
                sweep = raw.get("sweep", raw)
            rows = cmd_sweep(cfg, sweep, out, jobs=args.jobs)
            print(f"{len(rows)} cells written to {out / 'sweep.csv'}")
        return EXIT_OK
    except ValidationFailed as exc:
        for c in exc.report["checks"]:
            if c["status"] == "fail":
                print(f"FAIL  {c['check']}: {c['detail']}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, StepSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RandKMError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
