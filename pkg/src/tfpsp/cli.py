"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (spec, scenario or assignment), 3
numerical divergence of the estimator.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .channel import ConfigError, build_beam_operators, sft_direct_offgrid, tb_to_sft
from .estimator import DivergenceError, EstimatorConfig
from .harness import (
    SpecError,
    estimate_users,
    nmse,
    rows_to_csv,
    snr_to_sigma_z,
    sweep,
    to_db,
    trial_channels,
    trial_seeds,
)
from .io import (
    assignment_from_dict,
    assignment_to_dict,
    estimate_to_dict,
    load_spec,
    read_json,
    scenario_from_dict,
    scenario_to_dict,
    write_json,
)
from .pilots import complex_noise
from .scheduler import schedule, schedule_objective

EXIT_OK, EXIT_SPEC, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("tfpsp")


def _divergences(records) -> list[str]:
    return [r.error for r in records if r.error and r.error.startswith("DivergenceError")]


def cmd_simulate(args) -> int:
    spec = load_spec(args.spec)
    rows, records = sweep(spec, args.jobs)
    summary = [asdict(r) for r in rows]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(rows_to_csv(rows))
        write_json(out / "trials.json", {"schema_version": 1, "kind": "trials",
                                         "records": [asdict(r) for r in records]})
        if spec.trials:
            chans = trial_channels(spec, 0)
            write_json(out / "scenario.json", scenario_to_dict(chans, spec.grid(), spec.power_model,
                                                               spec.leakage_floor))
    print(json.dumps({"rows": summary}, indent=1))
    div = _divergences(records)
    if div:
        log.error("%d trial(s) diverged, first: %s", len(div), div[0])
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_schedule(args) -> int:
    channels, grid = scenario_from_dict(read_json(args.scenario))
    if not 0 <= args.gamma < 1:
        raise SpecError("gamma must lie in [0, 1)")
    W_list = [c.W for c in channels]
    asg, groups, etas = schedule(W_list, grid, args.gamma, args.scheme, args.phi_stride)
    report = {"groups": groups.count, "max_eta": max(etas) if etas else 0.0,
              "objective": schedule_objective(W_list, asg, grid)}
    doc = assignment_to_dict(asg, args.scheme, report)
    out = args.out or str(Path(args.scenario).with_name("assignment.json"))
    write_json(out, doc)
    print(json.dumps({"assignment": out, **report}, indent=1))
    return EXIT_OK


def _estimator_config(args) -> EstimatorConfig:
    if args.damping_product is not None:
        return EstimatorConfig(damping=None, damping_product=args.damping_product,
                               t_max=args.t_max, tol=args.tol)
    return EstimatorConfig(damping=args.damping, t_max=args.t_max, tol=args.tol)


def cmd_estimate(args) -> int:
    channels, grid = scenario_from_dict(read_json(args.scenario))
    asg, scheme = assignment_from_dict(read_json(args.assignment))
    cfg = grid.cfg
    if len(asg) != cfg.U:
        raise SpecError(f"assignment has {len(asg)} users, scenario has {cfg.U}")
    try:
        asg.validate(cfg)
        est_cfg = _estimator_config(args)
    except ValueError as e:
        raise SpecError(str(e)) from e
    cfg = replace(cfg, sigma_z=snr_to_sigma_z(args.snr_db, cfg.sigma_p))
    ops = build_beam_operators(grid)
    truth = [sft_direct_offgrid(c.paths, cfg, "pilot") for c in channels]
    noise = complex_noise((cfg.M, cfg.K, cfg.N_p), trial_seeds(args.seed, 0)[1])
    try:
        res = estimate_users(truth, [c.W for c in channels], asg, ops, cfg, scheme, args.estimator,
                             est_cfg, noise, args.mmse_cap)
    except DivergenceError:
        raise
    except ValueError as e:  # size cap and similar input problems
        raise SpecError(str(e)) from e
    err = nmse([tb_to_sft(h, ops, "pilot") for h in res.per_ut], truth)
    doc = estimate_to_dict(res.per_ut, estimator=args.estimator, iterations=res.iterations,
                           converged=res.converged, final_residual=res.final_residual,
                           support_size=res.support_size,
                           extra={"snr_db": args.snr_db, "nmse_db": to_db(err)})
    out = args.out or str(Path(args.scenario).with_name("estimate.json"))
    write_json(out, doc)
    print(json.dumps({"estimate": out, "nmse_db": to_db(err), "iterations": res.iterations,
                      "converged": res.converged}, indent=1))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_spec(args.spec)
    rows, records = sweep(spec, args.jobs)
    Path(args.out).write_text(rows_to_csv(rows))
    div = _divergences(records)
    if div:
        log.error("%d trial(s) diverged, first: %s", len(div), div[0])
        return EXIT_DIVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfpsp", description="Pilot scheduling and TB channel estimation simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the Monte-Carlo trials of a spec")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", help="directory for sweep.csv, trials.json and scenario.json")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("schedule", help="group UTs and assign pilot phase shifts")
    s.add_argument("--scenario", required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--scheme", choices=["tfpsp", "fpsp"], default="tfpsp")
    s.add_argument("--phi-stride", type=int, default=None)
    s.add_argument("--out", help="assignment file (default: assignment.json next to the scenario)")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("estimate", help="transmit pilots through a scenario and estimate the channels")
    s.add_argument("--scenario", required=True)
    s.add_argument("--assignment", required=True)
    s.add_argument("--estimator", choices=["iga", "mmse"], required=True)
    s.add_argument("--snr-db", type=float, default=20.0)
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.add_argument("--damping", type=float, default=EstimatorConfig.damping)
    s.add_argument("--damping-product", type=float, default=None,
                   help="fix alpha*A instead of alpha")
    s.add_argument("--t-max", type=int, default=EstimatorConfig.t_max)
    s.add_argument("--tol", type=float, default=EstimatorConfig.tol)
    s.add_argument("--mmse-cap", type=int, default=4096)
    s.add_argument("--out", help="estimate file (default: estimate.json next to the scenario)")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sweep", help="SNR sweep of a spec, written as CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SPEC
    except DivergenceError as e:
        print(f"error: estimator diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
