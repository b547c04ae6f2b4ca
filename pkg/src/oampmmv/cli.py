"""Command line front end.

Subcommands: simulate (Monte-Carlo on one scenario), sweep (vary one axis),
se (deterministic performance prediction), sic-sweep (coded runs over the
per-round cancellation budget). Exit codes: 0 success, 2 bad configuration,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys

from . import kernels
from .detectors import DetectorConfig
from .exceptions import ConfigurationError, NumericalFailure
from .harness import (
    DETECTOR_NAMES,
    SweepSpec,
    emit_results,
    run_coded_trials,
    run_sweep,
    run_trials,
    scenario_snapshot,
)
from .model import derive_rng, generate_slot, scenario_from_config
from .sic import SICConfig
from .state_evolution import SEConfig, se_run

__all__ = ["main", "build_parser"]


def _parse_set(pairs) -> dict:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got '{pair}'")
        key, val = pair.split("=", 1)
        overrides[key.strip()] = val.strip()
    return overrides


def _detector_config(args) -> DetectorConfig:
    return DetectorConfig(
        max_iters=args.iters,
        empirical_variance=args.empirical_variance,
        lambda_init=args.lambda_init,
    )


def _add_common(parser):
    parser.add_argument("--config", help="scenario file with key=value lines")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a scenario key (K, Ka, M, T, snr_db, modulation, seed)",
    )
    parser.add_argument("--iters", type=int, default=50, help="iteration cap")
    parser.add_argument(
        "--empirical-variance",
        action="store_true",
        help="estimate the interface variance from the residual energy",
    )
    parser.add_argument(
        "--lambda-init", type=float, default=None, help="fixed initial sparsity ratio"
    )
    parser.add_argument("--output", help="write results to this CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oampmmv",
        description="OAMP-based joint activity and data detection simulator",
    )
    parser.add_argument(
        "--backend",
        choices=("auto", "numba", "numpy"),
        help="kernel backend (default: OAMPMMV_BACKEND or auto)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte-Carlo runs on one scenario")
    _add_common(sim)
    sim.add_argument(
        "--detectors",
        default="ssl",
        help=f"comma list from {','.join(DETECTOR_NAMES)}",
    )
    sim.add_argument("--trials", type=int, default=10)
    sim.add_argument("--coded", action="store_true", help="encode payloads and count info-bit errors")
    sim.add_argument(
        "--trace", help="write the per-iteration trace of slot 0 to this CSV"
    )

    swp = sub.add_parser("sweep", help="vary one axis over a value list")
    _add_common(swp)
    swp.add_argument("--axis", required=True, choices=("M", "snr_db", "T", "lambda0"))
    swp.add_argument("--values", required=True, help="comma list of axis values")
    swp.add_argument("--detectors", default="ssl,asl")
    swp.add_argument("--trials", type=int, default=100)
    swp.add_argument("--coded", action="store_true")

    sev = sub.add_parser("se", help="deterministic per-iteration prediction")
    _add_common(sev)
    sev.add_argument("--detector", default="asl", choices=("ssl", "asl"))
    sev.add_argument("--samples", type=int, default=1000)

    sic = sub.add_parser("sic-sweep", help="coded cancellation budget sweep")
    _add_common(sic)
    sic.add_argument("--detector", default="ssl", choices=("ssl", "asl"))
    sic.add_argument("--values", default="10", help="comma list of per-round budgets")
    sic.add_argument("--rounds", type=int, default=10)
    sic.add_argument("--trials", type=int, default=100)
    return parser


def _split_values(text: str):
    try:
        return tuple(float(v) if "." in v or "e" in v.lower() else int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bad value list '{text}'") from exc


def _print_row(row) -> None:
    adep = ("<" if row.adep_censored else "") + f"{row.adep:.3e}"
    ber = ("<" if row.ber_censored else "") + f"{row.ber:.3e}"
    print(
        f"axis={row.axis:g} detector={row.detector} adep={adep} ber={ber} "
        f"mse={row.mse:.3e} trials={row.trials} failures={row.failures}"
    )


def _dump_trace(args, scenario, config) -> None:
    from .harness import _dispatch

    codes = scenario.spreading_matrix()
    slot = generate_slot(scenario, codes, derive_rng(scenario.master_seed, "slot", 0))
    name = args.detectors.split(",")[0].strip()
    res = _dispatch(name, slot, scenario, codes, config)
    trace = res.trace
    with open(args.trace, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "t", "tau", "v", "sigma2", "mean_lambda", "mean_xi"])
        for it in range(len(trace.sigma2)):
            xi = "" if trace.mean_xi is None else repr(float(trace.mean_xi[it]))
            for t in range(trace.tau.shape[1]):
                writer.writerow(
                    [
                        it,
                        t,
                        repr(float(trace.tau[it, t])),
                        repr(float(trace.v[it, t])),
                        repr(float(trace.sigma2[it])),
                        repr(float(trace.mean_lambda[it])),
                        xi,
                    ]
                )


def _cmd_simulate(args) -> int:
    scenario = scenario_from_config(args.config, _parse_set(args.set))
    config = _detector_config(args)
    names = [n.strip() for n in args.detectors.split(",") if n.strip()]
    from .harness import _record_to_row

    rows = []
    all_failed = False
    for name in names:
        if args.coded:
            rec = run_coded_trials(scenario, name, args.trials, config)
        else:
            rec = run_trials(scenario, name, args.trials, config)
        rows.append(_record_to_row(rec, scenario.n_obs))
        _print_row(rows[-1])
        all_failed = all_failed or rec.n_failures == rec.n_slots
    if args.trace:
        _dump_trace(args, scenario, config)
    if args.output:
        emit_results(rows, args.output, {"scenario": scenario_snapshot(scenario)})
    return 3 if all_failed else 0


def _cmd_sweep(args) -> int:
    scenario = scenario_from_config(args.config, _parse_set(args.set))
    spec = SweepSpec(
        scenario=scenario,
        axis=args.axis,
        values=_split_values(args.values),
        detectors=tuple(n.strip() for n in args.detectors.split(",") if n.strip()),
        n_trials=args.trials,
        config=_detector_config(args),
        coded=args.coded,
    )
    rows = run_sweep(spec, progress=_print_row)
    if args.output:
        emit_results(
            rows,
            args.output,
            {"scenario": scenario_snapshot(scenario), "axis": args.axis},
        )
    return 0


def _cmd_se(args) -> int:
    scenario = scenario_from_config(args.config, _parse_set(args.set))
    cfg = SEConfig(
        scenario=scenario,
        detector=args.detector,
        n_samples=args.samples,
        max_iters=args.iters,
        lambda_init=args.lambda_init,
    )
    trace = se_run(cfg)
    theta_db = trace.theta_db
    for it in range(len(theta_db)):
        print(
            f"iter={it} theta_db={theta_db[it]:.3f} "
            f"ber={trace.predicted_ber[it]:.3e} adep={trace.predicted_adep[it]:.3e}"
        )
    if args.output:
        with open(args.output, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "theta_db", "predicted_ber", "predicted_adep"])
            for it in range(len(theta_db)):
                writer.writerow(
                    [
                        it,
                        repr(float(theta_db[it])),
                        repr(float(trace.predicted_ber[it])),
                        repr(float(trace.predicted_adep[it])),
                    ]
                )
    return 0


def _cmd_sic_sweep(args) -> int:
    scenario = scenario_from_config(args.config, _parse_set(args.set))
    spec = SweepSpec(
        scenario=scenario,
        axis="n_per_round",
        values=_split_values(args.values),
        detectors=(args.detector,),
        n_trials=args.trials,
        config=_detector_config(args),
        coded=True,
        sic=SICConfig(max_rounds=args.rounds, detector=args.detector),
    )
    rows = run_sweep(spec, progress=_print_row)
    if args.output:
        emit_results(
            rows,
            args.output,
            {"scenario": scenario_snapshot(scenario), "axis": "n_per_round"},
        )
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "se": _cmd_se,
    "sic-sweep": _cmd_sic_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.backend:
            kernels.set_backend(args.backend)
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
