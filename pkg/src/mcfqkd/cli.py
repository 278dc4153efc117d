"""Command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 simulation error,
4 failed self-check.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ENV_VAR, channel_model, config_hash, experiment_config, load_config,
                     protocol_params)
from .engine import (EXPERIMENTS, run_long_qber, run_qkd_emulation, run_state_distribution,
                     run_stability_comparison)
from .errors import ConfigError, ParameterError, SimulationError
from .io import read_table, write_metadata, write_table
from .keyrate import ObservedStatistics, optimize_params, secret_key_length, expected_statistics
from .selfcheck import format_table, run_selfcheck

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("mcfqkd")


class UsageError(Exception):
    pass


def _out_dir(path: str | None) -> Path:
    out = Path(path or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _meta(raw: dict, args, **extra) -> dict:
    return {"config_hash": config_hash(raw), "seed": args.seed if args.seed is not None else raw["seed"],
            "subcommand": args.command, "config": raw, **extra}


def _stats_columns(stats: ObservedStatistics) -> dict:
    rows = stats.to_rows()
    return {
        "basis": [r["basis"] for r in rows],
        "intensity": [r["intensity"] for r in rows],
        "detections": [r["detections"] for r in rows],
        "errors": [r["errors"] for r in rows],
        "n_pulses": [stats.n_pulses] * len(rows),
    }


def cmd_simulate(args, raw: dict) -> int:
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = experiment_config(raw, args.experiment, args.seed)
    out = _out_dir(args.out)
    written = []
    settings = raw["experiments"][args.experiment]
    if args.experiment == "stability_comparison":
        for ts, name in zip(run_stability_comparison(cfg), ("mcf", "smf")):
            p = write_table(out / f"stability_{name}.csv", ts.columns())
            write_metadata(p, _meta(raw, args, experiment=args.experiment, fiber=name))
            written.append(p)
    elif args.experiment == "state_distribution":
        sd = run_state_distribution(cfg)
        d = sd.raw.shape[1]
        cols = {"state": sd.labels,
                "basis": [sd.basis_names[i // d] for i in range(len(sd.labels))]}
        for j in range(d):
            cols[f"counts_o{j + 1}"] = sd.counts[:, j]
        for j in range(d):
            cols[f"raw_o{j + 1}"] = sd.raw[:, j]
        for j in range(d):
            cols[f"corrected_o{j + 1}"] = sd.corrected[:, j]
        p = write_table(out / "state_distribution.csv", cols)
        write_metadata(p, _meta(raw, args, experiment=args.experiment, window_s=sd.window,
                                mean_fidelity_corrected=sd.basis_mean_fidelity(True),
                                mean_fidelity_raw=sd.basis_mean_fidelity(False)))
        written.append(p)
        for name, f in sd.basis_mean_fidelity().items():
            print(f"{name} mean fidelity (corrected): {100 * f:.2f} %")
    elif args.experiment == "long_qber":
        ts = run_long_qber(cfg, int(settings.get("basis", 1)), int(settings.get("state", 1)),
                           settings.get("intensity", "signal"))
        p = write_table(out / "long_qber.csv", ts.columns())
        write_metadata(p, _meta(raw, args, experiment=args.experiment, **ts.metadata))
        written.append(p)
        print(f"mean QBER (corrected): {100 * np.nanmean(ts.qber_corrected):.2f} %, "
              f"lock losses: {ts.metadata['total_lock_losses']}")
    else:
        protocol = protocol_params(raw)
        stats = run_qkd_emulation(cfg, protocol, float(settings.get("step_seconds", 10.0)))
        p = write_table(out / "qkd_statistics.csv", _stats_columns(stats))
        report = secret_key_length(protocol, stats)
        write_metadata(p, _meta(raw, args, experiment=args.experiment, key_rate=report.as_dict()))
        written.append(p)
        _print_report(report)
    for p in written:
        log.info("wrote %s", p)
    return EXIT_OK


def _load_stats(path: Path) -> ObservedStatistics:
    try:
        rows = read_table(path)
    except OSError as exc:
        raise UsageError(f"cannot read statistics file {path}: {exc.strerror}") from None
    if not rows:
        raise UsageError(f"statistics file {path} is empty")
    try:
        n_pulses = float(rows[0]["n_pulses"])
        return ObservedStatistics.from_rows(rows, n_pulses)
    except KeyError as exc:
        raise UsageError(f"statistics file {path} lacks column {exc}") from None
    except ParameterError as exc:
        raise UsageError(f"statistics file {path}: {exc}") from None


def _print_report(report) -> None:
    print(f"secret key length l    : {report.length:.6g} bits" + ("  (no key)" if report.no_key else ""))
    print(f"rate                   : {report.rate:.6g} bit/pulse")
    print(f"rate                   : {report.rate_hz:.6g} bit/s")
    print(f"QBER_Z                 : {report.qber_Z:.6g}")
    print(f"s_Z0 lower             : {report.s_Z0_lower:.6g}")
    print(f"s_Z1 lower             : {report.s_Z1_lower:.6g}")
    print(f"phase error upper      : {report.phase_error_upper:.6g}")
    print(f"lambda_EC              : {report.lambda_ec:.6g} bits")


def cmd_keyrate(args, raw: dict) -> int:
    protocol = protocol_params(raw)
    model = channel_model(raw)
    stats_file = args.stats or raw["keyrate"]["stats_file"]
    if stats_file:
        stats = _load_stats(Path(stats_file))
    else:
        stats = expected_statistics(protocol, model.loss_db, model.detector, model.intrinsic_error,
                                    model.dead_time)
    report = secret_key_length(protocol, stats)
    _print_report(report)
    result = report.as_dict()
    if args.optimize:
        bounds = {k: tuple(map(float, v)) for k, v in raw["keyrate"]["optimize"].items()}
        best, rate = optimize_params(protocol, model, bounds, int(raw["keyrate"]["points"]),
                                     int(raw["keyrate"]["rounds"]))
        for k in sorted(bounds):
            print(f"optimal {k:<17}: {getattr(best, k):.4f}")
        print(f"optimal rate           : {rate:.6g} bit/pulse")
        result.update({f"optimal_{k}": getattr(best, k) for k in bounds}, optimal_rate=rate)
    if args.out:
        out = _out_dir(args.out)
        p = write_table(out / "keyrate.csv", {"quantity": list(result), "value": list(result.values())})
        write_metadata(p, _meta(raw, args, stats_file=stats_file))
    return EXIT_OK


def cmd_selfcheck(args, raw: dict) -> int:
    results = run_selfcheck()
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML config file (default: ${ENV_VAR}, then built-in defaults)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="mcfqkd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one experiment")
    sim.add_argument("--experiment", required=True, help=", ".join(EXPERIMENTS))
    kr = sub.add_parser("keyrate", parents=[common], help="finite-key rate report")
    kr.add_argument("--optimize", action="store_true", help="optimize the free protocol parameters")
    kr.add_argument("--stats", help="CSV of observed statistics (basis,intensity,detections,errors,n_pulses)")
    sub.add_parser("selfcheck", parents=[common], help="run release-gate checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    handlers = {"simulate": cmd_simulate, "keyrate": cmd_keyrate, "selfcheck": cmd_selfcheck}
    try:
        raw = load_config(args.config)
        return handlers[args.command](args, raw)
    except (UsageError, ConfigError) as exc:
        print(f"mcfqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print(f"mcfqkd: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
