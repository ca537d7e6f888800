"""
NV Phase-Transfer Simulator - command line entry point

Usage:
    python main.py <subcommand> [--config PATH] [--out DIR] [--set key=value ...]
                   [--seed N] [--sequence PATH] [--log-level LEVEL]

Subcommands:
    mw2opt        MW -> optical phase transfer (fringe, visibility vs window start)
    cpt           CPT dip vs Raman detuning
    pump          optical pumping traces on/off Raman resonance
    opt2mw        optical -> MW phase transfer (fringe, visibility vs delay)
    calibrate     fit gamma_sp / gamma_mix to the measured pumping times
    check         run the invariant suite
    sequence-run  propagate a JSON pulse sequence and write trajectory.csv

Exit codes: 0 ok, 1 config or usage error, 2 numerical failure, 3 check failure.
"""

from typing import Dict, List, Optional, Sequence
import argparse
import json
import logging
import math
import os
import sys

from calibration import calibrate_rates
from experiments import EXPERIMENTS, ExperimentResult
from invariant_suite import run_invariant_suite
from master_equation import NumericalError, run_sequence, trajectory_to_csv
from pulse_sequences import parse_sequence_file
from sim_config import ConfigError, ExperimentConfig, load_config, with_seed

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CHECK = 3

SUBCOMMANDS = tuple(EXPERIMENTS) + ("calibrate", "check", "sequence-run")

SUMMARY_KEYS: Dict[str, Sequence[str]] = {
    "mw2opt": ("fringe_visibility", "fringe_phase_rad", "visibility_tau_ns"),
    "cpt": ("center_mhz", "fwhm_mhz", "depth"),
    "pump": ("tau_fast_ns", "tau_slow_ns", "tau_double_ns"),
    "opt2mw": ("fringe_visibility", "fringe_min_phase_rad", "visibility_tau_ns"),
}


class UsageError(Exception):
    """Bad command line (unknown subcommand, missing flag)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="main.py", description="NV center microwave/optical phase-transfer simulator")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="JSON config (schema 1); defaults when omitted")
    parser.add_argument("--out", default=None, help="output directory (default results/<subcommand>)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--sequence", default=None, help="JSON pulse sequence for sequence-run")
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return parser


def _format_value(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def summary_line(result: ExperimentResult) -> str:
    keys = SUMMARY_KEYS.get(result.experiment, tuple(result.derived))
    parts = [f"{key}={_format_value(result.derived.get(key))}" for key in keys]
    return f"{result.experiment}: " + " ".join(parts)


def _run_experiment(name: str, cfg: ExperimentConfig, out_dir: str) -> int:
    result = EXPERIMENTS[name](cfg)
    result.save(out_dir)
    print(summary_line(result))
    return EXIT_OK


def _run_calibrate(cfg: ExperimentConfig, out_dir: str) -> int:
    result = calibrate_rates(cfg)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "calibration.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(result.to_fragment(), handle, indent=2)
        handle.write("\n")
    print(
        f"calibrate: gamma_sp={result.gamma_sp:.6g} gamma_mix={result.gamma_mix:.6g} "
        f"tau_fast_ns={result.tau_fast_ns:.6g} tau_slow_ns={result.tau_slow_ns:.6g}"
    )
    return EXIT_OK


def _run_check(cfg: ExperimentConfig) -> int:
    report = run_invariant_suite(cfg)
    print(report.summary())
    for failure in report.failures():
        detail = f" ({failure.detail})" if failure.detail else ""
        print(f"FAILED {failure.name}: residual={failure.residual:.3e} threshold={failure.threshold:.1e}{detail}")
    return EXIT_OK if report.passed else EXIT_CHECK


def _run_sequence_file(cfg: ExperimentConfig, sequence_path: Optional[str], out_dir: str) -> int:
    if not sequence_path:
        raise UsageError("sequence-run: --sequence PATH is required")
    try:
        with open(sequence_path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"sequence: cannot read {sequence_path}: {exc.strerror}") from None
    seq = parse_sequence_file(text)
    traj = run_sequence(
        seq,
        params=cfg.decoherence,
        cfg=cfg.integrator,
        hyperfine_mhz=cfg.physics.hyperfine_mhz,
        hyperfine_selectivity=cfg.physics.hyperfine_selectivity,
        workers=cfg.workers,
    )
    os.makedirs(out_dir, exist_ok=True)
    trajectory_to_csv(traj, os.path.join(out_dir, "trajectory.csv"))
    final = traj.final_state()
    pops = " ".join(f"{label}={final.population(label):.6g}" for label in ("G0", "GM", "GP", "A2", "EY"))
    print(f"sequence-run: {seq.name} t_end_ns={traj.times[-1]:.6g} {pops}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    out_dir = args.out or os.path.join("results", args.subcommand)

    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
        logger.info("[CLI] Running %s (out=%s, seed=%d)", args.subcommand, out_dir, cfg.seed)

        if args.subcommand in EXPERIMENTS:
            return _run_experiment(args.subcommand, cfg, out_dir)
        if args.subcommand == "calibrate":
            return _run_calibrate(cfg, out_dir)
        if args.subcommand == "check":
            return _run_check(cfg)
        return _run_sequence_file(cfg, args.sequence, out_dir)
    except NumericalError as exc:
        # NumericalError subclasses are also ValueErrors; they must map to 2
        logger.error("[CLI] Numerical failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("[CLI] Cannot write results: %s", exc)
        target = f" {exc.filename}" if exc.filename else ""
        print(f"error: cannot write{target}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
