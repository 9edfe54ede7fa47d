"""Command-line interface: ``cellfree-fl <command> [options]``.

Exit codes are 0 on success, 2 for configuration or input errors and 3 for
numerical failures.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._channel import draw_channel, export_coefficients
from ._config import load_config
from ._exceptions import CellFreeFLError, ConfigError, NumericalError
from ._fl import save_csv
from ._orchestrator import (
    compare,
    load_datasets,
    run,
    write_comparison_csv,
    write_metrics_csv,
    write_plot_data,
    write_summary_json,
)
from ._power import PowerProblem, solve
from ._quantizers import ElementClass, QuantSpec, encode_mixed, error_bound

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CHANNEL_FILES = ["beta.csv", "A_bar.csv", "B_bar.csv", "I_M.csv", "B_tilde.csv"]
PLOT_FILES = ["accuracy_vs_round.csv", "accuracy_vs_latency.csv"]


def build_parser():
    from . import __version__

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON configuration file")
    common.add_argument("--output-dir", type=Path, default=Path("."), help="directory for result files")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration key; repeatable",
    )
    common.add_argument("--seed", type=int, help="run seed, replacing the configured one")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    common.add_argument("--force", action="store_true", help="overwrite existing result files")
    common.add_argument("--json-errors", action="store_true", help="report errors as JSON on stdout")

    parser = argparse.ArgumentParser(
        prog="cellfree-fl",
        description="Federated learning over a cell-free massive MIMO uplink with mixed-resolution quantization.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="run one arm and write metrics")
    simulate.add_argument("--arm", help="'<quantizer>:<power>', default from quant.scheme and solver.power")
    simulate.add_argument("--emit-plot-data", action="store_true", help="write accuracy-vs-round/latency CSVs")
    simulate.add_argument("--export-channel", action="store_true", help="write the channel coefficients as CSV")

    comparison = commands.add_parser("compare", parents=[common], help="run several arms on identical data")
    comparison.add_argument("--arm", dest="arms", action="append", help="arm to run; repeatable")

    quantize = commands.add_parser("quantize", parents=[common], help="encode one vector file")
    quantize.add_argument("vector", type=Path, help="little-endian float32 file (.f32) or CSV")
    quantize.add_argument("--lambda", dest="lam", type=float, help="magnitude-ratio threshold")
    quantize.add_argument("--bits", type=int, help="high-resolution bit width")

    powerctl = commands.add_parser("powerctl", parents=[common], help="solve one power-control problem")
    powerctl.add_argument("problem", type=Path, help="JSON with A_bar, B_bar, B_tilde, I_M, bits, B_tau")
    powerctl.add_argument("--eps-b", type=float, help="bisection tolerance in 1/s")
    powerctl.add_argument("--feasibility", choices=["fixed-point", "linprog"])

    commands.add_parser("gen-data", parents=[common], help="write the synthetic train/test CSVs")
    return parser


def configure_logging(verbose):
    level = logging.WARNING if verbose <= 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def parse_and_validate(args):
    """Load the configuration named by ``args``, apply overrides and validate it.

    Returns
    -------
    config : SimConfig

    Raises
    ------
    ConfigError
        Listing every violated rule.
    """
    return load_config(args.config, args.overrides, args.seed)


def _prepare_output(directory, names, force):
    directory.mkdir(parents=True, exist_ok=True)
    existing = [str(directory / name) for name in names if (directory / name).exists()]
    if existing and not force:
        raise FileExistsError(f"{', '.join(existing)} exists; pass --force to overwrite")
    return directory


def _arm_filename(arm):
    return arm.replace(":", "_")


def cmd_simulate(args):
    config = parse_and_validate(args)
    names = ["metrics.csv", "summary.json"]
    names += PLOT_FILES if args.emit_plot_data else []
    names += CHANNEL_FILES if args.export_channel else []
    out = _prepare_output(args.output_dir, names, args.force)

    report = run(config, args.arm)
    write_metrics_csv(report, out / "metrics.csv")
    write_summary_json(report, out / "summary.json")
    if args.emit_plot_data:
        write_plot_data(report, out)
    if args.export_channel:
        export_coefficients(out, draw_channel(config.network, config.network_seed))
    logger.info("wrote %d rounds to %s", len(report.rounds), out)


def cmd_compare(args):
    config = parse_and_validate(args)
    arms = args.arms or config.baselines.arms
    names = ["comparison.csv", "summary.json"] + [f"metrics-{_arm_filename(arm)}.csv" for arm in arms]
    out = _prepare_output(args.output_dir, names, args.force)

    report = compare(config, arms)
    write_comparison_csv(report, out / "comparison.csv")
    for arm, arm_report in report.reports.items():
        write_metrics_csv(arm_report, out / f"metrics-{_arm_filename(arm)}.csv")
    document = {
        "arms": {arm: arm_report.summary for arm, arm_report in report.reports.items()},
        "dominance": report.dominance,
        "dominance_holds": report.dominance_holds,
        "seed": config.seed,
        "config": config.to_dict(),
    }
    with open(out / "summary.json", "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def read_vector(path):
    """Read a vector from a CSV file or a raw little-endian float32 file."""
    path = Path(path)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=1).ravel()
    return np.fromfile(path, dtype="<f4").astype("float64")


def quantize_report(vector, spec):
    """Encode ``vector`` and measure the reconstruction error.

    Returns
    -------
    update : QuantizedUpdate
    sidecar : dict
    """
    update = encode_mixed(vector, spec)
    decoded = update.decode()
    error = np.abs(vector - decoded)
    high = update.classes == ElementClass.HIGH
    norm = float(np.max(np.abs(vector), initial=0.0))
    sidecar = {
        "d": update.d,
        "lambda": spec.lam,
        "bits": int(spec.bits),
        "high_count": update.high_count,
        "payload_bits": update.payload_bits,
        "anchor": update.anchor,
        "grid_radius": update.grid_radius,
        "max_abs_error": float(error.max(initial=0.0)),
        "max_abs_error_high": float(error[high].max(initial=0.0)),
        "max_outward_error_low": float(np.max(np.abs(vector[~high]) - update.anchor / 2, initial=0.0)),
        "high_error_bound": (1 - spec.lam) * norm / (2 * spec.levels),
        "low_error_bound": error_bound(spec).c * norm,
        "is_zero": update.is_zero,
    }
    return update, sidecar


def cmd_quantize(args):
    config = parse_and_validate(args)
    lam = config.quant.lam if args.lam is None else args.lam
    bits = config.quant.bits if args.bits is None else args.bits
    try:
        spec = QuantSpec(lam, bits)
    except ValueError as exc:
        raise ConfigError([f"quantize: {exc}"]) from exc
    vector = read_vector(args.vector)

    stem = args.vector.stem
    out = _prepare_output(args.output_dir, [f"{stem}.payload.bin", f"{stem}.payload.json"], args.force)
    update, sidecar = quantize_report(vector, spec)
    (out / f"{stem}.payload.bin").write_bytes(update.to_bytes())
    with open(out / f"{stem}.payload.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(sidecar, sort_keys=True))


def cmd_powerctl(args):
    config = parse_and_validate(args)
    problem = PowerProblem.from_dict(json.loads(args.problem.read_text()))
    solver = config.solver
    solution = solve(
        problem,
        eps_b=solver.eps_b if args.eps_b is None else args.eps_b,
        rel_eps=solver.rel_eps_b,
        feasibility=args.feasibility or solver.feasibility,
        tol=solver.tol,
        maxiter=solver.maxiter,
        slack=solver.slack,
        exponent_cap=solver.exponent_cap,
    )
    print(json.dumps(solution.to_dict(), sort_keys=True))


def cmd_gen_data(args):
    config = parse_and_validate(args)
    if config.training.dataset == "csv":
        raise ConfigError(["training.dataset must be 'synthetic' or 'topics' for gen-data"])
    out = _prepare_output(args.output_dir, ["train.csv", "test.csv"], args.force)
    train, test = load_datasets(config)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "quantize": cmd_quantize,
    "powerctl": cmd_powerctl,
    "gen-data": cmd_gen_data,
}


def _report_errors(args, errors, exit_code):
    if getattr(args, "json_errors", False):
        print(json.dumps({"errors": errors, "exit_code": exit_code}))
    else:
        for error in errors:
            print(f"error: {error}", file=sys.stderr)
    return exit_code


def dispatch(args):
    """Run the subcommand named by ``args.command`` and map failures to exit codes.

    Returns
    -------
    exit_code : int
    """
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        return _report_errors(args, exc.errors, EXIT_CONFIG)
    except NumericalError as exc:
        return _report_errors(args, [str(exc)], EXIT_NUMERICAL)
    except (CellFreeFLError, ValueError, KeyError, OSError) as exc:
        return _report_errors(args, [str(exc)], EXIT_CONFIG)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    return dispatch(args)
