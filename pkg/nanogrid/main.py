import argparse
import logging
import sys

from nanogrid.assets import write_ev_sessions
from nanogrid.config import (build_controllers, build_forecaster, build_scenario, load_run_config,
                             needs_forecaster)
from nanogrid.control import ControllerConfig, run_controller
from nanogrid.errors import ConfigError, NanogridError
from nanogrid.forecast import evaluate
from nanogrid.plot_data import PlotDataWriter
from nanogrid.sim import compare, publish, write_atomic, write_compare, write_summary, write_trace
from nanogrid.target import tune_window
from nanogrid.timeseries import write_csv

logger = logging.getLogger("Nanogrid")

EXIT_IO_ERROR = 3


def setup_logging(log_file=None, verbose=False):
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def _select_entries(config, name):
    if name is None:
        return [config.controllers[0]]
    for entry in config.controllers:
        if entry.get("name", entry["mode"]) == name:
            return [entry]
    names = [e.get("name", e["mode"]) for e in config.controllers]
    raise ConfigError(f"--controller {name!r} not among configured controllers {names}")


def _controllers(config, scenario, entries):
    forecaster = build_forecaster(config, scenario) if needs_forecaster(entries) else None
    return build_controllers(config, forecaster, entries)


def cmd_simulate(config, controller_name=None):
    scenario = build_scenario(config)
    (controller,) = _controllers(config, scenario, _select_entries(config, controller_name))
    result = run_controller(scenario, controller)

    return publish(config.output_dir, lambda out: [
        write_trace(result, out / f"trace_{controller.name}.csv"),
        write_summary([result], out / "summary.json"),
    ])


def cmd_compare(config):
    scenario = build_scenario(config)
    controllers = _controllers(config, scenario, list(config.controllers))
    report, results = compare(scenario, controllers, n_jobs=config.n_jobs)

    def write_all(out):
        written = [write_compare(report, out / "compare_report.csv"),
                   write_summary([results[name] for name in sorted(results)], out / "summary.json")]
        return written + PlotDataWriter(out).write(results, scenario.ramp_limit_kw_per_step)

    return publish(config.output_dir, write_all)


def cmd_tune(config):
    scenario = build_scenario(config)
    entries = [e for e in config.controllers if e["mode"] == "predictive_ma"]
    forecaster = build_forecaster(config, scenario)
    if entries:
        (base,) = build_controllers(config, forecaster, entries[:1])
    else:
        base = ControllerConfig(mode="predictive_ma", n=0, forecaster=forecaster, name="predictive_ma")
    best_n, table = tune_window(scenario, config.candidates, base, n_jobs=config.n_jobs)
    table["chosen"] = table["n"] == best_n

    return publish(config.output_dir, lambda out: [
        write_atomic(out / "tuning_report.csv", lambda tmp: table.to_csv(tmp, index=False))])


def cmd_forecast_eval(config):
    scenario = build_scenario(config)
    model = build_forecaster(config, scenario)
    report = evaluate(model, scenario.pv, scenario.load)
    return publish(config.output_dir, lambda out: [
        write_atomic(out / "forecast_eval.csv", lambda tmp: report.to_csv(tmp, index=False))])


def cmd_synth(config):
    if not config.synthetic:
        raise ConfigError("synth needs a 'scenario.synth' section")
    scenario = build_scenario(config)
    return publish(config.output_dir, lambda out: [
        write_atomic(out / "pv.csv", lambda tmp: write_csv(scenario.pv, tmp)),
        write_atomic(out / "load.csv", lambda tmp: write_csv(scenario.load, tmp)),
        write_atomic(out / "ev_sessions.csv", lambda tmp: write_ev_sessions(scenario.ev_sessions, tmp)),
    ])


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help='JSON run configuration file')
    common.add_argument('--out', type=str, default=None, help='Output directory')
    common.add_argument('--seed', type=int, default=None, help='Seed for synthetic data and training')
    common.add_argument('--n-jobs', type=int, default=None, help='Parallel workers for compare and tune')
    common.add_argument('--log-file', type=str, default=None, help='Also log to this file')
    common.add_argument('--verbose', action='store_true', help='Debug logging')

    parser = argparse.ArgumentParser(description="Nanogrid PV ramp-rate smoothing simulator")
    commands = parser.add_subparsers(dest='command', required=True)
    simulate = commands.add_parser('simulate', parents=[common], help='Run one controller')
    simulate.add_argument('--controller', type=str, default=None, help='Configured controller name')
    commands.add_parser('compare', parents=[common], help='Run all controllers and the baseline')
    tune = commands.add_parser('tune', parents=[common], help='Tune the moving-average half window')
    tune.add_argument('--candidates', type=str, default=None, help='Comma-separated half windows, e.g. 0,5,10')
    commands.add_parser('forecast-eval', parents=[common], help='Per-lead forecaster accuracy')
    commands.add_parser('synth', parents=[common], help='Write the synthetic scenario as CSV')
    return parser


def _parse_candidates(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--candidates must be comma-separated integers, got {text!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file, args.verbose)

    try:
        candidates = _parse_candidates(args.candidates) if getattr(args, 'candidates', None) else None
        config = load_run_config(args.config, out=args.out, seed=args.seed,
                                 candidates=candidates, n_jobs=args.n_jobs)
        if args.command == 'simulate':
            written = cmd_simulate(config, args.controller)
        elif args.command == 'compare':
            written = cmd_compare(config)
        elif args.command == 'tune':
            written = cmd_tune(config)
        elif args.command == 'forecast-eval':
            written = cmd_forecast_eval(config)
        else:
            written = cmd_synth(config)
    except NanogridError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO_ERROR

    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
