# -*- coding: utf-8 -*-

"""
lob_cusum.cli
=============
Command line interface of the pipeline: synthetic data, ingestion,
trades-through extraction, Hawkes simulation, fitting and diagnostics,
regime detection, run-length formulas and Monte-Carlo verification.

Every run writes a manifest JSON with the resolved configuration, input
digests, package versions and seed. Exit codes: 0 on success, 1 on data
errors, 2 on usage errors.
"""
import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy
import statsmodels

from . import __title__, __version__
from .config import RunConfig, SessionWindow, check_keys, load_config_file
from .cusum import run_two_sided
from .diagnostics import DEFAULT_LAGS, goodness_of_fit, qq_data, residuals
from .errors import ConfigError, InsufficientData, LobCusumError
from .hawkes import DEFAULT_BINS, FitOptions, HawkesParams, fit_mle, simulate
from .ingest import (
    SynthConfig,
    parse_book_csv,
    parse_trades_csv,
    synth_book,
    write_book_csv,
    write_trades_csv,
)
from .scale import (
    arl_surface,
    average_run_length,
    calibrate_threshold,
    expected_detection_delay,
)
from .trades_through import (
    Multiplicity,
    StreamMode,
    TradeThrough,
    extract,
    from_marked_events,
    merge_streams,
    per_limit_streams,
    read_trades_through_csv,
    to_marked_events,
    to_streams,
    write_trades_through_csv,
)
from .verification import (
    ConvergenceReport,
    check_reflected_convergence,
    mc_arl,
    mc_edd,
)

logger = logging.getLogger(__name__)

DEFAULT_SESSION = "09:30:00-17:00:00"
DEFAULT_MANIFEST = "lob-cusum-manifest.json"
GLOBAL_OPTIONS = frozenset({"command", "verbose", "manifest", "config", "help"})

# options each subcommand cannot run without
REQUIRED: Dict[str, Tuple[str, ...]] = {
    "ingest": ("book", "trades"),
    "synth": ("out_book", "out_trades"),
    "extract": ("book", "trades", "out"),
    "simulate": ("params", "out"),
    "fit": ("events", "out"),
    "diagnose": ("events", "params"),
    "detect": ("events", "ref", "out"),
    "arl": ("rho", "m"),
    "calibrate": ("rho", "target"),
    "verify": ("kind", "rho"),
}


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid comma-separated numbers: '{text}'")


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file."""
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as file:
            for chunk in iter(lambda: file.read(1 << 16), b""):
                digest.update(chunk)
    except OSError:
        raise LobCusumError(f"Unable to read input '{path}': {sys.exc_info()[0]}")
    return digest.hexdigest()


@dataclass
class Manifest:
    """
    Record of one run. Holds no wall-clock fields so that reruns with the
    same configuration produce identical manifests.
    """

    config: RunConfig
    inputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def add_input(self, name: str, path: str) -> None:
        self.inputs[name] = {"path": path, "sha256": file_digest(path)}

    def add_output(self, path: Optional[str]) -> None:
        if path:
            self.outputs.append(path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.config.command,
            "config": self.config.to_dict(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.config.seed,
            "versions": {
                __title__: __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "statsmodels": statsmodels.__version__,
                "python": platform.python_version(),
            },
        }

    def write(self, path: str) -> None:
        with open(path, "w") as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)
            file.write("\n")


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _events_in_session(
    path: str, session: SessionWindow
) -> Tuple[List[TradeThrough], int]:
    """Trades-through inside the session and the session origin."""
    events = [e for e in read_trades_through_csv(path) if session.contains(e.timestamp)]
    origin = session.origin_ns(events[0].timestamp) if events else session.start_ns
    return events, origin


def _session(run: RunConfig) -> SessionWindow:
    return run.session or SessionWindow.parse(DEFAULT_SESSION)


def cmd_ingest(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    manifest.add_input("book", opts["book"])
    manifest.add_input("trades", opts["trades"])
    snapshots = parse_book_csv(opts["book"], opts["depth"], run.session)
    prints = parse_trades_csv(opts["trades"], run.session)
    if opts.get("out_book"):
        write_book_csv(snapshots, opts["out_book"])
        manifest.add_output(opts["out_book"])
    if opts.get("out_trades"):
        write_trades_csv(prints, opts["out_trades"])
        manifest.add_output(opts["out_trades"])
    _print_json({"snapshots": len(snapshots), "prints": len(prints)})


def cmd_synth(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    config = SynthConfig(
        depth=opts["depth"],
        refresh_rate=opts["refresh_rate"],
        trade_rate=opts["trade_rate"],
        through_prob=opts["through_prob"],
        depth_probs=tuple(opts["depth_probs"]),
        tick_size=opts["tick_size"],
        start_ns=_session(run).start_ns,
    )
    snapshots, prints = synth_book(run.seed, opts["duration"], config)
    write_book_csv(snapshots, opts["out_book"])
    write_trades_csv(prints, opts["out_trades"])
    manifest.add_output(opts["out_book"])
    manifest.add_output(opts["out_trades"])


def cmd_extract(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    manifest.add_input("book", opts["book"])
    manifest.add_input("trades", opts["trades"])
    snapshots = parse_book_csv(opts["book"], opts["depth"], run.session)
    prints = parse_trades_csv(opts["trades"], run.session)
    events = extract(snapshots, prints)
    write_trades_through_csv(events, opts["out"])
    manifest.add_output(opts["out"])


def cmd_simulate(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    manifest.add_input("params", opts["params"])
    params = HawkesParams.load(opts["params"])
    marked = simulate(params, opts.get("horizon"), seed=run.seed)
    write_trades_through_csv(
        from_marked_events(marked, _session(run).start_ns), opts["out"]
    )
    manifest.add_output(opts["out"])


def _default_init(
    events: Sequence[TradeThrough], horizon: float, n_bins: int
) -> HawkesParams:
    streams = np.array([e.side.stream for e in events], dtype=np.int64)
    counts = np.bincount(streams, minlength=2)
    return HawkesParams.constant(
        mu=counts / horizon,
        alpha=[[0.3, 0.1], [0.1, 0.3]],
        beta=1.0,
        horizon=horizon,
        n_bins=n_bins,
    )


def cmd_fit(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    session = _session(run)
    manifest.add_input("events", opts["events"])
    events, origin = _events_in_session(opts["events"], session)
    horizon = opts.get("horizon") or session.duration_seconds
    marked = [e for e in to_marked_events(events, origin) if e.time <= horizon]
    init = _default_init(events, horizon, opts["n_bins"])
    fit_opts = FitOptions(max_iters=opts["max_iters"], fit_eta=not opts["no_eta"])
    params, diagnostics = fit_mle(marked, horizon, init, fit_opts)
    params.save(opts["out"])
    manifest.add_output(opts["out"])
    if opts.get("diagnostics_out"):
        with open(opts["diagnostics_out"], "w") as file:
            json.dump(diagnostics.to_dict(), file, indent=2, sort_keys=True)
            file.write("\n")
        manifest.add_output(opts["diagnostics_out"])
    if not diagnostics.stable:
        logger.warning(
            f"Fitted model is not stable (spectral radius "
            f"{diagnostics.spectral_radius:.4f})."
        )


def cmd_diagnose(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    manifest.add_input("events", opts["events"])
    manifest.add_input("params", opts["params"])
    params = HawkesParams.load(opts["params"])
    events, origin = _events_in_session(opts["events"], _session(run))
    marked = [e for e in to_marked_events(events, origin) if e.time <= params.horizon]
    series = residuals(marked, params)
    report = goodness_of_fit(series, opts["lags"])
    if opts.get("out"):
        with open(opts["out"], "w") as file:
            json.dump(report, file, indent=2, sort_keys=True)
            file.write("\n")
        manifest.add_output(opts["out"])
    else:
        _print_json(report)
    if opts.get("qq_out"):
        qq_data(series.pooled).to_csv(opts["qq_out"], index=False, lineterminator="\n")
        manifest.add_output(opts["qq_out"])


def cmd_detect(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    manifest.add_input("events", opts["events"])
    manifest.add_input("ref", opts["ref"])
    params = HawkesParams.load(opts["ref"])
    events, origin = _events_in_session(opts["events"], _session(run))
    report = run_two_sided(
        to_marked_events(events, origin),
        params,
        rho_up=opts["rho_up"],
        rho_down=opts["rho_down"],
        m=opts["m"],
        multiplicity=Multiplicity(opts["multiplicity"]),
        mode=StreamMode(opts["mode"]),
        sample_every=opts.get("sample_every"),
        origin_ns=origin,
    )
    report.to_csv(opts["out"])
    manifest.add_output(opts["out"])


def cmd_arl(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    arl = average_run_length(opts["start"], opts["m"], opts["rho"])
    print(f"{arl:.6f}")
    if opts.get("edd"):
        print(f"{expected_detection_delay(opts['start'], opts['m'], opts['rho']):.6f}")
    if opts.get("surface_out"):
        rhos = opts.get("rhos") or [opts["rho"]]
        ms = opts.get("ms") or [opts["m"]]
        arl_surface(rhos, ms).to_csv(
            opts["surface_out"], index=False, lineterminator="\n"
        )
        manifest.add_output(opts["surface_out"])


def cmd_calibrate(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    print(f"{calibrate_threshold(opts['target'], opts['rho']):.6f}")


def _per_limit_seconds(
    events: Sequence[TradeThrough], origin: int, depth: int
) -> List[np.ndarray]:
    sides = to_streams(events, multiplicity=Multiplicity.PER_LIMIT)
    merged = merge_streams(list(sides.values()))
    return [(times - origin) / 1e9 for times in per_limit_streams(merged, depth)]


def _epsilon_check(run: RunConfig, manifest: Manifest) -> ConvergenceReport:
    opts = run.options
    if not opts.get("events"):
        return check_reflected_convergence(
            opts["rho"],
            opts["eps"],
            rate=opts["rate"],
            horizon=opts.get("horizon"),
            paths=opts["paths"],
            seed=run.seed,
        )
    if not opts.get("ref"):
        raise ConfigError("verify epsilon with --events requires --ref.")
    manifest.add_input("events", opts["events"])
    manifest.add_input("ref", opts["ref"])
    params = HawkesParams.load(opts["ref"])
    events, origin = _events_in_session(opts["events"], _session(run))
    if not events:
        raise InsufficientData("No trades-through inside the session.")
    depth = opts.get("depth") or max(e.depth for e in events)
    return check_reflected_convergence(
        opts["rho"],
        opts["eps"],
        streams=_per_limit_seconds(events, origin, depth),
        ref_model=params,
        history=to_marked_events(events, origin),
        horizon=opts.get("horizon"),
    )


def cmd_verify(run: RunConfig, manifest: Manifest) -> None:
    opts = run.options
    if opts["kind"] == "arl":
        if opts.get("m") is None:
            raise ConfigError("verify arl requires --m.")
        mean, error = mc_arl(
            opts["rho"], opts["m"], opts["rate"], opts["reps"], run.seed
        )
        edd, edd_error = mc_edd(
            opts["rho"], opts["m"], opts["rate"], opts["reps"], run.seed
        )
        result = {
            "rho": opts["rho"],
            "m": opts["m"],
            "mc_arl": mean,
            "mc_arl_se": error,
            "arl": average_run_length(0.0, opts["m"], opts["rho"]),
            "mc_edd": edd,
            "mc_edd_se": edd_error,
            "edd": expected_detection_delay(0.0, opts["m"], opts["rho"]),
        }
    else:
        result = _epsilon_check(run, manifest).to_dict()
    if opts.get("out"):
        with open(opts["out"], "w") as file:
            json.dump(result, file, indent=2, sort_keys=True)
            file.write("\n")
        manifest.add_output(opts["out"])
    _print_json(result)


COMMAND_HANDLERS: Dict[str, Callable[[RunConfig, Manifest], None]] = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "extract": cmd_extract,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "detect": cmd_detect,
    "arl": cmd_arl,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
}


def _add_book_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--book", help="book CSV (ts_ns,side,level,price_ticks,size)")
    parser.add_argument(
        "--trades", help="trades CSV (ts_ns,price_ticks,size,aggressor)"
    )
    parser.add_argument("--depth", type=int, default=4, help="levels kept per side")
    parser.add_argument("--session", help="session window HH:MM:SS-HH:MM:SS")


Parsers = Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]


def build_parser() -> Parsers:
    """Builds the parser and returns it with its subcommand parsers."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    common.add_argument("--manifest", help="manifest path")
    common.add_argument("--config", help="JSON file of option defaults")

    parser = argparse.ArgumentParser(
        prog=__title__,
        description="Trades-through Hawkes modelling and CUSUM liquidity regimes.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", parents=[common], help="parse and filter book files")
    _add_book_inputs(p)
    p.add_argument("--out-book", help="filtered book CSV")
    p.add_argument("--out-trades", help="filtered trades CSV")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic session")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, default=3600.0, help="seconds")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--refresh-rate", type=float, default=1.0)
    p.add_argument("--trade-rate", type=float, default=0.5)
    p.add_argument("--through-prob", type=float, default=0.2)
    p.add_argument("--tick-size", type=int, default=1, help="price step in ticks")
    p.add_argument(
        "--depth-probs", type=_float_list, default=[0.7, 0.2, 0.07, 0.03]
    )
    p.add_argument("--session", help="session window; its start opens the file")
    p.add_argument("--out-book")
    p.add_argument("--out-trades")

    p = sub.add_parser("extract", parents=[common], help="extract trades-through")
    _add_book_inputs(p)
    p.add_argument("--out", help="trades-through CSV (ts_ns,side,depth,volume)")

    p = sub.add_parser("simulate", parents=[common], help="simulate the Hawkes model")
    p.add_argument("--params", help="params JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float, help="seconds, params horizon by default")
    p.add_argument("--session", help="session window; its start is time zero")
    p.add_argument("--out", help="trades-through CSV")

    p = sub.add_parser("fit", parents=[common], help="maximum likelihood fit")
    p.add_argument("--events", help="trades-through CSV")
    p.add_argument("--session")
    p.add_argument("--horizon", type=float, help="seconds, session length by default")
    p.add_argument("--n-bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--no-eta", action="store_true", help="keep mark exponents at 0")
    p.add_argument("--out", help="params JSON")
    p.add_argument("--diagnostics-out", help="fit diagnostics JSON")

    p = sub.add_parser("diagnose", parents=[common], help="time-rescaling tests")
    p.add_argument("--events")
    p.add_argument("--params")
    p.add_argument("--session")
    p.add_argument("--lags", type=int, default=DEFAULT_LAGS)
    p.add_argument("--out", help="report JSON, printed when omitted")
    p.add_argument("--qq-out", help="Q-Q points CSV of pooled residuals")

    p = sub.add_parser("detect", parents=[common], help="two-sided regime detection")
    p.add_argument("--events")
    p.add_argument("--ref", help="reference-day params JSON")
    p.add_argument("--session")
    p.add_argument("--rho-up", type=float, default=1.5)
    p.add_argument("--rho-down", type=float, default=0.5)
    p.add_argument("--m", type=float, default=5.0)
    p.add_argument(
        "--multiplicity",
        choices=[x.value for x in Multiplicity],
        default=Multiplicity.GROUND.value,
    )
    p.add_argument(
        "--mode", choices=[x.value for x in StreamMode], default=StreamMode.BOTH.value
    )
    p.add_argument("--sample-every", type=float, help="seconds between extra rows")
    p.add_argument("--out", help="regimes CSV")

    p = sub.add_parser("arl", parents=[common], help="average run length")
    p.add_argument("--rho", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--start", type=float, default=0.0, help="initial reflected value")
    p.add_argument("--edd", action="store_true", help="also print the detection delay")
    p.add_argument("--surface-out", help="CSV of ARL and EDD over --rhos x --ms")
    p.add_argument("--rhos", type=_float_list)
    p.add_argument("--ms", type=_float_list)

    p = sub.add_parser("calibrate", parents=[common], help="threshold for a target ARL")
    p.add_argument("--rho", type=float)
    p.add_argument("--target", type=float)

    p = sub.add_parser("verify", parents=[common], help="Monte-Carlo verification")
    p.add_argument("kind", nargs="?", choices=["arl", "epsilon"])
    p.add_argument("--rho", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--eps", type=_float_list, default=[0.1, 0.05, 0.01])
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--horizon", type=float, help="seconds of the epsilon check")
    p.add_argument("--events", help="trades-through CSV checked instead of draws")
    p.add_argument("--ref", help="reference-day params JSON for --events")
    p.add_argument("--session")
    p.add_argument("--depth", type=int, help="limits per side, deepest by default")
    p.add_argument("--out", help="result JSON")
    return parser, dict(sub.choices)


def _option_names(subparser: argparse.ArgumentParser) -> List[str]:
    return [a.dest for a in subparser._actions if a.dest not in GLOBAL_OPTIONS]


def parse_run(argv: Sequence[str]) -> Tuple[RunConfig, argparse.Namespace]:
    """
    Parses arguments, merges defaults from `--config` and validates the
    result.

    Returns:
        tuple of `RunConfig` and the raw namespace
    """
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    subparser = subparsers[args.command]
    allowed = _option_names(subparser)
    if args.config:
        defaults = load_config_file(args.config)
        check_keys(defaults, allowed)
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    options = {name: getattr(args, name) for name in allowed}
    missing = [n for n in REQUIRED[args.command] if options.get(n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"Subcommand '{args.command}' requires {flags}.")
    return RunConfig.from_options(args.command, options, allowed), args


def _manifest_path(run: RunConfig, args: argparse.Namespace) -> str:
    if args.manifest:
        return args.manifest
    for key in ("out", "out_book", "surface_out"):
        if run.options.get(key):
            return f"{run.options[key]}.manifest.json"
    return DEFAULT_MANIFEST


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one subcommand.

    Args:
        argv:               arguments without the program name,
                            `sys.argv[1:]` by default

    Returns:
        exit code
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        run, args = parse_run(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"{__title__}: error: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if run.seed is not None:
        logger.info(f"Running '{run.command}' with seed {run.seed}.")

    manifest = Manifest(run)
    try:
        COMMAND_HANDLERS[run.command](run, manifest)
        manifest.write(_manifest_path(run, args))
    except ConfigError as exc:
        print(f"{__title__}: error: {exc}", file=sys.stderr)
        return 2
    except LobCusumError as exc:
        print(f"{__title__}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{__title__}: error: {exc}", file=sys.stderr)
        return 1
    return 0
