import argparse
import os
from typing import Callable, Literal

from config import get_logger
from core.keyrate import bisect_threshold, direct_transmission_rate, optimize_q, scenario1_pipeline, search_displacements
from commands.export_sdp import default_displacements
from utils.results_store import write_summary
from utils.sweep_config import ComputeError, ConfigError, SweepConfig, add_sweep_arguments, resolve_config

logger = get_logger(__name__)

Parameter = Literal["eta_e", "q"]


def threshold_rate_function(config: SweepConfig, parameter: Parameter = "eta_e") -> Callable[[float], float]:
    """Raw rate as a function of one parameter; the others come from the first value of each config range."""
    distance = config.distance[0]
    q0, eta0 = config.q[0], config.eta_e[0]

    def point(value: float):
        return (value, eta0) if parameter == "q" else (q0, value)

    if config.scenario == "direct":
        if parameter != "eta_e":
            raise ConfigError("The direct baseline only has a detector-efficiency threshold.")
        return lambda value: direct_transmission_rate(config.parties, distance, value, config.pdc).raw_rate

    if config.scenario == "1":
        def rate(value: float) -> float:
            q, eta_e = point(value)
            params = config.params(q, eta_e, distance)
            if config.optimize_q and parameter != "q":
                return optimize_q(params, config.q_values(),
                                  lambda p: scenario1_pipeline(p, convention=config.convention))[1].raw_rate
            return scenario1_pipeline(params, convention=config.convention).raw_rate
        return rate

    initial = config.displacements or default_displacements(config.parties)

    def rate(value: float) -> float:
        q, eta_e = point(value)
        search = search_displacements(config.params(q, eta_e, distance), alpha_max=config.alpha_max, initial=initial,
                                      samples=config.samples, restarts=config.restarts, seed=config.seed,
                                      m=config.m, level=config.npa_level)
        return search.report.raw_rate
    return rate


def find_threshold(config: SweepConfig, parameter: Parameter = "eta_e", lo: float = 0.85, hi: float = 1.0,
                   tol: float = 1e-3) -> float:
    """Smallest parameter value with a positive key rate, by bisection to `tol`."""
    rate_at = threshold_rate_function(config, parameter)
    try:
        value = bisect_threshold(rate_at, lo, hi, tol=tol)
    except ValueError as e:
        raise ComputeError(str(e)) from e
    logger.info(f"Scenario {config.scenario} threshold on {parameter}: {value:.4f}")
    return value


def run(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    value = find_threshold(config, args.parameter, args.lo, args.hi, args.tol)
    write_summary(os.path.join(config.out, "threshold.json"), {
        "scenario": config.scenario, "parameter": args.parameter, "threshold": value,
        "range": [args.lo, args.hi], "tol": args.tol, "config": config.model_dump(),
    })
    print(f"{args.parameter} threshold: {value:.4f}")


def setup(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("threshold", help="smallest efficiency (or q) with a positive key rate")
    add_sweep_arguments(parser)
    parser.add_argument("--parameter", choices=["eta_e", "q"], default="eta_e")
    parser.add_argument("--lo", type=float, default=0.85, help="lower end of the search range")
    parser.add_argument("--hi", type=float, default=1.0, help="upper end of the search range")
    parser.add_argument("--tol", type=float, default=1e-3, help="absolute bisection tolerance")
    parser.set_defaults(handler=run)
