import argparse
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Tuple

from config import get_logger
from core.keyrate import (KeyRateReport, direct_transmission_rate, max_secure_distance, optimize_q,
                          scenario1_pipeline, scenario2_pipeline, search_displacements)
from commands.export_sdp import default_displacements, export_point_sdps
from utils.helpers import format_float
from utils.results_store import SCHEMA_VERSION, CurvePoint, curve_point, write_curve_csv, write_summary
from utils.sweep_config import SweepConfig, add_sweep_arguments, resolve_config

logger = get_logger(__name__)

CSV_NAME = "curve.csv"
SUMMARY_NAME = "summary.json"

# (q or None, eta_e, distance)
Task = Tuple[Optional[float], float, float]


def sweep_tasks(config: SweepConfig) -> List[Task]:
    """Sweep order: eta_e, then q, then distance (the fastest axis)."""
    q_axis: List[Optional[float]] = [None] if config.scenario == "direct" or config.optimize_q else list(config.q)
    return [(q, eta_e, distance) for eta_e in config.eta_e for q in q_axis for distance in config.distance]


def evaluate_point(config: SweepConfig, task: Task) -> CurvePoint:
    q, eta_e, distance = task
    pdc_e = config.pdc if config.pdc_e is None else config.pdc_e
    common = dict(scenario=config.scenario, parties=config.parties, distance_km=distance, eta_e=eta_e,
                  eta_d=config.eta_d, p_dc=config.pdc, p_dc_e=pdc_e)

    if config.scenario == "direct":
        report = direct_transmission_rate(config.parties, distance, eta_e, config.pdc)
        return curve_point(q=None, report=report, **common)

    if config.scenario == "1":
        if config.optimize_q:
            q, report = optimize_q(config.params(config.q[0], eta_e, distance), config.q_values(),
                                   lambda p: scenario1_pipeline(p, convention=config.convention))
        else:
            report = scenario1_pipeline(config.params(q, eta_e, distance), convention=config.convention)
        return curve_point(q=q, report=report, **common)

    initial = config.displacements or default_displacements(config.parties)
    scenario_two = dict(m=config.m, npa_level=config.npa_level)
    if config.export_sdp:
        directory = os.path.join(config.out, "sdp", f"L{format_float(distance)}_q{format_float(q)}_eta{format_float(eta_e)}")
        export_point_sdps(config.params(q, eta_e, distance), initial, config.m, config.npa_level, directory,
                          config.convention)
        return curve_point(q=q, report=None, displacements=initial, **scenario_two, **common)

    def search(q_value: float) -> Tuple[List[float], KeyRateReport]:
        result = search_displacements(config.params(q_value, eta_e, distance), alpha_max=config.alpha_max,
                                      initial=initial, samples=config.samples, restarts=config.restarts,
                                      seed=config.seed, m=config.m, level=config.npa_level)
        return list(result.displacements), result.report

    if config.optimize_q:
        best = None
        for q_value in config.q_values():
            found = search(q_value)
            if best is None or found[1].search_score > best[2].search_score + 1e-9:
                best = (q_value, found[0], found[1])
        q, displacements, report = best
    else:
        displacements, report = search(q)
    return curve_point(q=q, report=report, displacements=displacements, **scenario_two, **common)


def _evaluate(payload: Tuple[SweepConfig, Task]) -> CurvePoint:
    return evaluate_point(*payload)


def curve_rate_function(config: SweepConfig, first: CurvePoint) -> Optional[Callable[[float], KeyRateReport]]:
    """Rate as a function of L for one curve, with every other input held at the curve's values."""
    eta_e = first["eta_e"]
    if config.scenario == "direct":
        return lambda distance: direct_transmission_rate(config.parties, distance, eta_e, config.pdc)
    if config.scenario == "1":
        if config.optimize_q:
            return lambda distance: optimize_q(config.params(config.q[0], eta_e, distance), config.q_values(),
                                               lambda p: scenario1_pipeline(p, convention=config.convention))[1]
        return lambda distance: scenario1_pipeline(config.params(first["q"], eta_e, distance),
                                                   convention=config.convention)
    if config.export_sdp or not first["displacements"]:
        return None
    displacements = [float(d) for d in first["displacements"].split(";")]
    # Displacements stay fixed at the curve's first point, so the distance is a lower estimate.
    return lambda distance: scenario2_pipeline(config.params(first["q"], eta_e, distance), displacements,
                                               m=config.m, level=config.npa_level)


def summarize(config: SweepConfig, rows: List[CurvePoint]) -> Dict[str, Any]:
    curves: Dict[Tuple, List[CurvePoint]] = {}
    for row in rows:
        key = (row["eta_e"],) if config.optimize_q or config.scenario == "direct" else (row["eta_e"], row["q"])
        curves.setdefault(key, []).append(row)

    summary_curves = []
    for key, members in curves.items():
        rate_fn = curve_rate_function(config, members[0])
        distance = max_secure_distance(rate_fn) if rate_fn is not None else None
        summary_curves.append({
            "eta_e": members[0]["eta_e"],
            "q": None if len(key) == 1 else members[0]["q"],
            "points": len(members),
            "max_key_rate": max((r["key_rate"] or 0.0) for r in members),
            "max_secure_distance_km": distance,
        })
        logger.info(f"Curve eta_e={members[0]['eta_e']} q={summary_curves[-1]['q']}: max secure distance {distance} km")
    return {"schema_version": SCHEMA_VERSION, "config": config.model_dump(), "curves": summary_curves}


def run_sweep(config: SweepConfig) -> Tuple[str, str]:
    """
    Evaluates every sweep point (in a process pool when workers > 1), writes the
    CSV in sweep order and the JSON summary, and returns both paths.
    """
    tasks = sweep_tasks(config)
    logger.info(f"Sweeping {len(tasks)} points of scenario {config.scenario} with {config.workers} worker(s)")
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_evaluate, [(config, task) for task in tasks]))
    else:
        rows = [evaluate_point(config, task) for task in tasks]

    csv_path = os.path.join(config.out, CSV_NAME)
    summary_path = os.path.join(config.out, SUMMARY_NAME)
    write_curve_csv(csv_path, rows)
    write_summary(summary_path, summarize(config, rows))
    return csv_path, summary_path


def run(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    csv_path, summary_path = run_sweep(config)
    print(f"Wrote {csv_path} and {summary_path}")


def setup(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("sweep", help="key-rate curves over distance, q and eta_e")
    add_sweep_arguments(parser)
    parser.add_argument("--export-sdp", dest="export_sdp", action="store_const", const=True,
                        help="scenario 2: write SDPA files instead of solving")
    parser.set_defaults(handler=run)
