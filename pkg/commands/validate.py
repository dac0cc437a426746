import argparse
import math
import os
from typing import List

from config import get_logger
from core.fock import fidelity
from core.heralding import DEFAULT_PATTERN, ProtocolParams, herald, ideal_pattern_state
from core.keyrate import TSIRELSON_WIN, parity_chsh_win
from core.measurements import behavior, scenario1_config
from utils.results_store import CurvePoint, read_curve_csv
from utils.sweep_config import ComputeError

logger = get_logger(__name__)

RATE_TOL = 1e-12
FIDELITY_TOL = 1e-12
WIN_TOL = 1e-9


def check_rows(rows: List[CurvePoint]) -> List[str]:
    """Recomputes the raw and floored key rate of every solved row from its own columns."""
    problems = []
    for number, row in enumerate(rows, start=1):
        if row["status"] != "ok":
            continue
        inputs = (row["p_success"], row["entropy_bound"], row["ec_cost"], row["raw_rate"], row["key_rate"])
        if any(value is None for value in inputs):
            problems.append(f"row {number}: missing rate columns")
            continue
        p_success, bound, ec, raw, key = inputs
        expected_raw = p_success * (bound - ec)
        if not math.isclose(raw, expected_raw, rel_tol=RATE_TOL, abs_tol=RATE_TOL):
            problems.append(f"row {number}: raw rate {raw!r} != {expected_raw!r}")
        if not math.isclose(key, max(expected_raw, 0.0), rel_tol=RATE_TOL, abs_tol=RATE_TOL):
            problems.append(f"row {number}: key rate {key!r} != {max(expected_raw, 0.0)!r}")
    return problems


def check_ideal_limit() -> List[str]:
    """Lossless, noiseless heralding must give the reference state and the Tsirelson winning probability."""
    problems = []
    ideal = ProtocolParams(parties=4, transmissivity=1.0, eta_d=1.0, eta_e=1.0, p_dc=0.0, p_dc_e=0.0)
    ensemble = herald(ideal, DEFAULT_PATTERN)
    if ensemble.rho_x is None:
        return ["ideal heralding has zero success probability"]

    f = fidelity(ensemble.rho_x, ideal_pattern_state(DEFAULT_PATTERN))
    if abs(f - 1.0) > FIDELITY_TOL:
        problems.append(f"ideal heralded state has fidelity {f!r} with the reference state")

    p_win = parity_chsh_win(behavior(ensemble.rho_x, scenario1_config(4)))
    if abs(p_win - TSIRELSON_WIN) > WIN_TOL:
        problems.append(f"ideal winning probability {p_win!r} != {TSIRELSON_WIN!r}")
    return problems


def validate_results(csv_path: str) -> int:
    """Returns the number of rows checked; raises ComputeError listing every failed check."""
    rows = read_curve_csv(csv_path)
    problems = check_rows(rows) + check_ideal_limit()
    if problems:
        for problem in problems:
            logger.error(f"Validation failed: {problem}")
        raise ComputeError(f"{len(problems)} validation check(s) failed for {csv_path}.")
    checked = sum(1 for row in rows if row["status"] == "ok")
    logger.info(f"Validated {checked} of {len(rows)} rows in {csv_path} and the ideal-limit checks.")
    return checked


def run(args: argparse.Namespace) -> None:
    csv_path = args.csv or os.path.join(args.out or "results", "curve.csv")
    if not os.path.exists(csv_path):
        raise ComputeError(f"No curve file at {csv_path}; run 'sweep' first or pass --csv.")
    checked = validate_results(csv_path)
    print(f"OK: {checked} rows re-derived, ideal limits reproduced")


def setup(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("validate", help="re-derive key rates of a curve CSV and run the ideal-limit checks")
    parser.add_argument("--csv", help="curve file (default: <out>/curve.csv)")
    parser.add_argument("--out", help="output directory of the sweep")
    parser.set_defaults(handler=run)
