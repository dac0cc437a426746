import argparse
import os
from typing import List, Sequence, Union

from config import get_logger
from core.bff import build_bff_problem, gauss_radau, split_by_node
from core.heralding import ProtocolParams, herald
from core.measurements import behavior, scenario2_config
from core.npa import relax
from utils.helpers import format_float
from utils.results_store import write_summary
from utils.sdpa import export_sdpa
from utils.sweep_config import ComputeError, add_sweep_arguments, resolve_config

logger = get_logger(__name__)

DEFAULT_GUESS = 0.5


def default_displacements(parties: int) -> List[float]:
    return [DEFAULT_GUESS] * (parties + 1)


def export_point_sdps(params: ProtocolParams, displacements: Sequence[float], m: int, level: Union[int, str],
                      directory: str, convention: str = "single") -> List[str]:
    """
    Writes one SDPA file per quadrature node of the Scenario-2 relaxation and a
    manifest with the constant c_m; the bound is c_m plus the sum of the
    files' minima.
    """
    ensemble = herald(params, convention=convention)
    if ensemble.rho_x is None:
        raise ComputeError("The heralding event has zero probability; there is no behavior to constrain.")
    table = behavior(ensemble.rho_x, scenario2_config(params.parties, displacements, params.party_dark_count))
    rule = gauss_radau(m)
    problem = build_bff_problem(table, rule, x_star=0)
    os.makedirs(directory, exist_ok=True)
    paths = []
    for node, part in zip(problem.nodes, split_by_node(problem)):
        relaxation = relax(part, level)
        path = os.path.join(directory, f"node_{node}.dat-s")
        export_sdpa(relaxation.sdp, path, title=f"quadrature node {node} of {rule.m}, level {level}")
        paths.append(path)
    write_summary(os.path.join(directory, "manifest.json"), {
        "c_m": format_float(rule.c_m),
        "files": [os.path.basename(p) for p in paths],
        "level": str(level),
        "m": rule.m,
        "displacements": [format_float(d) for d in displacements],
        "params": params.model_dump(),
    })
    return paths


def run(args: argparse.Namespace) -> None:
    config = resolve_config(args, {"scenario": "2"})
    displacements = config.displacements or default_displacements(config.parties)
    params = config.params(config.q[0], config.eta_e[0], config.distance[0])
    paths = export_point_sdps(params, displacements, config.m, config.npa_level, os.path.join(config.out, "sdp"),
                              config.convention)
    print(f"Wrote {len(paths)} SDPA files to {os.path.join(config.out, 'sdp')}")


def setup(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("export-sdp", help="write the Scenario-2 relaxations as SDPA .dat-s files")
    add_sweep_arguments(parser)
    parser.set_defaults(handler=run)
