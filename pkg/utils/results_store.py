import csv
import json
import os
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, TypedDict

from config import get_logger
from core.keyrate import KeyRateReport
from utils.helpers import format_float

logger = get_logger(__name__)

SCHEMA_VERSION = 1

# Type Definitions

class CurvePoint(TypedDict):
    """One row of a key-rate curve: the inputs of a point and its report, flattened."""
    schema_version: int
    scenario: str                  # "1", "2" or "direct".
    parties: int
    distance_km: float
    q: Optional[float]             # None for the direct baseline.
    eta_e: float                   # Party (or direct detector) efficiency.
    eta_d: float
    p_dc: float
    p_dc_e: float
    m: Optional[int]               # Scenario 2 only.
    npa_level: Optional[str]       # Scenario 2 only.
    displacements: Optional[str]   # ';'-joined, scenario 2 only.
    p_success: Optional[float]
    p_win: Optional[float]
    entropy_bound: Optional[float]
    ec_cost: Optional[float]
    raw_rate: Optional[float]
    key_rate: Optional[float]
    provenance: Optional[str]
    status: Literal["ok", "exported"]


# Column name, CSV header (units in parentheses) and kind.
COLUMNS: Tuple[Tuple[str, str, str], ...] = (
    ("schema_version", "schema_version", "int"),
    ("scenario", "scenario", "str"),
    ("parties", "parties", "int"),
    ("distance_km", "distance (km)", "float"),
    ("q", "q", "float"),
    ("eta_e", "eta_e", "float"),
    ("eta_d", "eta_d", "float"),
    ("p_dc", "p_dc", "float"),
    ("p_dc_e", "p_dc_e", "float"),
    ("m", "m", "int"),
    ("npa_level", "npa_level", "str"),
    ("displacements", "displacements", "str"),
    ("p_success", "p_success (per round)", "float"),
    ("p_win", "p_win", "float"),
    ("entropy_bound", "entropy_bound (bits)", "float"),
    ("ec_cost", "ec_cost (bits)", "float"),
    ("raw_rate", "raw_rate (bits/round)", "float"),
    ("key_rate", "key_rate (bits/round)", "float"),
    ("provenance", "provenance", "str"),
    ("status", "status", "str"),
)


def curve_point(scenario: str, parties: int, distance_km: float, q: Optional[float], eta_e: float, eta_d: float,
                p_dc: float, p_dc_e: float, report: Optional[KeyRateReport], m: Optional[int] = None,
                npa_level: Optional[str] = None, displacements: Optional[Sequence[float]] = None) -> CurvePoint:
    fields: Dict[str, Any] = {"p_success": None, "p_win": None, "entropy_bound": None, "ec_cost": None,
                              "raw_rate": None, "key_rate": None, "provenance": None}
    if report is not None:
        fields.update({k: v for k, v in report.as_dict().items() if k in fields})
    return CurvePoint(
        schema_version=SCHEMA_VERSION, scenario=scenario, parties=parties, distance_km=distance_km, q=q,
        eta_e=eta_e, eta_d=eta_d, p_dc=p_dc, p_dc_e=p_dc_e, m=m, npa_level=npa_level,
        displacements=None if displacements is None else ";".join(format_float(d) for d in displacements),
        status="ok" if report is not None else "exported", **fields,
    )


def _render(value: Any, kind: str) -> str:
    if value is None:
        return ""
    if kind == "float":
        return format_float(value)
    return str(value)


def _parse(text: str, kind: str) -> Any:
    if text == "":
        return None
    if kind == "float":
        return float(text)
    if kind == "int":
        return int(text)
    return text


def write_curve_csv(path: str, rows: Sequence[CurvePoint]) -> None:
    """Rows are written in the order given."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([header for _, header, _ in COLUMNS])
        for row in rows:
            writer.writerow([_render(row.get(name), kind) for name, _, kind in COLUMNS])
    logger.info(f"Wrote {len(rows)} rows to {path}")


def read_curve_csv(path: str) -> List[CurvePoint]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        expected = [h for _, h, _ in COLUMNS]
        if header != expected:
            raise ValueError(f"{path} does not have the curve schema header (version {SCHEMA_VERSION}).")
        rows = []
        for record in reader:
            if len(record) != len(COLUMNS):
                raise ValueError(f"{path}: row {len(rows) + 1} has {len(record)} fields, expected {len(COLUMNS)}.")
            row = {name: _parse(text, kind) for (name, _, kind), text in zip(COLUMNS, record)}
            if row["schema_version"] != SCHEMA_VERSION:
                raise ValueError(f"{path}: unsupported schema version {row['schema_version']}.")
            rows.append(CurvePoint(**row))
    return rows


def write_summary(path: str, summary: Dict[str, Any]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info(f"Wrote summary to {path}")
