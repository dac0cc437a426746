import argparse
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import get_logger
from core.bff import DEFAULT_NODES
from core.heralding import ProtocolParams
from core.keyrate import DEFAULT_ALPHA_MAX, DEFAULT_LEVEL
from utils.helpers import closest_key, deep_merge, expand_range, parse_bool

logger = get_logger(__name__)

Scenario = Literal["1", "2", "direct"]

# q grid used whenever q is optimized.
Q_GRID = [round(0.6 + 0.01 * k, 2) for k in range(40)]

SCENARIO_TWO_KEYS = ("m", "npa_level", "alpha_max", "export_sdp", "samples", "restarts", "displacements")


class ConfigError(ValueError):
    """Invalid sweep configuration: unknown keys, bad values, empty ranges."""


class ComputeError(RuntimeError):
    """A computation finished without a usable result (no sign change, failed validation)."""


class SweepConfig(BaseModel):
    """
    Everything a sweep needs. Ranges accept "start:stop:step", comma lists or
    single values. Scenario-2 options may only be set for scenario 2.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Scenario = "1"
    parties: int = 4
    distance: List[float] = Field(default_factory=lambda: [0.0])
    q: List[float] = Field(default_factory=lambda: [0.95])
    eta_e: List[float] = Field(default_factory=lambda: [0.97])
    pdc: float = Field(1e-6, ge=0.0, le=1.0)
    pdc_e: Optional[float] = Field(None, ge=0.0, le=1.0)
    eta_d: float = Field(1.0, ge=0.0, le=1.0)
    convention: Literal["single", "corrected"] = "single"
    optimize_q: bool = False

    m: Optional[int] = Field(None, ge=2)
    npa_level: Optional[str] = None
    alpha_max: Optional[float] = Field(None, gt=0.0)
    export_sdp: Optional[bool] = None
    samples: Optional[int] = Field(None, ge=0)
    restarts: Optional[int] = Field(None, ge=1)
    displacements: Optional[List[float]] = None

    out: str = "results"
    seed: int = 0
    workers: int = Field(1, ge=1)

    @field_validator("distance", "q", "eta_e", mode="before")
    @classmethod
    def _expand(cls, value: Any) -> List[float]:
        return expand_range(value)

    @field_validator("displacements", mode="before")
    @classmethod
    def _expand_optional(cls, value: Any) -> Optional[List[float]]:
        return None if value is None else expand_range(value)

    @field_validator("export_sdp", "optimize_q", mode="before")
    @classmethod
    def _boolean(cls, value: Any) -> Any:
        return None if value is None else parse_bool(value)

    @field_validator("distance")
    @classmethod
    def _nonnegative(cls, value: List[float]) -> List[float]:
        if min(value) < 0:
            raise ValueError("Distances must be nonnegative.")
        return value

    @field_validator("q", "eta_e")
    @classmethod
    def _unit(cls, value: List[float]) -> List[float]:
        if min(value) < 0 or max(value) > 1:
            raise ValueError("Probabilities and efficiencies must lie in [0, 1].")
        return value

    @model_validator(mode="before")
    @classmethod
    def _scenario_options(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        data["scenario"] = str(data.get("scenario", "1"))
        given = [key for key in SCENARIO_TWO_KEYS if data.get(key) is not None]
        if data["scenario"] == "2":
            defaults = {"m": DEFAULT_NODES, "npa_level": DEFAULT_LEVEL, "alpha_max": DEFAULT_ALPHA_MAX,
                        "export_sdp": False, "samples": 8, "restarts": 2}
            for key, value in defaults.items():
                if data.get(key) is None:
                    data[key] = value
        elif given:
            raise ValueError(f"Options {given} only apply to scenario 2.")
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "SweepConfig":
        if self.scenario == "direct":
            if self.optimize_q:
                raise ValueError("The direct-transmission baseline has no q to optimize.")
            if self.parties < 2:
                raise ValueError(f"The direct baseline needs at least two parties, got {self.parties}.")
        else:
            # Raises for an odd or too small N.
            ProtocolParams(parties=self.parties)
        if self.displacements is not None and len(self.displacements) != self.parties + 1:
            raise ValueError(f"Expected {self.parties + 1} displacements for N={self.parties}, "
                             f"got {len(self.displacements)}.")
        return self

    def q_values(self) -> List[float]:
        return Q_GRID if self.optimize_q else self.q

    def params(self, q: float, eta_e: float, distance: float) -> ProtocolParams:
        return ProtocolParams(parties=self.parties, q=q, distance_km=distance, eta_d=self.eta_d, eta_e=eta_e,
                              p_dc=self.pdc, p_dc_e=self.pdc_e, aggregate_patterns=False)


FIELDS = tuple(SweepConfig.model_fields)


def read_config_file(path: str) -> Dict[str, str]:
    """
    Reads a flat key = value file. Blank lines and '#' comments are skipped;
    dashes in keys are treated as underscores.
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file {path} does not exist.")
    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}.")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_").lower()
            if key not in FIELDS:
                suggestion = closest_key(key, FIELDS)
                hint = f" Did you mean '{suggestion}'?" if suggestion else ""
                raise ConfigError(f"{path}:{number}: unknown key '{key}'.{hint}")
            values[key] = value
    return values


def add_sweep_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every subcommand. Unset flags stay None so file values survive."""
    parser.add_argument("--config", help="key = value file; flags override its values")
    parser.add_argument("--scenario", choices=["1", "2", "direct"])
    parser.add_argument("--parties", type=int, help="number of parties N (even, >= 4)")
    parser.add_argument("--q", help="source keep-probability q: value, list or start:stop:step")
    parser.add_argument("--eta-e", dest="eta_e", help="party detector efficiency range")
    parser.add_argument("--distance", help="party-to-station distance L in km, range")
    parser.add_argument("--pdc", type=float, help="station dark-count probability")
    parser.add_argument("--pdc-e", dest="pdc_e", type=float, help="party dark-count probability (defaults to --pdc)")
    parser.add_argument("--eta-d", dest="eta_d", type=float, help="station detector efficiency")
    parser.add_argument("--convention", choices=["single", "corrected"], help="Bell junction convention for N=6")
    parser.add_argument("--optimize-q", dest="optimize_q", action="store_const", const=True,
                        help="optimize q over 0.60..0.99 at every point")
    parser.add_argument("--m", type=int, help="Gauss-Radau nodes (scenario 2)")
    parser.add_argument("--npa-level", dest="npa_level", help="relaxation level, e.g. 2 or 1+AB+AZ (scenario 2)")
    parser.add_argument("--alpha-max", dest="alpha_max", type=float, help="displacement search bound (scenario 2)")
    parser.add_argument("--samples", type=int, help="coarse displacement samples (scenario 2)")
    parser.add_argument("--restarts", type=int, help="Nelder-Mead restarts (scenario 2)")
    parser.add_argument("--displacements", help="scenario 2: N+1 comma-separated displacements (A1, B1_0, B1_1, B2, ...)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--workers", type=int, help="worker processes")


def resolve_config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> SweepConfig:
    """Defaults < config file < flags. Every failure surfaces as ConfigError."""
    merged: Dict[str, Any] = {}
    if getattr(args, "config", None):
        deep_merge(read_config_file(args.config), merged)
    flags = {key: getattr(args, key, None) for key in FIELDS}
    deep_merge(flags, merged)
    if extra:
        deep_merge(extra, merged)
    try:
        config = SweepConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    logger.debug(f"Resolved configuration: {config.model_dump()}")
    return config
