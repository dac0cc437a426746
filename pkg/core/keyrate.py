import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from config import config, get_logger
from core.bff import DEFAULT_NODES, build_bff_problem, gauss_radau
from core.fock import DensityOperator, StateVector, binary_entropy, conditional_shannon_entropy, qubit_registry
from core.heralding import DEFAULT_PATTERN, ClickPattern, HeraldedEnsemble, ProtocolParams, channel_transmissivity, herald
from core.measurements import (BehaviorTable, PartyConfig, behavior, direct_config, keygen_distribution,
                               scenario1_config, scenario2_config)
from core.npa import bff_entropy_details
from core.sdp import SolverError

logger = get_logger(__name__)

Provenance = Literal["parity-CHSH", "BFF-SDP", "BFF-SDP-uncertified"]

CLASSICAL_WIN = 0.75
TSIRELSON_WIN = (2 + math.sqrt(2)) / 4
DEFAULT_LEVEL = "1+AB+AZ"
DEFAULT_ALPHA_MAX = 2.0


@dataclass(frozen=True)
class KeyRateReport:
    """
    One key-rate evaluation. `raw_rate` is P_success (bound - ec) before flooring;
    `key_rate` is the reported rate, floored at zero since the protocol aborts otherwise.
    `entropy_raw` is the SDP value before clamping to [0, 1], when there is one.
    """
    p_success: float
    p_win: Optional[float]
    entropy_bound: float
    ec_cost: float
    raw_rate: float
    provenance: Provenance
    entropy_raw: Optional[float] = None

    @property
    def key_rate(self) -> float:
        return max(self.raw_rate, 0.0)

    @property
    def search_score(self) -> float:
        """P_success (unclamped bound - ec); keeps a slope where the clamped bound is flat at zero."""
        if self.entropy_raw is None:
            return self.raw_rate
        return self.p_success * (self.entropy_raw - self.ec_cost)

    def as_dict(self) -> dict:
        data = asdict(self)
        data["key_rate"] = self.key_rate
        return data


# --- Parity-CHSH ---

def parity_chsh_win(table: BehaviorTable) -> float:
    """
    Winning probability of a + b_1 = x (y_1 + b_bar) mod 2 with uniform x, y_1,
    where b_bar is the parity of Bobs 2..N-1.
    """
    probabilities = table.probabilities
    index = np.indices(probabilities.shape)
    x, y, a, b1 = index[0], index[1], index[2], index[3]
    b_bar = index[4:].sum(axis=0) % 2 if table.parties > 2 else np.zeros_like(x)
    wins = (a + b1) % 2 == (x * ((y + b_bar) % 2)) % 2
    return float(probabilities[wins].sum() / 4.0)


def entropy_bound_parity_chsh(p_win: float) -> float:
    """
    1 - h((1 + sqrt((4 P_win - 2)^2 - 1)) / 2) for a violation, 0 otherwise.

    >>> entropy_bound_parity_chsh(0.75)
    0.0
    """
    if not 0.0 <= p_win <= 1.0 + config.PROBABILITY_TOL:
        raise ValueError(f"P_win must lie in [0, 1], got {p_win}.")
    if p_win <= CLASSICAL_WIN:
        return 0.0
    radicand = min(max((4 * p_win - 2) ** 2 - 1, 0.0), 1.0)
    return 1.0 - binary_entropy((1 + math.sqrt(radicand)) / 2)


def ec_cost(joint: np.ndarray) -> float:
    """max_i H(A | B_i) over the key-round table indexed [a, b_1, ..., b_{N-1}]."""
    joint = np.asarray(joint, dtype=float)
    if joint.ndim < 2:
        raise ValueError(f"Key-round table needs at least two parties, got shape {joint.shape}.")
    if abs(joint.sum() - 1.0) > config.PROBABILITY_TOL:
        raise ValueError(f"Key-round table sums to {joint.sum()}, expected 1.")
    costs = []
    for bob in range(1, joint.ndim):
        others = tuple(k for k in range(1, joint.ndim) if k != bob)
        pair = joint.sum(axis=others) if others else joint
        costs.append(conditional_shannon_entropy(pair))
    return max(costs)


def key_rate(p_success: float, entropy_bound: float, ec: float, provenance: Provenance = "parity-CHSH",
             p_win: Optional[float] = None, entropy_raw: Optional[float] = None) -> KeyRateReport:
    values = (p_success, entropy_bound, ec)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"Key-rate inputs must be finite, got {values}.")
    return KeyRateReport(p_success=p_success, p_win=p_win, entropy_bound=entropy_bound, ec_cost=ec,
                         raw_rate=p_success * (entropy_bound - ec), provenance=provenance,
                         entropy_raw=entropy_raw)


def _zero_report(p_success: float, provenance: Provenance) -> KeyRateReport:
    return KeyRateReport(p_success=p_success, p_win=None, entropy_bound=0.0, ec_cost=0.0, raw_rate=0.0,
                         provenance=provenance)


def parity_chsh_report(rho: DensityOperator, party_config: PartyConfig, p_success: float) -> KeyRateReport:
    """Key rate of a state under the analytic parity-CHSH entropy bound."""
    table = behavior(rho, party_config)
    p_win = parity_chsh_win(table)
    bound = entropy_bound_parity_chsh(p_win)
    ec = ec_cost(keygen_distribution(rho, party_config))
    return key_rate(p_success, bound, ec, "parity-CHSH", p_win)


# --- Pipelines ---

@lru_cache(maxsize=64)
def _heralded(params: ProtocolParams, pattern: ClickPattern, convention: str) -> HeraldedEnsemble:
    return herald(params, pattern, convention)


def scenario1_pipeline(params: ProtocolParams, pattern: ClickPattern = DEFAULT_PATTERN,
                       convention: Literal["single", "corrected"] = "single") -> KeyRateReport:
    """Pauli-plane measurements and the parity-CHSH bound."""
    ensemble = _heralded(params, pattern, convention)
    if ensemble.rho_x is None:
        return _zero_report(ensemble.p_success, "parity-CHSH")
    report = parity_chsh_report(ensemble.rho_x, scenario1_config(params.parties, params.party_dark_count),
                                ensemble.p_success)
    logger.debug(f"Scenario 1 N={params.parties} L={params.distance_km} q={params.q} eta_e={params.eta_e}: "
                 f"P_win={report.p_win:.6f} K={report.key_rate:.6e}")
    return report


def scenario2_pipeline(params: ProtocolParams, displacements: Sequence[float], m: int = DEFAULT_NODES,
                       level: Union[int, str] = DEFAULT_LEVEL, pattern: ClickPattern = DEFAULT_PATTERN,
                       convention: Literal["single", "corrected"] = "single",
                       tol: Optional[float] = None) -> KeyRateReport:
    """Displaced photon detection with the entropy bound certified by the BFF relaxation."""
    ensemble = _heralded(params, pattern, convention)
    if ensemble.rho_x is None:
        return _zero_report(ensemble.p_success, "BFF-SDP")
    party_config = scenario2_config(params.parties, displacements, params.party_dark_count)
    table = behavior(ensemble.rho_x, party_config)
    problem = build_bff_problem(table, gauss_radau(m), x_star=0)
    details = bff_entropy_details(problem, level=level, tol=tol)
    provenance = "BFF-SDP" if details.certified else "BFF-SDP-uncertified"
    ec = ec_cost(keygen_distribution(ensemble.rho_x, party_config))
    report = key_rate(ensemble.p_success, details.value, ec, provenance, parity_chsh_win(table), details.raw)
    logger.debug(f"Scenario 2 N={params.parties} displacements={np.round(displacements, 6).tolist()}: "
                 f"bound={details.value:.6f} (raw {details.raw:.3e}) ec={ec:.6f} K={report.key_rate:.6e}")
    return report


def ghz_state(parties: int) -> StateVector:
    registry = qubit_registry([("X", k) for k in range(parties)])
    return StateVector.from_occupations(registry, {(0,) * parties: 1 / math.sqrt(2), (1,) * parties: 1 / math.sqrt(2)})


def direct_transmission_rate(parties: int, distance_km: float, eta_det: float, p_dc: float) -> KeyRateReport:
    """Baseline: an ideal GHZ source at the center, every photon sent through the lossy channel."""
    if distance_km < 0:
        raise ValueError(f"Distance must be nonnegative, got {distance_km}.")
    eta_eff = eta_det * channel_transmissivity(distance_km)
    rho = ghz_state(parties).density()
    return parity_chsh_report(rho, direct_config(parties, eta_eff, p_dc), 1.0)


# --- Optimization ---

@dataclass(frozen=True)
class DisplacementSearch:
    displacements: np.ndarray
    report: KeyRateReport
    evaluations: int


def optimize_displacements(params: ProtocolParams,
                           objective: Optional[Callable[[np.ndarray], KeyRateReport]] = None,
                           alpha_max: float = DEFAULT_ALPHA_MAX, initial: Optional[Sequence[float]] = None,
                           samples: int = 8, restarts: int = 2, seed: int = 0,
                           m: int = DEFAULT_NODES, level: Union[int, str] = DEFAULT_LEVEL,
                           max_iter: Optional[int] = None) -> Tuple[np.ndarray, KeyRateReport]:
    """
    Maximizes the Scenario-2 rate over N+1 real displacements in [-alpha_max, alpha_max],
    scored with the unclamped entropy bound. Points where the SDP fails score -inf.

    A seeded coarse sample (plus `initial`) picks the starting points; each of the
    best `restarts` seeds a bounded Nelder-Mead run. Ties within 1e-9 keep the
    first point found.
    """
    search = search_displacements(params, objective, alpha_max, initial, samples, restarts, seed, m, level, max_iter)
    return search.displacements, search.report


def search_displacements(params: ProtocolParams,
                         objective: Optional[Callable[[np.ndarray], KeyRateReport]] = None,
                         alpha_max: float = DEFAULT_ALPHA_MAX, initial: Optional[Sequence[float]] = None,
                         samples: int = 8, restarts: int = 2, seed: int = 0,
                         m: int = DEFAULT_NODES, level: Union[int, str] = DEFAULT_LEVEL,
                         max_iter: Optional[int] = None) -> DisplacementSearch:
    if alpha_max <= 0:
        raise ValueError(f"alpha_max must be positive, got {alpha_max}.")
    dimension = params.parties + 1
    if objective is None:
        def objective(v: np.ndarray) -> KeyRateReport:
            return scenario2_pipeline(params, v, m=m, level=level)

    cache: List[Tuple[np.ndarray, Optional[KeyRateReport]]] = []
    best: List[Optional[Tuple[np.ndarray, KeyRateReport]]] = [None]
    failures: List[SolverError] = []

    def evaluate(v: np.ndarray) -> float:
        v = np.clip(np.asarray(v, dtype=float), -alpha_max, alpha_max)
        try:
            report = objective(v)
        except SolverError as e:
            logger.warning(f"Scoring displacements {np.round(v, 6).tolist()} as -inf: {e}")
            cache.append((v, None))
            failures.append(e)
            return np.inf
        cache.append((v, report))
        if best[0] is None or report.search_score > best[0][1].search_score + 1e-9:
            best[0] = (v.copy(), report)
        return -report.search_score

    rng = np.random.default_rng(seed)
    candidates = []
    if initial is not None:
        initial = np.asarray(initial, dtype=float)
        if initial.shape != (dimension,):
            raise ValueError(f"Initial displacements need {dimension} entries, got {initial.shape}.")
        candidates.append(np.clip(initial, -alpha_max, alpha_max))
    candidates += list(rng.uniform(-alpha_max, alpha_max, size=(samples, dimension)))
    if not candidates:
        raise ValueError("Nothing to search: pass `initial` or at least one sample.")
    scores = [evaluate(v) for v in candidates]
    order = sorted(range(len(candidates)), key=lambda k: (scores[k], k))

    bounds = [(-alpha_max, alpha_max)] * dimension
    options = {"xatol": 1e-6, "fatol": 1e-10, "maxiter": max_iter or 200 * dimension}
    for k in order[:max(restarts, 1)]:
        result = minimize(evaluate, candidates[k], method="Nelder-Mead", bounds=bounds, options=options)
        logger.debug(f"Nelder-Mead restart from sample {k}: K={-result.fun:.6e} after {result.nfev} evaluations")

    if best[0] is None:
        raise failures[-1]
    displacements, report = best[0]
    logger.info(f"Displacement search: K={report.key_rate:.6e} at {np.round(displacements, 6).tolist()} "
                f"({len(cache)} evaluations)")
    return DisplacementSearch(displacements, report, len(cache))


def optimize_q(params: ProtocolParams, grid: Iterable[float],
               rate_fn: Callable[[ProtocolParams], KeyRateReport] = scenario1_pipeline) -> Tuple[float, KeyRateReport]:
    """Best q on a grid; the first q wins ties."""
    best: Optional[Tuple[float, KeyRateReport]] = None
    for q in grid:
        report = rate_fn(params.model_copy(update={"q": float(q)}))
        if best is None or report.search_score > best[1].search_score + 1e-9:
            best = (float(q), report)
    if best is None:
        raise ValueError("The q grid is empty.")
    return best


# --- Searches ---

def max_secure_distance(rate_fn: Callable[[float], KeyRateReport], resolution: float = 0.01,
                        initial_step: float = 1.0, limit: float = 1000.0) -> float:
    """
    Largest L (to `resolution` km) with a positive rate, assuming K(L) decreases.
    Brackets by doubling from `initial_step`, then bisects.
    """
    def positive(distance: float) -> bool:
        return rate_fn(distance).key_rate > 0

    if not positive(0.0):
        return 0.0
    lo, hi = 0.0, initial_step
    while positive(hi):
        lo, hi = hi, 2 * hi
        if hi > limit:
            logger.warning(f"Rate still positive at {lo} km; reporting the search limit.")
            return limit
    while hi - lo > resolution:
        mid = (lo + hi) / 2
        if positive(mid):
            lo = mid
        else:
            hi = mid
    return lo


def bisect_threshold(rate_at: Callable[[float], float], lo: float, hi: float, tol: float = 1e-3,
                     samples: int = 5) -> float:
    """
    Smallest parameter value in [lo, hi] with a positive rate, to `tol`.
    The rate must be nonpositive at `lo` and positive at `hi`.
    """
    if not lo < hi:
        raise ValueError(f"Empty threshold range [{lo}, {hi}].")
    rate_lo, rate_hi = rate_at(lo), rate_at(hi)
    if rate_lo > 0 or rate_hi <= 0:
        raise ValueError(f"No sign change in [{lo}, {hi}]: K({lo})={rate_lo:.3e}, K({hi})={rate_hi:.3e}.")

    grid = np.linspace(lo, hi, samples + 2)[1:-1]
    values = [rate_lo] + [rate_at(v) for v in grid] + [rate_hi]
    if any(b < a - 1e-12 for a, b in zip(values, values[1:])):
        logger.warning(f"Rate is not monotone on [{lo}, {hi}]; the threshold may not be unique.")

    while hi - lo > tol:
        mid = (lo + hi) / 2
        if rate_at(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi
