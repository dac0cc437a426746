import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import config, get_logger
from core.fock import (DensityOperator, LinearOperator, ModeRegistry, StateVector,
                       apply_beamsplitter, pure_loss_channel, qubit_registry, tensor_product)

logger = get_logger(__name__)

# --- Protocol Constants ---

ATTENUATION_DB_PER_KM = 0.2
INTERFEROMETER_INPUTS = 4
PATTERNS_PER_COPY = 6

# Interferometer rows: b_j = sum_k U[j, k] a_k. Equal to u (x) u up to
# output phases, which photon counting cannot see.
_INTERFEROMETER = 0.5 * np.array([
    [1, 1, 1, 1],
    [1, -1, 1, -1],
    [1, 1, -1, -1],
    [1, -1, -1, 1],
], dtype=float)

# Ideal heralded states per click pattern: (first ket, second ket) of
# (|first> - |second>)/sqrt2 over party qubits 1..4.
PATTERN_STATES: Dict[Tuple[int, int], Tuple[str, str]] = {
    (1, 2): ("0101", "1010"),
    (1, 3): ("0011", "1100"),
    (1, 4): ("0110", "1001"),
    (2, 3): ("1001", "0110"),
    (2, 4): ("1100", "0011"),
    (3, 4): ("1010", "0101"),
}

BELL_STATES: Dict[str, np.ndarray] = {
    "psi-": np.array([0, 1, -1, 0]) / math.sqrt(2),
    "psi+": np.array([0, 1, 1, 0]) / math.sqrt(2),
    "phi-": np.array([1, 0, 0, -1]) / math.sqrt(2),
    "phi+": np.array([1, 0, 0, 1]) / math.sqrt(2),
}


class ProtocolParams(BaseModel):
    """Physical parameters of one protocol run."""
    model_config = ConfigDict(frozen=True)

    parties: int = 4                                   # N, even.
    q: float = Field(0.95, ge=0.0, le=1.0)             # Probability that a party keeps its photon.
    distance_km: float = Field(0.0, ge=0.0)            # Party-to-station distance L.
    transmissivity: Optional[float] = Field(None, ge=0.0, le=1.0)  # Overrides 10^(-0.02 L) when set.
    eta_d: float = Field(1.0, ge=0.0, le=1.0)          # Station detector efficiency.
    eta_e: float = Field(0.97, ge=0.0, le=1.0)         # Party detector efficiency.
    p_dc: float = Field(1e-6, ge=0.0, le=1.0)          # Station dark-count probability.
    p_dc_e: Optional[float] = Field(None, ge=0.0, le=1.0)  # Party dark-count probability, defaults to p_dc.
    aggregate_patterns: bool = False                   # Count all equivalent click patterns in P_success.

    @field_validator("parties")
    @classmethod
    def _even_parties(cls, value: int) -> int:
        if value < 4 or value % 2:
            raise ValueError(f"The number of parties must be an even integer >= 4, got {value}.")
        return value

    @property
    def party_dark_count(self) -> float:
        return self.p_dc if self.p_dc_e is None else self.p_dc_e

    @property
    def eta(self) -> float:
        """Channel transmissivity between a party and the station."""
        if self.transmissivity is not None:
            return self.transmissivity
        return channel_transmissivity(self.distance_km)

    @property
    def eta_station(self) -> float:
        """Channel and station detector losses composed into one pure-loss channel."""
        return self.eta * self.eta_d


def channel_transmissivity(distance_km: float) -> float:
    return 10.0 ** (-ATTENUATION_DB_PER_KM * distance_km / 10.0)


class ArmParams(NamedTuple):
    """One interferometer input: source keep-probability and the two loss stages."""
    q: float
    eta: float
    eta_e: float


@dataclass(frozen=True)
class ClickPattern:
    """Station detectors (1-based) that registered exactly one photon."""
    detectors: Tuple[int, ...]

    def __post_init__(self) -> None:
        detectors = tuple(sorted(int(d) for d in self.detectors))
        object.__setattr__(self, "detectors", detectors)
        if len(set(detectors)) != 2 or any(not 1 <= d <= INTERFEROMETER_INPUTS for d in detectors):
            raise ValueError(f"A click pattern needs two distinct detectors out of 1..4, got {self.detectors}.")

    @classmethod
    def parse(cls, text: str) -> "ClickPattern":
        """Accepts 'D1,D2', '1,2' or '12'."""
        digits = [c for c in text if c.isdigit()]
        return cls(tuple(int(d) for d in digits))

    def __str__(self) -> str:
        return ",".join(f"D{d}" for d in self.detectors)


DEFAULT_PATTERN = ClickPattern((1, 2))


@dataclass(frozen=True)
class HeraldedEnsemble:
    """
    Result of heralding on one accepted event.

    `branches` lists (P_k, |phi_k>) with unnormalized pure states over the X,E,F
    modes; for the six-party composition the two interferometer copies are kept in
    `copies` instead, since the joint X,E,F space is too large to store.
    """
    branches: Tuple[Tuple[float, StateVector], ...]
    p_success: float
    rho_x: Optional[DensityOperator]
    parties: int
    copies: Tuple["HeraldedEnsemble", ...] = field(default=(), repr=False)
    bell_probability: Optional[float] = None

    def __post_init__(self) -> None:
        if not -config.PROBABILITY_TOL <= self.p_success <= 1 + config.PROBABILITY_TOL:
            raise ValueError(f"P_success must lie in [0, 1], got {self.p_success}.")
        if any(weight < 0 for weight, _ in self.branches):
            raise ValueError("Branch weights must be nonnegative.")


# --- Single-Party Building Blocks ---

def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}.")


def source_state(q: float, labels: Tuple = ("X", "X'"), cutoff: int = 1) -> StateVector:
    """sqrt(q)|10> + sqrt(1-q)|01>: the photon stays with the party or goes to the station."""
    _check_unit("q", q)
    registry = ModeRegistry(tuple(labels), (1, cutoff))
    return StateVector.from_occupations(registry, {(1, 0): math.sqrt(q), (0, 1): math.sqrt(1 - q)})


def local_branch_states(q: float, eta: float, eta_e: float, party: Optional[int] = None) -> Tuple[StateVector, StateVector]:
    """
    The two conditional states of one party after the station records a photon
    from it (S) or nothing from it (V), over its X, E, F modes.

    Returns:
        Tuple[StateVector, StateVector]: |S> and |V>, unnormalized, with <S|S> + <V|V> = 1.
    """
    _check_unit("q", q)
    _check_unit("eta", eta)
    _check_unit("eta_e", eta_e)
    labels = ("X", "E", "F") if party is None else (("X", party), ("E", party), ("F", party))
    registry = qubit_registry(labels)
    sent = StateVector.from_occupations(registry, {(0, 0, 0): math.sqrt(1 - q) * math.sqrt(eta)})
    vacant = StateVector.from_occupations(registry, {
        (1, 0, 0): math.sqrt(q) * math.sqrt(eta_e),
        (0, 0, 1): math.sqrt(q) * math.sqrt(1 - eta_e),
        (0, 1, 0): math.sqrt(1 - q) * math.sqrt(1 - eta),
    })
    return sent, vacant


def interferometer_unitary(n: int = 4) -> LinearOperator:
    """
    Port transformation of the 4-input interferometer.

    Ports are addressed by two bits (two cutoff-1 registry modes), which is how the
    matrix factors as u (x) u; entry [j, k] is the weight of input k in output j.
    """
    if n != INTERFEROMETER_INPUTS:
        raise ValueError(f"The interferometer is defined for 4 inputs; got N={n}. Larger N composes copies.")
    return LinearOperator(ModeRegistry((("port", 1), ("port", 2)), (1, 1)), _INTERFEROMETER.copy())


def branch_weights(p_dc: float) -> Tuple[float, float, float, float]:
    """P_1..P_4: both detectors see photons, only the first, only the second, neither."""
    _check_unit("p_dc", p_dc)
    base = (1 - p_dc) ** 2
    return base, base * p_dc, base * p_dc, base * p_dc ** 2


def station_click_povm(pattern: ClickPattern, p_dc: float, cutoff: int = 1,
                       labels: Optional[Sequence] = None) -> LinearOperator:
    """
    Photon-number-resolving station measurement for one click pattern.

    Clicking detectors contribute |1><1| + p|0><0|, silent ones (1-p)|0><0|;
    two or more photons in any detector are discarded.
    """
    _check_unit("p_dc", p_dc)
    labels = tuple(("D", k) for k in range(1, 5)) if labels is None else tuple(labels)
    diagonal = np.ones(1)
    for k in range(1, INTERFEROMETER_INPUTS + 1):
        element = np.zeros(cutoff + 1)
        if k in pattern.detectors:
            element[0], element[1] = p_dc, 1.0
        else:
            element[0] = 1 - p_dc
        diagonal = np.kron(diagonal, element)
    return LinearOperator(ModeRegistry(labels, (cutoff,) * 4), np.diag(diagonal))


def branch_occupations(pattern: ClickPattern) -> List[Tuple[int, ...]]:
    """Station occupations of the four branches, ordered like `branch_weights`."""
    first, second = pattern.detectors
    occupations = []
    for n_first, n_second in ((1, 1), (1, 0), (0, 1), (0, 0)):
        occ = [0] * INTERFEROMETER_INPUTS
        occ[first - 1], occ[second - 1] = n_first, n_second
        occupations.append(tuple(occ))
    return occupations


# --- Closed Form ---

def _product(states: Sequence[StateVector]) -> StateVector:
    return reduce(tensor_product, states)


def _herald_arms(arms: Sequence[ArmParams], pattern: ClickPattern, p_dc: float) -> HeraldedEnsemble:
    """Closed-form herald for one 4-input interferometer with per-input parameters."""
    if len(arms) != INTERFEROMETER_INPUTS:
        raise ValueError(f"Expected 4 interferometer inputs, got {len(arms)}.")
    locals_ = [local_branch_states(arm.q, arm.eta, arm.eta_e, party=k) for k, arm in enumerate(arms)]
    first, second = (d - 1 for d in pattern.detectors)
    U = _INTERFEROMETER

    def product_with(senders: Sequence[int]) -> StateVector:
        return _product([locals_[k][0] if k in senders else locals_[k][1] for k in range(4)])

    # Two photons, one per clicking detector: permanent of the 2x2 submatrix.
    two_photon = None
    for l, m in itertools.combinations(range(4), 2):
        coefficient = U[first, l] * U[second, m] + U[first, m] * U[second, l]
        if abs(coefficient) < 1e-15:
            continue
        term = coefficient * product_with((l, m))
        two_photon = term if two_photon is None else two_photon + term

    first_only = reduce(lambda acc, k: acc + U[first, k] * product_with((k,)),
                        range(1, 4), U[first, 0] * product_with((0,)))
    second_only = reduce(lambda acc, k: acc + U[second, k] * product_with((k,)),
                         range(1, 4), U[second, 0] * product_with((0,)))
    nothing = product_with(())

    weights = branch_weights(p_dc)
    branches = tuple(zip(weights, (two_photon, first_only, second_only, nothing)))
    return _ensemble_from_branches(branches, parties=4)


def _ensemble_from_branches(branches: Tuple[Tuple[float, StateVector], ...], parties: int,
                            x_labels: Optional[Sequence] = None) -> HeraldedEnsemble:
    x_labels = tuple(("X", k) for k in range(parties)) if x_labels is None else tuple(x_labels)
    unnormalized = sum(weight * state.reduced(x_labels).matrix for weight, state in branches)
    p_success = float(np.trace(unnormalized).real)
    registry = qubit_registry(x_labels)
    rho = DensityOperator(registry, unnormalized / p_success) if p_success > 0 else None
    if rho is None:
        logger.warning("Heralding event has zero probability; no conditional state.")
    return HeraldedEnsemble(branches=branches, p_success=min(max(p_success, 0.0), 1.0), rho_x=rho, parties=parties)


def _arms_for(params: ProtocolParams) -> List[ArmParams]:
    return [ArmParams(params.q, params.eta_station, params.eta_e)] * INTERFEROMETER_INPUTS


def _aggregate(ensemble: HeraldedEnsemble, copies: int) -> HeraldedEnsemble:
    factor = PATTERNS_PER_COPY ** copies
    return HeraldedEnsemble(branches=ensemble.branches, p_success=min(1.0, factor * ensemble.p_success),
                            rho_x=ensemble.rho_x, parties=ensemble.parties, copies=ensemble.copies,
                            bell_probability=ensemble.bell_probability)


def heralded_ensemble(params: ProtocolParams, pattern: ClickPattern = DEFAULT_PATTERN) -> HeraldedEnsemble:
    """
    Heralded party state and success probability from the closed-form branch calculus.

    Station detector losses are folded into the channel (eta -> eta * eta_d).
    Any two-detector pattern is accepted; {D1,D2} is the protocol default.
    """
    if params.parties != 4:
        raise ValueError(f"heralded_ensemble handles N=4; use compose_n6 for N={params.parties}.")
    ensemble = _herald_arms(_arms_for(params), pattern, params.p_dc)
    logger.debug(f"Closed-form herald {pattern}: P_success={ensemble.p_success:.6e} at eta={params.eta:.6f}")
    return _aggregate(ensemble, 1) if params.aggregate_patterns else ensemble


# --- Brute-Force Oracle ---

def _brute_force_arms(arms: Sequence[ArmParams], pattern: ClickPattern, p_dc: float) -> HeraldedEnsemble:
    cutoff = INTERFEROMETER_INPUTS
    party_states = []
    for k, arm in enumerate(arms):
        state = source_state(arm.q, labels=(("X", k), ("D", k + 1)), cutoff=cutoff)
        state = pure_loss_channel(state, ("D", k + 1), arm.eta, env=("E", k), env_cutoff=1)
        state = pure_loss_channel(state, ("X", k), arm.eta_e, env=("F", k), env_cutoff=1)
        party_states.append(state)
    state = _product(party_states)

    # u (x) u as two layers of 50:50 beamsplitters.
    for i, j in ((1, 2), (3, 4), (1, 3), (2, 4)):
        state = apply_beamsplitter(state, ("D", i), ("D", j), 0.5)

    x_labels = [("X", k) for k in range(4)]
    d_labels = [("D", k) for k in range(1, 5)]
    env_labels = [("E", k) for k in range(4)] + [("F", k) for k in range(4)]
    state = state.reorder(x_labels + d_labels + env_labels)
    amplitudes = state.amplitudes.reshape(16, (cutoff + 1) ** 4, 2 ** 8)

    povm = station_click_povm(pattern, p_dc, cutoff=cutoff, labels=d_labels)
    weights = np.real(np.diag(povm.matrix))
    unnormalized = np.einsum("xde,d,yde->xy", amplitudes, weights, amplitudes.conj(), optimize=True)

    branch_registry = qubit_registry(x_labels + env_labels)
    d_registry = povm.registry
    branches = []
    for weight, occupation in zip(branch_weights(p_dc), branch_occupations(pattern)):
        slab = amplitudes[:, d_registry.basis_index(occupation), :]
        branches.append((weight, StateVector(branch_registry, slab.reshape(-1))))

    p_success = float(np.trace(unnormalized).real)
    rho = DensityOperator(qubit_registry(x_labels), unnormalized / p_success) if p_success > 0 else None
    return HeraldedEnsemble(branches=tuple(branches), p_success=min(max(p_success, 0.0), 1.0), rho_x=rho, parties=4)


def brute_force_herald(params: ProtocolParams, pattern: ClickPattern = DEFAULT_PATTERN) -> HeraldedEnsemble:
    """
    Independent oracle: full Fock-space simulation of sources, losses and the
    beamsplitter network, followed by the station POVM and environment traces.
    """
    if params.parties == 6:
        return compose_n6(params, method="brute-force")
    if params.parties != 4:
        raise ValueError(f"The brute-force oracle supports N in {{4, 6}}, got {params.parties}.")
    ensemble = _brute_force_arms(_arms_for(params), pattern, params.p_dc)
    logger.debug(f"Brute-force herald {pattern}: P_success={ensemble.p_success:.6e}")
    return _aggregate(ensemble, 1) if params.aggregate_patterns else ensemble


# --- Six Parties ---

def _pauli_on(qubits: int, operators: Dict[int, np.ndarray]) -> np.ndarray:
    identity = np.eye(2)
    return reduce(np.kron, [operators.get(k, identity) for k in range(qubits)])


_X = np.array([[0, 1], [1, 0]], dtype=float)
_Z = np.diag([1.0, -1.0])

# Local fix-ups that rotate each Bell outcome onto the psi- reference GHZ state.
_CORRECTIONS: Dict[str, Dict[int, np.ndarray]] = {
    "psi-": {},
    "psi+": {0: _Z},
    "phi-": {3: _X, 4: _X, 5: _X},
    "phi+": {0: _Z, 3: _X, 4: _X, 5: _X},
}


def compose_n6(params: ProtocolParams, bell_projector: Optional[np.ndarray] = None,
               convention: Literal["single", "corrected"] = "single",
               method: Literal["closed-form", "brute-force"] = "closed-form") -> HeraldedEnsemble:
    """
    Six-party heralding from two interferometer copies joined by a Bell projection.

    Copy 1 takes parties 1-3 and auxiliary source 1, copy 2 takes auxiliary source 2
    and parties 4-6; the auxiliary sources sit at the station, so their photons only
    see the station detector efficiency and their X-modes are kept lossless for the
    junction.

    Parameters:
    - `bell_projector`: 4-vector over (aux1, aux2); defaults to (|01> - |10>)/sqrt2.
    - `convention`: "single" keeps one Bell outcome and its probability; "corrected"
      sums all four outcomes after the matching local Pauli correction.
    """
    if params.parties != 6:
        raise ValueError(f"compose_n6 requires N=6, got {params.parties}.")
    if convention not in ("single", "corrected"):
        raise ValueError(f"Unknown Bell convention {convention!r}.")
    party = ArmParams(params.q, params.eta_station, params.eta_e)
    auxiliary = ArmParams(params.q, params.eta_d, 1.0)
    herald = _herald_arms if method == "closed-form" else _brute_force_arms
    copy_one = herald([party, party, party, auxiliary], DEFAULT_PATTERN, params.p_dc)
    copy_two = herald([auxiliary, party, party, party], DEFAULT_PATTERN, params.p_dc)
    if copy_one.rho_x is None or copy_two.rho_x is None:
        raise ValueError("Zero-probability projection: an interferometer copy never heralds.")

    joint = np.kron(copy_one.p_success * copy_one.rho_x.matrix, copy_two.p_success * copy_two.rho_x.matrix)
    eight = np.eye(8)

    def project(vector: np.ndarray) -> np.ndarray:
        bra = np.kron(np.kron(eight, np.asarray(vector, dtype=complex).conj().reshape(1, 4)), eight)
        return bra @ joint @ bra.conj().T

    if convention == "single":
        vector = BELL_STATES["psi-"] if bell_projector is None else np.asarray(bell_projector, dtype=complex)
        if abs(np.linalg.norm(vector) - 1.0) > config.NORMALIZATION_TOL:
            raise ValueError("The Bell projector must be a unit vector.")
        unnormalized = project(vector)
    else:
        if bell_projector is not None:
            raise ValueError("The corrected convention uses the fixed psi- reference; drop bell_projector.")
        unnormalized = np.zeros((64, 64), dtype=complex)
        for name, vector in BELL_STATES.items():
            correction = _pauli_on(6, _CORRECTIONS[name])
            unnormalized += correction @ project(vector) @ correction.T

    p_success = float(np.trace(unnormalized).real)
    if p_success <= 0:
        raise ValueError("Zero-probability projection onto the Bell state.")
    click_probability = copy_one.p_success * copy_two.p_success
    rho = DensityOperator(qubit_registry([("X", k) for k in range(6)]), unnormalized / p_success)
    ensemble = HeraldedEnsemble(branches=(), p_success=min(p_success, 1.0), rho_x=rho, parties=6,
                                copies=(copy_one, copy_two), bell_probability=p_success / click_probability)
    logger.debug(f"N=6 composition ({convention}): P_success={p_success:.6e}, Bell probability={ensemble.bell_probability:.4f}")
    return _aggregate(ensemble, 2) if params.aggregate_patterns else ensemble


def herald(params: ProtocolParams, pattern: ClickPattern = DEFAULT_PATTERN,
           convention: Literal["single", "corrected"] = "single") -> HeraldedEnsemble:
    """Dispatches on N: closed form for four parties, the composition for six."""
    if params.parties == 4:
        return heralded_ensemble(params, pattern)
    if params.parties == 6:
        return compose_n6(params, convention=convention)
    raise ValueError(f"Only N in {{4, 6}} is supported, got {params.parties}.")


def ideal_pattern_state(pattern: ClickPattern = DEFAULT_PATTERN) -> StateVector:
    plus, minus = PATTERN_STATES[pattern.detectors]
    registry = qubit_registry([("X", k) for k in range(4)])
    return StateVector.from_occupations(registry, {
        tuple(int(b) for b in plus): 1 / math.sqrt(2),
        tuple(int(b) for b in minus): -1 / math.sqrt(2),
    })


def six_party_ghz() -> StateVector:
    registry = qubit_registry([("X", k) for k in range(6)])
    return StateVector.from_occupations(registry, {
        (1, 0, 1, 0, 1, 0): 1 / math.sqrt(2),
        (0, 1, 0, 1, 0, 1): -1 / math.sqrt(2),
    })
