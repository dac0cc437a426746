import itertools
import math
import string
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from config import config, get_logger
from core.fock import DensityOperator, LinearOperator, ModeRegistry, coherent_overlap_gram

logger = get_logger(__name__)

# Party qubits use the photon-number encoding: |0> no photon, |1> one photon.
# Outcome 0 always corresponds to the element M0 of the POVM.

_QUBIT = ModeRegistry(("X",), (1,))
_I = np.eye(2)
_SIGMA_Z = np.diag([1.0, -1.0])
_SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])

Povm = Tuple[LinearOperator, LinearOperator]


def _wrap_angle(theta: float) -> float:
    """Maps an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    return math.pi if math.isclose(wrapped, -math.pi, abs_tol=1e-15) else wrapped


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}.")


def pauli_observable(theta: float) -> np.ndarray:
    """Pi(theta) = cos(theta) sigma_Z + sin(theta) sigma_X."""
    return math.cos(theta) * _SIGMA_Z + math.sin(theta) * _SIGMA_X


def _pair(m0: np.ndarray, registry: ModeRegistry = _QUBIT) -> Povm:
    eye = np.eye(m0.shape[0])
    return LinearOperator(registry, m0), LinearOperator(registry, eye - m0)


def pauli_povm(theta: float, p_dc_e: float = 0.0) -> Povm:
    _check_probability("p_dc_e", p_dc_e)
    return _pair((1 - p_dc_e) * (_I + pauli_observable(theta)) / 2)


def displaced_povm(alpha: complex, p_dc_e: float = 0.0, cutoff: int = 1) -> Povm:
    """No-click element (1-p) |alpha><alpha| truncated to the party's qubit space."""
    _check_probability("p_dc_e", p_dc_e)
    gram = coherent_overlap_gram(alpha, cutoff, label="X")
    return _pair((1 - p_dc_e) * gram.matrix, gram.registry)


def direct_povm(theta: float, eta_eff: float, p_dc: float = 0.0) -> Povm:
    _check_probability("eta_eff", eta_eff)
    _check_probability("p_dc", p_dc)
    observable = pauli_observable(theta)
    m0 = (1 - (1 - p_dc) * (1 - eta_eff)) * (_I + observable) / 2 + p_dc * (_I - observable) / 2
    return _pair(m0)


# --- Settings ---

@dataclass(frozen=True)
class PauliPlane:
    theta: float
    p_dc_e: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _wrap_angle(self.theta))
        _check_probability("p_dc_e", self.p_dc_e)

    def povm(self) -> Povm:
        return pauli_povm(self.theta, self.p_dc_e)


@dataclass(frozen=True)
class Displaced:
    alpha: complex
    p_dc_e: float = 0.0

    def __post_init__(self) -> None:
        _check_probability("p_dc_e", self.p_dc_e)

    def povm(self) -> Povm:
        return displaced_povm(self.alpha, self.p_dc_e)


@dataclass(frozen=True)
class DirectTransmission:
    theta: float
    eta_eff: float
    p_dc_e: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _wrap_angle(self.theta))
        _check_probability("eta_eff", self.eta_eff)
        _check_probability("p_dc_e", self.p_dc_e)

    def povm(self) -> Povm:
        return direct_povm(self.theta, self.eta_eff, self.p_dc_e)


MeasurementSetting = Union[PauliPlane, Displaced, DirectTransmission]


@dataclass(frozen=True)
class PartyConfig:
    """
    Measurement settings of all parties.

    `key[k]` is party k's key-generation setting; `bell[k]` its two Bell-test
    settings. Party 0 is Alice, party 1 is Bob_1; Bobs 2..N-1 have a fixed input
    and therefore two equal settings.
    """
    key: Tuple[MeasurementSetting, ...]
    bell: Tuple[Tuple[MeasurementSetting, MeasurementSetting], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "key", tuple(self.key))
        object.__setattr__(self, "bell", tuple(tuple(pair) for pair in self.bell))
        if len(self.key) != len(self.bell):
            raise ValueError(f"{len(self.key)} key settings but {len(self.bell)} Bell-setting pairs.")
        if len(self.bell) < 2:
            raise ValueError("At least two parties are required.")
        for k, pair in enumerate(self.bell):
            if len(pair) != 2:
                raise ValueError(f"Party {k} needs exactly two Bell settings, got {len(pair)}.")
            if k >= 2 and pair[0] != pair[1]:
                raise ValueError(f"Bob_{k} has a fixed input; both Bell settings must match.")

    @property
    def parties(self) -> int:
        return len(self.key)


def scenario1_config(parties: int, p_dc_e: float = 0.0) -> PartyConfig:
    """Pauli-plane settings: Alice M(0)/M(pi/2), Bob_1 M(-3pi/4)/M(3pi/4), other Bobs M(pi/2)."""
    key = tuple(PauliPlane(0.0, p_dc_e) for _ in range(parties))
    bell = [(PauliPlane(0.0, p_dc_e), PauliPlane(math.pi / 2, p_dc_e)),
            (PauliPlane(-3 * math.pi / 4, p_dc_e), PauliPlane(3 * math.pi / 4, p_dc_e))]
    bell += [(PauliPlane(math.pi / 2, p_dc_e),) * 2 for _ in range(parties - 2)]
    return PartyConfig(key, tuple(bell))


def scenario2_config(parties: int, displacements: Sequence[float], p_dc_e: float = 0.0) -> PartyConfig:
    """
    Displaced-detection settings.

    `displacements` holds N+1 values: Alice's A1, Bob_1's two settings, then one per
    remaining Bob. Alice's A0 and every key setting use alpha = 0.
    """
    displacements = [complex(d) for d in displacements]
    if len(displacements) != parties + 1:
        raise ValueError(f"Expected {parties + 1} displacements for N={parties}, got {len(displacements)}.")
    key = tuple(Displaced(0.0, p_dc_e) for _ in range(parties))
    bell = [(Displaced(0.0, p_dc_e), Displaced(displacements[0], p_dc_e)),
            (Displaced(displacements[1], p_dc_e), Displaced(displacements[2], p_dc_e))]
    bell += [(Displaced(d, p_dc_e),) * 2 for d in displacements[3:]]
    return PartyConfig(key, tuple(bell))


def direct_config(parties: int, eta_eff: float, p_dc: float = 0.0) -> PartyConfig:
    def setting(theta: float) -> DirectTransmission:
        return DirectTransmission(theta, eta_eff, p_dc)

    key = tuple(setting(0.0) for _ in range(parties))
    bell = [(setting(0.0), setting(math.pi / 2)), (setting(math.pi / 4), setting(-math.pi / 4))]
    bell += [(setting(math.pi / 2),) * 2 for _ in range(parties - 2)]
    return PartyConfig(key, tuple(bell))


# --- Behaviors ---

@dataclass(frozen=True)
class BehaviorTable:
    """
    Joint outcome distribution P(a, b_1..b_{N-1} | x, y_1).

    `probabilities` has shape (2, 2) + (2,) * N and is indexed
    [x, y_1, a, b_1, ..., b_{N-1}]; inputs of Bobs 2..N-1 are fixed to 0.
    """
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        table = np.asarray(self.probabilities, dtype=float)
        if table.ndim < 4 or table.shape != (2,) * table.ndim:
            raise ValueError(f"Behavior table must have shape (2, 2) + (2,)*N, got {table.shape}.")
        tol = config.PROBABILITY_TOL
        if table.min() < -tol:
            raise ValueError(f"Behavior has a negative probability {table.min()}.")
        sums = table.reshape(4, -1).sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > tol:
            raise ValueError(f"Each input slice must sum to 1, got sums {sums}.")
        table = np.clip(table, 0.0, None)
        table.setflags(write=False)
        object.__setattr__(self, "probabilities", table)

    @property
    def parties(self) -> int:
        return self.probabilities.ndim - 2

    def slice(self, x: int, y: int) -> np.ndarray:
        return self.probabilities[x, y]

    def marginal(self, parties: Sequence[int], x: int, y: int) -> np.ndarray:
        """Distribution of the listed parties' outcomes (in the order given)."""
        table = self.probabilities[x, y]
        others = tuple(k for k in range(self.parties) if k not in parties)
        reduced = table.sum(axis=others) if others else table
        present = sorted(parties)
        return np.transpose(reduced, [present.index(p) for p in parties])

    def no_signaling_violation(self) -> float:
        """Largest change of any marginal under a change of the other parties' inputs."""
        worst = 0.0
        alice = [self.marginal([0], x, 0) - self.marginal([0], x, 1) for x in (0, 1)]
        bob_one = [self.marginal([1], 0, y) - self.marginal([1], 1, y) for y in (0, 1)]
        for diff in alice + bob_one:
            worst = max(worst, float(np.max(np.abs(diff))))
        for k in range(2, self.parties):
            reference = self.marginal([k], 0, 0)
            for x, y in ((0, 1), (1, 0), (1, 1)):
                worst = max(worst, float(np.max(np.abs(self.marginal([k], x, y) - reference))))
        return worst

    def is_no_signaling(self, tol: Optional[float] = None) -> bool:
        tol = config.PROBABILITY_TOL if tol is None else tol
        return self.no_signaling_violation() <= tol


def outcome_distribution(rho: np.ndarray, elements: Sequence[np.ndarray]) -> np.ndarray:
    """
    P(o_1..o_n) = Tr[rho (x)_k E_k(o_k)] for per-party POVMs `elements[k]` of shape
    (outcomes, d, d), contracted party by party.
    """
    n = len(elements)
    d = elements[0].shape[-1]
    tensor = np.asarray(rho).reshape((d,) * (2 * n))
    letters = string.ascii_letters
    ket, bra, out = letters[:n], letters[n:2 * n], letters[2 * n:3 * n]
    subscripts = [ket + bra] + [out[k] + bra[k] + ket[k] for k in range(n)]
    table = np.einsum(",".join(subscripts) + "->" + out, tensor, *elements, optimize=True)
    return np.real(table)


def _elements(setting: MeasurementSetting) -> np.ndarray:
    m0, m1 = setting.povm()
    return np.stack([m0.matrix, m1.matrix])


def _check_dimension(rho: DensityOperator, parties: int) -> None:
    if rho.registry.dim != 2 ** parties:
        raise ValueError(f"State dimension {rho.registry.dim} does not match {parties} party qubits.")


def behavior(rho_x: DensityOperator, party_config: PartyConfig) -> BehaviorTable:
    """Bell-test statistics P(a, b | x, y_1) with Bobs 2..N-1 at their fixed input."""
    n = party_config.parties
    _check_dimension(rho_x, n)
    table = np.empty((2, 2) + (2,) * n)
    for x in (0, 1):
        for y in (0, 1):
            settings = [party_config.bell[0][x], party_config.bell[1][y]]
            settings += [party_config.bell[k][0] for k in range(2, n)]
            table[x, y] = outcome_distribution(rho_x.matrix, [_elements(s) for s in settings])
    return BehaviorTable(table)


def keygen_distribution(rho_x: DensityOperator, party_config: PartyConfig) -> np.ndarray:
    """Joint key-round distribution P(a, b_1..b_{N-1}), one axis per party."""
    n = party_config.parties
    _check_dimension(rho_x, n)
    table = outcome_distribution(rho_x.matrix, [_elements(s) for s in party_config.key])
    if abs(table.sum() - 1.0) > config.PROBABILITY_TOL:
        raise ValueError(f"Key-round distribution sums to {table.sum()}; is the state normalized?")
    return np.clip(table, 0.0, None)


def product_behavior(parties: int, local: Sequence[Tuple[np.ndarray, np.ndarray]]) -> BehaviorTable:
    """
    Behavior of independent parties from per-party outcome distributions.
    `local[k]` gives party k's distributions for its two inputs.
    """
    table = np.empty((2, 2) + (2,) * parties)
    for x in (0, 1):
        for y in (0, 1):
            factors = [local[0][x], local[1][y]] + [local[k][0] for k in range(2, parties)]
            table[x, y] = reduce(np.multiply.outer, factors)
    return BehaviorTable(table)


def parity_coarse_grain(table: BehaviorTable) -> BehaviorTable:
    """
    Three-party behavior in which Bobs 2..N-1 act as one device that outputs the
    parity of their outcomes. Tables with N <= 3 are returned unchanged.

    Any N-party quantum model of `table` is a three-party quantum model of the
    result, so a bound certified from the coarse-grained table holds for the
    original one.
    """
    n = table.parties
    if n <= 3:
        return table
    rest = table.probabilities.reshape((2, 2, 2, 2, -1))
    parity = np.array([sum(bits) % 2 for bits in itertools.product((0, 1), repeat=n - 2)])
    return BehaviorTable(np.stack([rest[..., parity == c].sum(axis=-1) for c in (0, 1)], axis=-1))
