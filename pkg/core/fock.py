import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Hashable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm
from scipy.special import entr, factorial

from config import config, get_logger

logger = get_logger(__name__)

# Fock-space conventions
#
# Every mode k carries occupations 0..cutoff_k. Amplitudes are stored flat in
# row-major order over the registry, so the first registered mode is the most
# significant index. Beamsplitters follow u = (1/sqrt2)[[1, 1], [-1, 1]]: the
# output annihilators are b_i = sqrt(T) a_i + sqrt(1-T) a_j and
# b_j = -sqrt(1-T) a_i + sqrt(T) a_j, so a single photon in mode i leaves as
# sqrt(T)|10> - sqrt(1-T)|01>.

Label = Hashable


@dataclass(frozen=True)
class ModeRegistry:
    """Ordered mode labels with a per-mode occupation cutoff."""
    labels: Tuple[Label, ...]
    cutoffs: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))
        if len(self.labels) != len(self.cutoffs):
            raise ValueError(f"Got {len(self.labels)} labels but {len(self.cutoffs)} cutoffs.")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"Mode labels must be unique: {self.labels}")
        for label, cutoff in zip(self.labels, self.cutoffs):
            if cutoff < 1:
                raise ValueError(f"Cutoff of mode {label!r} must be at least 1, got {cutoff}.")

    @classmethod
    def uniform(cls, labels: Iterable[Label], cutoff: int) -> "ModeRegistry":
        labels = tuple(labels)
        return cls(labels, (cutoff,) * len(labels))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(c + 1 for c in self.cutoffs)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.labels else 1

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: Label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"Unknown mode {label!r}; registry has {self.labels}.")

    def cutoff(self, label: Label) -> int:
        return self.cutoffs[self.index(label)]

    def concat(self, other: "ModeRegistry") -> "ModeRegistry":
        overlap = set(self.labels) & set(other.labels)
        if overlap:
            raise ValueError(f"Overlapping mode labels: {sorted(map(repr, overlap))}")
        return ModeRegistry(self.labels + other.labels, self.cutoffs + other.cutoffs)

    def select(self, labels: Sequence[Label]) -> "ModeRegistry":
        return ModeRegistry(tuple(labels), tuple(self.cutoff(l) for l in labels))

    def basis_index(self, occupations: Sequence[int]) -> int:
        if len(occupations) != len(self.labels):
            raise ValueError(f"Expected {len(self.labels)} occupations, got {len(occupations)}.")
        for label, n, cutoff in zip(self.labels, occupations, self.cutoffs):
            if not 0 <= n <= cutoff:
                raise ValueError(f"Occupation {n} of mode {label!r} exceeds cutoff {cutoff}.")
        return int(np.ravel_multi_index(tuple(occupations), self.dims))


@dataclass(frozen=True)
class StateVector:
    """A (not necessarily normalized) ket over a truncated Fock basis."""
    registry: ModeRegistry
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.registry.dim:
            raise ValueError(f"Amplitude count {amps.size} does not match registry dimension {self.registry.dim}.")
        if not np.all(np.isfinite(amps)):
            raise ValueError("State amplitudes must be finite.")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_occupations(cls, registry: ModeRegistry, terms: Dict[Tuple[int, ...], complex]) -> "StateVector":
        amps = np.zeros(registry.dim, dtype=complex)
        for occupations, amplitude in terms.items():
            amps[registry.basis_index(occupations)] += amplitude
        return cls(registry, amps)

    @classmethod
    def vacuum(cls, registry: ModeRegistry) -> "StateVector":
        return cls.from_occupations(registry, {(0,) * len(registry): 1.0})

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.registry.dims)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        norm = self.norm()
        if norm == 0:
            raise ValueError("Cannot normalize the zero vector.")
        return StateVector(self.registry, self.amplitudes / norm)

    def amplitude(self, occupations: Sequence[int]) -> complex:
        return complex(self.amplitudes[self.registry.basis_index(occupations)])

    def max_photons(self, labels: Optional[Sequence[Label]] = None) -> int:
        """Largest total photon number in `labels` over the support of the state."""
        labels = self.registry.labels if labels is None else labels
        axes = sorted({self.registry.index(l) for l in labels})
        weights = np.abs(self.tensor()) ** 2
        others = tuple(k for k in range(len(self.registry)) if k not in axes)
        marginal = weights.sum(axis=others) if others else weights
        support = marginal > 1e-28 * max(float(weights.sum()), 1e-300)
        if not support.any():
            return 0
        dims = [self.registry.dims[a] for a in axes]
        total = np.zeros(dims, dtype=int)
        for position, d in enumerate(dims):
            shape = [1] * len(dims)
            shape[position] = d
            total = total + np.arange(d).reshape(shape)
        return int(total[support].max())

    def density(self) -> "DensityOperator":
        return DensityOperator(self.registry, np.outer(self.amplitudes, self.amplitudes.conj()))

    def reduced(self, keep: Sequence[Label]) -> "DensityOperator":
        """Partial trace of |psi><psi| down to `keep`, without forming the full projector."""
        keep_axes = [self.registry.index(l) for l in keep]
        rest_axes = [k for k in range(len(self.registry)) if k not in keep_axes]
        sub = self.registry.select(keep)
        matrix = np.transpose(self.tensor(), keep_axes + rest_axes).reshape(sub.dim, -1)
        return DensityOperator(sub, matrix @ matrix.conj().T)

    def relabel(self, mapping: Dict[Label, Label]) -> "StateVector":
        labels = tuple(mapping.get(l, l) for l in self.registry.labels)
        return StateVector(ModeRegistry(labels, self.registry.cutoffs), self.amplitudes)

    def reorder(self, labels: Sequence[Label]) -> "StateVector":
        axes = [self.registry.index(l) for l in labels]
        if sorted(axes) != list(range(len(self.registry))):
            raise ValueError(f"Reordering must list every mode exactly once: {labels}")
        return StateVector(self.registry.select(labels), np.transpose(self.tensor(), axes).reshape(-1))

    def __add__(self, other: "StateVector") -> "StateVector":
        if other.registry != self.registry:
            raise ValueError("Cannot add states over different registries.")
        return StateVector(self.registry, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "StateVector") -> "StateVector":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "StateVector":
        return StateVector(self.registry, complex(scalar) * self.amplitudes)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DensityOperator:
    registry: ModeRegistry
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=complex)
        dim = self.registry.dim
        if matrix.shape != (dim, dim):
            raise ValueError(f"Matrix shape {matrix.shape} does not match registry dimension {dim}.")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "DensityOperator":
        tr = self.trace()
        if tr <= 0:
            raise ValueError(f"Cannot normalize an operator with trace {tr}.")
        return DensityOperator(self.registry, self.matrix / tr)

    def is_hermitian(self, tol: Optional[float] = None) -> bool:
        tol = config.HERMITIAN_TOL if tol is None else tol
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)

    def is_psd(self, tol: Optional[float] = None) -> bool:
        tol = config.PSD_TOL if tol is None else tol
        hermitian = (self.matrix + self.matrix.conj().T) / 2
        return bool(np.linalg.eigvalsh(hermitian)[0] >= -tol)

    def is_normalized(self, tol: Optional[float] = None) -> bool:
        tol = config.NORMALIZATION_TOL if tol is None else tol
        return abs(self.trace() - 1.0) <= tol

    def check(self) -> "DensityOperator":
        """Raise if the operator is not a valid normalized state."""
        if not self.is_hermitian():
            raise ValueError("Density operator is not Hermitian.")
        if not self.is_psd():
            raise ValueError("Density operator is not positive semidefinite.")
        if not self.is_normalized():
            raise ValueError(f"Density operator has trace {self.trace()}, expected 1.")
        return self

    def reorder(self, labels: Sequence[Label]) -> "DensityOperator":
        axes = [self.registry.index(l) for l in labels]
        if sorted(axes) != list(range(len(self.registry))):
            raise ValueError(f"Reordering must list every mode exactly once: {labels}")
        n = len(axes)
        tensor = self.matrix.reshape(self.registry.dims * 2)
        tensor = np.transpose(tensor, axes + [a + n for a in axes])
        dim = self.registry.dim
        return DensityOperator(self.registry.select(labels), tensor.reshape(dim, dim))


@dataclass(frozen=True)
class LinearOperator:
    registry: ModeRegistry
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=complex)
        dim = self.registry.dim
        if matrix.shape != (dim, dim):
            raise ValueError(f"Matrix shape {matrix.shape} does not match registry dimension {dim}.")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def expectation(self, rho: DensityOperator) -> complex:
        if rho.registry != self.registry:
            raise ValueError("Operator and state live on different registries.")
        return complex(np.trace(self.matrix @ rho.matrix))

    def adjoint(self) -> "LinearOperator":
        return LinearOperator(self.registry, self.matrix.conj().T)

    def __matmul__(self, other: "LinearOperator") -> "LinearOperator":
        if other.registry != self.registry:
            raise ValueError("Operators live on different registries.")
        return LinearOperator(self.registry, self.matrix @ other.matrix)


Operand = Union[StateVector, DensityOperator, LinearOperator]


def tensor_product(a: Operand, b: Operand) -> Operand:
    """Kronecker product of two objects of the same kind over disjoint modes."""
    if type(a) is not type(b):
        raise ValueError(f"Cannot tensor {type(a).__name__} with {type(b).__name__}.")
    registry = a.registry.concat(b.registry)
    if isinstance(a, StateVector):
        return StateVector(registry, np.kron(a.amplitudes, b.amplitudes))
    return type(a)(registry, np.kron(a.matrix, b.matrix))


@lru_cache(maxsize=64)
def _beamsplitter_matrix(dim_i: int, dim_j: int, transmissivity: float) -> np.ndarray:
    a_i = np.kron(np.diag(np.sqrt(np.arange(1, dim_i)), k=1), np.eye(dim_j))
    a_j = np.kron(np.eye(dim_i), np.diag(np.sqrt(np.arange(1, dim_j)), k=1))
    generator = a_i.T @ a_j - a_j.T @ a_i
    theta = math.acos(math.sqrt(transmissivity))
    unitary = expm(theta * generator)
    unitary.setflags(write=False)
    return unitary


def apply_beamsplitter(s: StateVector, mode_i: Label, mode_j: Label, transmissivity: float) -> StateVector:
    """
    Mixes two modes on a beamsplitter of transmissivity T.

    The transformation is exact on every photon-number sector that fits both
    cutoffs, so the input is checked against min(cutoff_i, cutoff_j) first.
    """
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"Transmissivity must lie in [0, 1], got {transmissivity}.")
    i, j = s.registry.index(mode_i), s.registry.index(mode_j)
    if i == j:
        raise ValueError(f"Beamsplitter needs two distinct modes, got {mode_i!r} twice.")
    photons = s.max_photons([mode_i, mode_j])
    limit = min(s.registry.cutoffs[i], s.registry.cutoffs[j])
    if photons > limit:
        raise ValueError(
            f"Cutoff overflow: {photons} photons in modes {mode_i!r}, {mode_j!r} exceed cutoff {limit}."
        )

    d_i, d_j = s.registry.dims[i], s.registry.dims[j]
    unitary = _beamsplitter_matrix(d_i, d_j, float(transmissivity))
    psi = np.moveaxis(s.tensor(), (i, j), (-2, -1))
    shape = psi.shape
    psi = (psi.reshape(-1, d_i * d_j) @ unitary.T).reshape(shape)
    psi = np.moveaxis(psi, (-2, -1), (i, j))
    return StateVector(s.registry, psi.reshape(-1))


def pure_loss_channel(s: StateVector, mode: Label, transmissivity: float,
                      env: Optional[Label] = None, env_cutoff: Optional[int] = None) -> StateVector:
    """
    Stinespring form of a pure-loss channel: appends a vacuum environment mode and
    mixes it with `mode`, so a photon ends up as sqrt(eta)|1,0> + sqrt(1-eta)|0,1>.

    Parameters:
    - `env`: label of the new environment mode, defaults to `(mode, "env")`.
    - `env_cutoff`: defaults to the largest photon number present in `mode`.
    """
    env = (mode, "env") if env is None else env
    if env_cutoff is None:
        env_cutoff = max(1, s.max_photons([mode]))
    environment = StateVector.vacuum(ModeRegistry((env,), (env_cutoff,)))
    joined = tensor_product(s, environment)
    # Environment listed first so the lost photon keeps a positive amplitude.
    return apply_beamsplitter(joined, env, mode, transmissivity)


def partial_trace(rho: DensityOperator, modes_to_trace: Iterable[Label]) -> DensityOperator:
    traced = list(modes_to_trace)
    traced_axes = sorted({rho.registry.index(l) for l in traced})
    if not traced_axes:
        return rho
    n = len(rho.registry)
    keep_axes = [k for k in range(n) if k not in traced_axes]
    keep = rho.registry.select([rho.registry.labels[k] for k in keep_axes])
    d_keep = keep.dim
    d_trace = rho.registry.dim // d_keep
    tensor = rho.matrix.reshape(rho.registry.dims * 2)
    tensor = np.transpose(tensor, keep_axes + traced_axes + [k + n for k in keep_axes] + [k + n for k in traced_axes])
    tensor = tensor.reshape(d_keep, d_trace, d_keep, d_trace)
    return DensityOperator(keep, np.einsum("ajbj->ab", tensor))


def coherent_overlap_gram(alpha: complex, cutoff: int, label: Label = "mode") -> LinearOperator:
    """Truncation of |alpha><alpha| to occupations 0..cutoff."""
    if cutoff < 1:
        raise ValueError(f"Cutoff must be at least 1, got {cutoff}.")
    n = np.arange(cutoff + 1)
    alpha = complex(alpha)
    ket = np.exp(-abs(alpha) ** 2 / 2) * alpha ** n / np.sqrt(factorial(n))
    return LinearOperator(ModeRegistry((label,), (cutoff,)), np.outer(ket, ket.conj()))


def binary_entropy(p: float) -> float:
    """
    Binary Shannon entropy in bits.

    >>> binary_entropy(0.5)
    1.0
    """
    tol = config.PROBABILITY_TOL
    if not -tol <= p <= 1 + tol:
        raise ValueError(f"Probability must lie in [0, 1], got {p}.")
    p = min(max(float(p), 0.0), 1.0)
    return float((entr(p) + entr(1.0 - p)) / math.log(2))


def shannon_entropy(probabilities: np.ndarray) -> float:
    return float(np.sum(entr(np.clip(probabilities, 0.0, None))) / math.log(2))


def conditional_shannon_entropy(joint: np.ndarray) -> float:
    """H(A|B) = H(A,B) - H(B) for a table indexed [a, b]."""
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2:
        raise ValueError(f"Joint table must be two-dimensional, got shape {joint.shape}.")
    tol = config.PROBABILITY_TOL
    if joint.min() < -tol:
        raise ValueError(f"Joint table has a negative entry {joint.min()}.")
    if abs(joint.sum() - 1.0) > tol:
        raise ValueError(f"Joint table sums to {joint.sum()}, expected 1.")
    return max(0.0, shannon_entropy(joint) - shannon_entropy(joint.sum(axis=0)))


# --- State diagnostics ---

def fidelity(rho: DensityOperator, psi: StateVector) -> float:
    """<psi|rho|psi> for a normalized pure reference state."""
    if rho.registry.dim != psi.registry.dim:
        raise ValueError("State and reference have different dimensions.")
    ket = psi.normalized().amplitudes
    return float((ket.conj() @ rho.matrix @ ket).real)


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    if rho.matrix.shape != sigma.matrix.shape:
        raise ValueError("Operators have different dimensions.")
    diff = rho.matrix - sigma.matrix
    return float(0.5 * np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum())


def von_neumann_entropy(rho: DensityOperator) -> float:
    eigenvalues = np.linalg.eigvalsh((rho.matrix + rho.matrix.conj().T) / 2)
    return shannon_entropy(eigenvalues)


def qubit_registry(labels: Sequence[Label]) -> ModeRegistry:
    return ModeRegistry.uniform(labels, 1)


def basis_state(registry: ModeRegistry, bits: Union[str, Sequence[int]]) -> StateVector:
    return StateVector.from_occupations(registry, {tuple(int(b) for b in bits): 1.0})
