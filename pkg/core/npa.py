import itertools
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import config, get_logger
from core.sdp import SdpProblem, SdpSolution, SolverError, certified_bound, solve_sdp

if TYPE_CHECKING:
    from core.bff import MomentProblem

logger = get_logger(__name__)

# Words are tuples of letters. Letters of different parties commute; inside a
# party, projectors of one setting are idempotent and mutually orthogonal.
# Eve's Z letters form their own party, so they commute with every device
# letter but not with each other.

PROJECTOR = "P"
OPERATOR = "Z"


@dataclass(frozen=True, order=True)
class Letter:
    party: int
    kind: str
    label: Tuple[int, ...]
    adjoint: bool = False
    name: str = field(default="", compare=False)

    @property
    def hermitian(self) -> bool:
        return self.kind == PROJECTOR

    def dagger(self) -> "Letter":
        return self if self.hermitian else replace(self, adjoint=not self.adjoint)

    def __str__(self) -> str:
        base = self.name or f"{self.kind}{self.party}{list(self.label)}"
        return base + ("*" if self.adjoint else "")


Word = Tuple[Letter, ...]
IDENTITY: Word = ()


def projector(party: int, setting: int, outcome: int = 0, name: str = "") -> Letter:
    return Letter(party, PROJECTOR, (setting, outcome), name=name)


def operator(party: int, *label: int, name: str = "") -> Letter:
    return Letter(party, OPERATOR, tuple(label), name=name)


def word_str(word: Optional[Word]) -> str:
    if word is None:
        return "0"
    return "*".join(str(l) for l in word) if word else "1"


def canonical(word: Iterable[Letter]) -> Optional[Word]:
    """
    Normal form of a word, or None when it vanishes.

    Letters are stably sorted by party, then adjacent projectors of one setting
    merge (same outcome) or annihilate (different outcomes).
    """
    out: List[Letter] = []
    for letter in sorted(word, key=lambda l: l.party):
        if out and letter.kind == PROJECTOR:
            last = out[-1]
            if last.kind == PROJECTOR and last.party == letter.party and last.label[0] == letter.label[0]:
                if last.label[1] == letter.label[1]:
                    continue
                return None
        out.append(letter)
    return tuple(out)


def adjoint(word: Word) -> Word:
    return tuple(l.dagger() for l in reversed(word))


def class_key(word: Word) -> Word:
    """Representative shared by a word and its adjoint."""
    partner = canonical(adjoint(word))
    return min(word, partner)


def is_self_adjoint(word: Word) -> bool:
    return canonical(adjoint(word)) == word


def monomial_basis(letters: Sequence[Letter], level: int, extras: Sequence[Word] = ()) -> List[Word]:
    """All canonical words of length <= level, then extras, without duplicates."""
    if level < 0:
        raise ValueError(f"Relaxation level must be nonnegative, got {level}.")
    seen: Dict[Word, None] = {IDENTITY: None}
    for length in range(1, level + 1):
        for candidate in itertools.product(letters, repeat=length):
            word = canonical(candidate)
            if word is not None and word not in seen:
                seen[word] = None
    for extra in extras:
        word = canonical(extra)
        if word is not None and word not in seen:
            seen[word] = None
    return list(seen)


def parse_level(level: Union[int, str]) -> Tuple[int, Tuple[str, ...]]:
    """'2' -> (2, ()); '1+AB+AZ' -> (1, ('AB', 'AZ'))."""
    if isinstance(level, int):
        return level, ()
    parts = [p.strip() for p in str(level).split("+") if p.strip()]
    if not parts or not parts[0].isdigit():
        raise ValueError(f"Malformed relaxation level {level!r}; expected e.g. '2' or '1+AB+AZ'.")
    tags = tuple(p.upper() for p in parts[1:])
    for tag in tags:
        if tag not in EXTRA_MONOMIALS:
            raise ValueError(f"Unknown extra-monomial set {tag!r}; choose from {sorted(EXTRA_MONOMIALS)}.")
    return int(parts[0]), tags


def _cross_products(letters: Sequence[Letter]) -> List[Word]:
    """Products of one projector from each of two or more distinct parties."""
    by_party: Dict[int, List[Letter]] = {}
    for letter in letters:
        if letter.kind == PROJECTOR:
            by_party.setdefault(letter.party, []).append(letter)
    words: List[Word] = []
    for size in range(2, len(by_party) + 1):
        for group in itertools.combinations(sorted(by_party), size):
            words.extend(itertools.product(*(by_party[p] for p in group)))
    return words


def _alice_eve(letters: Sequence[Letter]) -> List[Word]:
    alice = [l for l in letters if l.kind == PROJECTOR and l.party == 0]
    eve = [l for l in letters if l.kind == OPERATOR]
    return [(a, z) for a in alice for z in eve]


EXTRA_MONOMIALS = {"AB": _cross_products, "AZ": _alice_eve}


def level_monomials(letters: Sequence[Letter], level: Union[int, str]) -> Tuple[int, List[Word]]:
    depth, tags = parse_level(level)
    extras: List[Word] = []
    for tag in tags:
        extras.extend(EXTRA_MONOMIALS[tag](letters))
    return depth, monomial_basis(letters, depth, extras)


def support_monomials(basis: Sequence[Word], words: Iterable[Word]) -> List[Word]:
    """
    Adds the fewest monomials needed so that every word in `words` is an entry
    u^dagger v of the moment matrix built on the basis.
    """
    basis = list(basis)
    present = set(basis)
    reachable = {canonical(adjoint(u) + v) for u in basis for v in basis}
    for word in words:
        if word in reachable or word == IDENTITY:
            continue
        best = None
        for cut in range(len(word) + 1):
            u = canonical(adjoint(word[:cut]))
            v = canonical(word[cut:])
            missing = [w for w in (u, v) if w not in present]
            rank = (len(set(missing)), max(len(u), len(v)), cut)
            if best is None or rank < best[0]:
                best = (rank, u, v)
        _, u, v = best
        for w in (u, v):
            if w not in present:
                basis.append(w)
                present.add(w)
        reachable.update(canonical(adjoint(a) + b) for a in basis for b in (u, v))
        reachable.update(canonical(adjoint(a) + b) for a in (u, v) for b in basis)
    return basis


# --- Moment Matrices ---

@dataclass
class MomentMatrixSpec:
    """
    Moment matrix Gamma[i, j] = <basis[i]^dagger basis[j]> with its identification classes.

    `cells` maps each upper-triangle position to its canonical word (None for
    words that vanish). `fixed` pins classes to known values, including <1> = 1.
    """
    level: int
    basis: List[Word]
    cells: Dict[Tuple[int, int], Optional[Word]]
    classes: Dict[Word, List[Tuple[int, int]]]
    fixed: Dict[Word, complex]
    dropped: List[Word] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.basis)


def moment_matrix(basis: Sequence[Word], equalities: Sequence[Tuple[Word, complex]] = (),
                  level: int = 1, known: Iterable[Word] = ()) -> MomentMatrixSpec:
    """
    Builds the cell identification of Gamma and maps behavior equalities onto it.

    Equalities whose word appears neither in Gamma nor in `known` (words of other
    blocks) are dropped with a warning.
    """
    basis = list(basis)
    if not basis or basis[0] != IDENTITY:
        raise ValueError("The basis must start with the identity word.")
    cells: Dict[Tuple[int, int], Optional[Word]] = {}
    classes: Dict[Word, List[Tuple[int, int]]] = {}
    for i, u in enumerate(basis):
        u_dagger = adjoint(u)
        for j in range(i, len(basis)):
            word = canonical(u_dagger + basis[j])
            cells[(i, j)] = word
            if word is not None:
                classes.setdefault(class_key(word), []).append((i, j))

    fixed: Dict[Word, complex] = {IDENTITY: 1.0}
    dropped: List[Word] = []
    span = set(classes) | {class_key(w) for w in known}
    tol = config.PROBABILITY_TOL
    for raw, value in equalities:
        word = canonical(raw)
        if word is None:
            if abs(value) > tol:
                raise ValueError(f"Equality sets a vanishing word {word_str(tuple(raw))} to {value}.")
            continue
        key = class_key(word)
        if key not in span:
            logger.warning(f"Dropping equality on {word_str(word)}: word is outside the relaxation span.")
            dropped.append(word)
            continue
        stored = complex(value) if word == key else complex(value).conjugate()
        if key in fixed and abs(fixed[key] - stored) > tol:
            raise ValueError(f"Conflicting values for {word_str(key)}: {fixed[key]} and {stored}.")
        fixed[key] = stored
    return MomentMatrixSpec(level=level, basis=basis, cells=cells, classes=classes, fixed=fixed, dropped=dropped)


@dataclass
class LocalizingBlock:
    """Localizing matrix L[i, j] = sum_w g_w <u_i^dagger w u_j> of a polynomial g >= 0."""
    polynomial: Dict[Word, complex]
    basis: List[Word]
    cells: Dict[Tuple[int, int], List[Tuple[complex, Optional[Word]]]]


def localizing_constraints(spec: MomentMatrixSpec, polynomials: Sequence[Mapping[Word, complex]],
                           letters: Sequence[Letter]) -> List[LocalizingBlock]:
    """
    One localizing block per polynomial, over words of length <= level - 1
    (a scalar inequality at level 1).
    """
    blocks = []
    for polynomial in polynomials:
        degree = max((len(w) for w in polynomial), default=0)
        depth = max(spec.level - (degree + 1) // 2, 0)
        basis = monomial_basis(letters, depth)
        cells: Dict[Tuple[int, int], List[Tuple[complex, Optional[Word]]]] = {}
        for i, u in enumerate(basis):
            u_dagger = adjoint(u)
            for j in range(i, len(basis)):
                cells[(i, j)] = [(complex(coef), canonical(u_dagger + tuple(w) + basis[j]))
                                 for w, coef in polynomial.items()]
        blocks.append(LocalizingBlock(dict(polynomial), basis, cells))
    return blocks


# --- Relaxation ---

@dataclass
class Relaxation:
    """SDP form of a moment problem plus the bookkeeping needed to read it back."""
    sdp: SdpProblem
    spec: MomentMatrixSpec
    localizing: List[LocalizingBlock]
    variables: List[Tuple[Word, str]]
    real_moments: bool
    bounds: np.ndarray
    slack: float = 0.0


class _Assembler:
    """Turns moments into affine expressions over real SDP variables."""

    def __init__(self, fixed: Dict[Word, complex], real_moments: bool) -> None:
        self.fixed = fixed
        self.real_moments = real_moments
        self.index: Dict[Tuple[Word, str], int] = {}

    def _variable(self, key: Word, part: str) -> int:
        if (key, part) not in self.index:
            self.index[(key, part)] = len(self.index) + 1
        return self.index[(key, part)]

    def expression(self, word: Optional[Word]) -> Tuple[Dict[int, complex], complex]:
        if word is None:
            return {}, 0.0
        key = class_key(word)
        conjugated = word != key
        if key in self.fixed:
            value = self.fixed[key]
            return {}, value.conjugate() if conjugated else value
        coefficients: Dict[int, complex] = {self._variable(key, "re"): 1.0}
        if not self.real_moments and not is_self_adjoint(key):
            coefficients[self._variable(key, "im")] = -1j if conjugated else 1j
        return coefficients, 0.0

    def combination(self, terms: Sequence[Tuple[complex, Optional[Word]]]) -> Tuple[Dict[int, complex], complex]:
        coefficients: Dict[int, complex] = {}
        constant = 0.0
        for coef, word in terms:
            part, offset = self.expression(word)
            for var, value in part.items():
                coefficients[var] = coefficients.get(var, 0.0) + coef * value
            constant += coef * offset
        return coefficients, constant


def _emit_block(entries: Dict[Tuple[int, int, int, int], float], assembler: _Assembler, block: int,
                size: int, cells: Mapping[Tuple[int, int], Sequence[Tuple[complex, Optional[Word]]]]) -> int:
    """Writes one (possibly realified) block; returns its SDP dimension."""
    realified = not assembler.real_moments

    def put(var: int, row: int, col: int, value: float) -> None:
        if value == 0.0:
            return
        if row > col:
            row, col = col, row
        key = (var, block, row, col)
        entries[key] = entries.get(key, 0.0) + value

    for (i, j), terms in cells.items():
        coefficients, constant = assembler.combination(terms)
        # G(x) = G0 + sum G_k x_k >= 0 becomes SDPA's sum F_k x_k - F0 >= 0 with F0 = -G0.
        put(0, i, j, -constant.real)
        for var, coef in coefficients.items():
            put(var, i, j, coef.real)
        if realified:
            put(0, size + i, size + j, -constant.real)
            for var, coef in coefficients.items():
                put(var, size + i, size + j, coef.real)
            if i != j:
                put(0, i, size + j, constant.imag)
                put(0, j, size + i, -constant.imag)
                for var, coef in coefficients.items():
                    put(var, i, size + j, -coef.imag)
                    put(var, j, size + i, coef.imag)
    return 2 * size if realified else size


def is_real_problem(problem: "MomentProblem") -> bool:
    values = list(problem.objective.values()) + [v for _, v in problem.equalities]
    values += [c for poly in problem.inequalities for c in poly.values()]
    return all(abs(complex(v).imag) <= 1e-15 for v in values)


def operator_norms(problem: "MomentProblem") -> Dict[Letter, float]:
    """
    Operator-norm bound of every letter: 1 for projectors, sqrt(c) for an
    operator L constrained by c - L*L >= 0 or c - LL* >= 0, inf otherwise.
    """
    norms = {l: 1.0 if l.hermitian else np.inf for l in problem.letters}
    for polynomial in problem.inequalities:
        if len(polynomial) != 2 or IDENTITY not in polynomial:
            continue
        word, coef = next((w, c) for w, c in polynomial.items() if w != IDENTITY)
        bound = complex(polynomial[IDENTITY]).real
        if len(word) != 2 or word[0] != word[1].dagger() or abs(complex(coef) + 1) > 1e-12 or bound < 0:
            continue
        for letter in (word[1], word[1].dagger()):
            norms[letter] = min(norms.get(letter, np.inf), math.sqrt(bound))
    return norms


def _moment_bound(word: Word, norms: Mapping[Letter, float]) -> float:
    return float(np.prod([1.0 if l.hermitian else norms.get(l, np.inf) for l in word]))


def relax(problem: "MomentProblem", level: Union[int, str] = 2, real_moments: Optional[bool] = None,
          slack: float = 0.0) -> Relaxation:
    """
    NPA relaxation of a moment problem into SDPA primal form.

    `real_moments` restricts moments to real values, which is exact whenever all
    problem data are real (the complex conjugate of any feasible moment matrix
    is feasible with the same objective). Otherwise every moment matrix is
    realified as [[Re, -Im], [Im, Re]].

    With `slack` > 0 every equality <w> = v except <1> = 1 becomes the window
    |<w> - v| <= slack, written as an extra diagonal block. The feasible set only
    grows, so the relaxation stays a lower bound.
    """
    if slack < 0:
        raise ValueError(f"Equality slack must be nonnegative, got {slack}.")
    if real_moments is None:
        real_moments = is_real_problem(problem)
    elif real_moments and not is_real_problem(problem):
        raise ValueError("Real moments require real objective and constraint data.")

    depth, basis = level_monomials(problem.letters, level)
    objective_words = [canonical(w) for w in problem.objective]
    basis = support_monomials(basis, [w for w in objective_words if w is not None])
    localizing_words: List[Word] = []
    provisional = MomentMatrixSpec(depth, basis, {}, {}, {})
    localizing = localizing_constraints(provisional, problem.inequalities, problem.letters)
    for block in localizing:
        localizing_words.extend(w for terms in block.cells.values() for _, w in terms if w is not None)
    spec = moment_matrix(basis, problem.equalities, level=depth, known=localizing_words)

    pinned = {IDENTITY: spec.fixed[IDENTITY]} if slack else spec.fixed
    assembler = _Assembler(pinned, real_moments)
    entries: Dict[Tuple[int, int, int, int], float] = {}
    block_sizes = [_emit_block(entries, assembler, 0, spec.size,
                               {cell: [(1.0, word)] for cell, word in spec.cells.items()})]
    for b, block in enumerate(localizing, start=1):
        block_sizes.append(_emit_block(entries, assembler, b, len(block.basis), block.cells))
    if slack:
        block, row = len(block_sizes), 0
        for key, value in spec.fixed.items():
            if key == IDENTITY:
                continue
            coefficients, _ = assembler.expression(key)
            for var, coef in coefficients.items():
                target = value.real if complex(coef).imag == 0 else value.imag
                # x - (v - slack) >= 0 and (v + slack) - x >= 0.
                for sign in (1.0, -1.0):
                    entries[(var, block, row, row)] = sign
                    entries[(0, block, row, row)] = sign * target - slack
                    row += 1
        if row:
            block_sizes.append(row)

    coefficients, constant = assembler.combination([(coef, canonical(w)) for w, coef in problem.objective.items()])
    m = len(assembler.index)
    c = np.zeros(m)
    for var, coef in coefficients.items():
        if abs(coef.imag) > 1e-12:
            raise ValueError(f"Objective is not real-valued: variable {var} has imaginary weight {coef.imag}.")
        c[var - 1] = coef.real
    if abs(complex(constant).imag) > 1e-12:
        raise ValueError("Objective constant is not real.")

    sdp = SdpProblem.from_entries(tuple(block_sizes), c, [(k[0], k[1], k[2], k[3], v) for k, v in entries.items()],
                                  constant=complex(constant).real)
    variables = sorted(assembler.index, key=assembler.index.get)
    norms = operator_norms(problem)
    bounds = np.array([_moment_bound(key, norms) for key, _ in variables])
    logger.debug(f"Relaxation level {level}: basis {spec.size}, {m} variables, blocks {block_sizes}")
    return Relaxation(sdp=sdp, spec=spec, localizing=localizing, variables=variables, real_moments=real_moments,
                      bounds=bounds, slack=slack)


def strategy_moment_matrix(basis: Sequence[Word], operators: Mapping[Letter, np.ndarray], state: np.ndarray) -> np.ndarray:
    """Evaluates Gamma on an explicit strategy: a state vector and one matrix per letter."""
    def matrix(word: Word) -> np.ndarray:
        dim = state.shape[0]
        result = np.eye(dim, dtype=complex)
        for letter in word:
            op = operators[replace(letter, adjoint=False)] if letter.kind == OPERATOR else operators[letter]
            result = result @ (op.conj().T if letter.adjoint else op)
        return result

    vectors = [matrix(w) @ state for w in basis]
    return np.array([[np.vdot(u, v) for v in vectors] for u in vectors])


# --- Entropy Bounds ---

@dataclass(frozen=True)
class EntropyBound:
    """
    `raw` is c_m plus the per-node values before clamping to [0, 1]. `certified`
    is False when some node fell back to an uncorrected dual objective.
    """
    value: float
    raw: float
    solutions: Tuple[SdpSolution, ...]
    values: Tuple[float, ...] = ()
    certified: bool = True


def _certified_value(solution: SdpSolution, sdp: SdpProblem, bounds: Sequence[float]) -> Tuple[float, bool]:
    """
    Lower bound read off the solver's dual point with the dual residual charged
    against the moment bounds, and whether it is certified.

    A converged solve whose residual falls on unbounded moments reports its plain
    dual objective, flagged uncertified.
    """
    if solution.status == "infeasible":
        raise SolverError("SDP is infeasible", solution)
    value = certified_bound(sdp, solution.Y, bounds)
    if math.isfinite(value):
        if solution.status != "optimal":
            logger.debug(f"Certified {value:.9f} from a {solution.status} dual point "
                         f"(dual objective {solution.dual_objective:.9f}).")
        return value, True
    if solution.status in ("optimal", "near-optimal"):
        logger.warning(f"Dual residual {solution.dual_residual:.2e} meets an unbounded moment; "
                       f"using the uncertified dual objective.")
        return solution.dual_objective, False
    raise SolverError(f"SDP solve failed with status {solution.status}", solution)


def _solve_part(part: "MomentProblem", level: Union[int, str], tol: Optional[float],
                real_moments: Optional[bool]) -> Tuple[float, bool, SdpSolution]:
    """
    Solves one relaxation. A solve that does not converge is repeated with the
    behavior equalities widened by EQUALITY_SLACK, and the better of the two
    bounds is kept, certified ones first.
    """
    relaxation = relax(part, level, real_moments)
    solution = solve_sdp(relaxation.sdp, tol=tol)
    if solution.status == "optimal":
        return (*_certified_value(solution, relaxation.sdp, relaxation.bounds), solution)

    slack = config.EQUALITY_SLACK
    logger.info(f"SDP stopped with status {solution.status} after {solution.iterations} iterations; "
                f"retrying with equalities widened to +-{slack:.1e}.")
    widened = relax(part, level, real_moments, slack=slack)
    retry = solve_sdp(widened.sdp, tol=tol)
    results = []
    for attempt, source in ((solution, relaxation), (retry, widened)):
        try:
            results.append((*_certified_value(attempt, source.sdp, source.bounds), attempt))
        except SolverError as e:
            logger.debug(f"Discarding attempt: {e}")
    if not results:
        raise SolverError(f"SDP solve failed with status {retry.status}", retry)
    certified = [r for r in results if r[1]]
    return max(certified or results, key=lambda r: r[0])


def bff_entropy_details(problem: "MomentProblem", level: Union[int, str] = "1+AB+AZ", tol: Optional[float] = None,
                        decompose: bool = True, real_moments: Optional[bool] = None) -> EntropyBound:
    from core.bff import split_by_node

    parts = split_by_node(problem) if decompose else [problem]
    raw = problem.constant
    values, solutions = [], []
    certified = True
    for k, part in enumerate(parts):
        value, sound, solution = _solve_part(part, level, tol, real_moments)
        logger.debug(f"Quadrature node part {k}: value {value:.9f} ({solution.status}, {solution.iterations} iterations)")
        raw += value
        values.append(value)
        solutions.append(solution)
        certified = certified and sound

    value = raw
    if value < 0:
        if value < -1e-6:
            logger.warning(f"Entropy bound {value:.3e} is negative (relaxation slack); clamping to 0.")
        value = 0.0
    if value > 1:
        logger.warning(f"Entropy bound {value:.6f} exceeds one bit; clamping to 1.")
        value = 1.0
    return EntropyBound(value=value, raw=raw, solutions=tuple(solutions), values=tuple(values), certified=certified)


def bff_entropy_bound(problem: "MomentProblem", level: Union[int, str] = "1+AB+AZ", tol: Optional[float] = None,
                      decompose: bool = True, real_moments: Optional[bool] = None) -> float:
    """
    Lower bound on H(A|X=x*, E) in bits.

    Each quadrature node is solved as its own SDP (the infimum of a sum is at
    least the sum of infima). Every node value is the dual objective minus the
    dual residual weighted by the moment bounds, which is a valid lower bound
    for any dual point the solver stops at. See `bff_entropy_details` for
    whether every node could be certified that way.
    """
    return bff_entropy_details(problem, level, tol, decompose, real_moments).value
