import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg

from config import get_logger
from core.measurements import BehaviorTable, parity_coarse_grain
from core.npa import OPERATOR, Letter, Word, canonical, operator, projector

logger = get_logger(__name__)

DEFAULT_NODES = 4


# --- Quadrature ---

@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Radau rule on [0, 1] with the right endpoint t_m = 1 fixed as a node."""
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def c_m(self) -> float:
        t, w = self.nodes[:-1], self.weights[:-1]
        return float(np.sum(w / (t * math.log(2))))

    @property
    def alphas(self) -> np.ndarray:
        """Operator-norm bounds 3/2 max(1/t, 1/(1-t)) for every node but the last."""
        t = self.nodes[:-1]
        return 1.5 * np.maximum(1 / t, 1 / (1 - t))

    def coefficient(self, i: int) -> float:
        return float(self.weights[i] / (self.nodes[i] * math.log(2)))

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f(self.nodes)))


@lru_cache(maxsize=None)
def _radau(m: int) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    # Golub-Welsch on the Legendre Jacobi matrix, last diagonal entry modified
    # so that x = 1 is an eigenvalue.
    k = np.arange(1, m)
    b = k / np.sqrt(4.0 * k * k - 1.0)
    J = np.diag(b[:-1], 1) + np.diag(b[:-1], -1) if m > 2 else np.zeros((1, 1))
    rhs = np.zeros(m - 1)
    rhs[-1] = b[-1] ** 2
    delta = scipy.linalg.solve(J - np.eye(m - 1), rhs)
    diagonal = np.zeros(m)
    diagonal[-1] = 1.0 + delta[-1]
    x, vectors = scipy.linalg.eigh_tridiagonal(diagonal, b)
    weights = 2.0 * vectors[0] ** 2
    order = np.argsort(x)
    t = (x[order] + 1.0) / 2.0
    w = weights[order] / 2.0
    t[-1] = 1.0
    return tuple(t.tolist()), tuple((w / w.sum()).tolist())


def gauss_radau(m: int = DEFAULT_NODES) -> QuadratureRule:
    """
    m-point Gauss-Radau rule on [0, 1] with t_m = 1.

    >>> rule = gauss_radau(2)
    >>> [round(float(t), 12) for t in rule.nodes], [round(float(w), 12) for w in rule.weights]
    ([0.333333333333, 1.0], [0.75, 0.25])
    """
    if m < 2:
        raise ValueError(f"Gauss-Radau needs at least 2 nodes, got m={m}.")
    t, w = _radau(m)
    nodes, weights = np.array(t), np.array(w)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


# --- Moment Problems ---

@dataclass(frozen=True)
class MomentProblem:
    """
    Noncommutative polynomial program: minimize constant + sum_w objective[w] <w>
    over states and operators, subject to <w> = value for every equality and
    every polynomial in `inequalities` being positive semidefinite.

    Commutation classes are the letters' parties; Eve's letters carry their own
    party index and the quadrature node as the last label entry.
    """
    letters: Tuple[Letter, ...]
    objective: Dict[Word, float]
    constant: float = 0.0
    equalities: Tuple[Tuple[Word, float], ...] = ()
    inequalities: Tuple[Dict[Word, float], ...] = ()
    nodes: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        alphabet = set(self.letters)
        words = list(self.objective) + [w for w, _ in self.equalities]
        words += [w for poly in self.inequalities for w in poly]
        for word in words:
            for letter in word:
                if letter not in alphabet:
                    raise ValueError(f"Letter {letter} is not in the problem alphabet.")
        for coef in self.objective.values():
            if isinstance(coef, complex) and abs(coef.imag) > 1e-12:
                raise ValueError("Objective coefficients must be real.")

    @property
    def parties(self) -> int:
        return len({l.party for l in self.letters if l.kind != OPERATOR})


def party_letters(parties: int) -> List[Letter]:
    """Outcome-0 projectors only; outcome 1 is I - M0 by completeness."""
    letters = [projector(0, x, name=f"A{x}") for x in (0, 1)]
    letters += [projector(1, y, name=f"B1_{y}") for y in (0, 1)]
    letters += [projector(k, 0, name=f"B{k}") for k in range(2, parties)]
    return letters


def eve_letters(parties: int, rule: QuadratureRule) -> List[Letter]:
    letters = []
    for i in range(rule.m - 1):
        for a in (0, 1):
            z = operator(parties, a, i, name=f"Z{a},{i}")
            letters += [z, z.dagger()]
    return letters


def _add(terms: Dict[Word, float], word: Tuple[Letter, ...], coef: float) -> None:
    w = canonical(word)
    if w is None or coef == 0.0:
        return
    terms[w] = terms.get(w, 0.0) + coef


def behavior_equalities(behavior: BehaviorTable, letters: List[Letter]) -> List[Tuple[Word, float]]:
    """
    One equality per nonempty party subset and setting choice: the probability
    that every party in the subset outputs 0.
    """
    n = behavior.parties
    settings = [(0, 1), (0, 1)] + [(0,)] * (n - 2)
    lookup = {(l.party, l.label[0]): l for l in letters if l.kind != OPERATOR}
    equalities = []
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            for choice in itertools.product(*(settings[k] for k in subset)):
                chosen = dict(zip(subset, choice))
                x, y = chosen.get(0, 0), chosen.get(1, 0)
                table = behavior.marginal(list(subset), x, y)
                value = float(table[(0,) * size])
                word = tuple(lookup[(k, chosen[k])] for k in subset)
                equalities.append((word, value))
    return equalities


def build_bff_problem(behavior: BehaviorTable, rule: QuadratureRule, x_star: int = 0,
                      coarse_grain: bool = True) -> MomentProblem:
    """
    Variational program bounding H(A | X = x_star, E).

    The objective is sum over nodes i < m of w_i / (t_i ln 2) times
    sum_a <M_a (Z + Z* + (1 - t_i) Z* Z) + t_i Z Z*>, with M_1 = I - M_0; the
    reported bound is c_m plus its infimum.

    With `coarse_grain`, Bobs 2..N-1 are merged into one device reporting their
    parity, which is all the parity-CHSH correlations depend on.
    """
    if x_star not in (0, 1):
        raise ValueError(f"x* must be 0 or 1, got {x_star}.")
    if coarse_grain and behavior.parties > 3:
        logger.debug(f"Merging Bobs 2..{behavior.parties - 1} into one parity device.")
        behavior = parity_coarse_grain(behavior)
    n = behavior.parties
    devices = party_letters(n)
    eve = eve_letters(n, rule)
    m0 = devices[x_star]

    objective: Dict[Word, float] = {}
    inequalities: List[Dict[Word, float]] = []
    alphas = rule.alphas
    for i in range(rule.m - 1):
        t = float(rule.nodes[i])
        coef = rule.coefficient(i)
        for a in (0, 1):
            z = operator(n, a, i, name=f"Z{a},{i}")
            zs = z.dagger()
            body = [((z,), 1.0), ((zs,), 1.0), ((zs, z), 1.0 - t)]
            for word, scale in body:
                if a == 0:
                    _add(objective, (m0,) + word, coef * scale)
                else:
                    _add(objective, word, coef * scale)
                    _add(objective, (m0,) + word, -coef * scale)
            _add(objective, (z, zs), coef * t)
            bound = float(alphas[i]) ** 2
            inequalities.append({(): bound, (zs, z): -1.0})
            inequalities.append({(): bound, (z, zs): -1.0})

    equalities = behavior_equalities(behavior, devices)
    logger.debug(f"BFF problem: N={n}, m={rule.m}, {len(devices) + len(eve)} letters, "
                 f"{len(equalities)} equalities, {len(inequalities)} localizing constraints")
    return MomentProblem(letters=tuple(devices + eve), objective=objective, constant=rule.c_m,
                         equalities=tuple(equalities), inequalities=tuple(inequalities),
                         nodes=tuple(range(rule.m - 1)))


def _node_of(word: Word) -> int:
    nodes = {l.label[-1] for l in word if l.kind == OPERATOR}
    if len(nodes) > 1:
        raise ValueError("Word couples two quadrature nodes; the problem does not decompose.")
    return nodes.pop() if nodes else -1


def split_by_node(problem: MomentProblem) -> List[MomentProblem]:
    """
    One subproblem per quadrature node. Terms without Eve letters go to the
    first subproblem; the constant stays with the caller.
    """
    if not problem.nodes:
        return [problem]
    first = problem.nodes[0]
    parts = []
    for node in problem.nodes:
        letters = tuple(l for l in problem.letters if l.kind != OPERATOR or l.label[-1] == node)
        objective = {w: c for w, c in problem.objective.items()
                     if _node_of(w) == node or (_node_of(w) == -1 and node == first)}
        inequalities = tuple(p for p in problem.inequalities
                             if {_node_of(w) for w in p} - {-1} == {node}
                             or ({_node_of(w) for w in p} == {-1} and node == first))
        parts.append(MomentProblem(letters=letters, objective=objective, constant=0.0,
                                   equalities=problem.equalities, inequalities=inequalities, nodes=(node,)))
    return parts
