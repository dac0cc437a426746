from dataclasses import dataclass, field
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse

from config import config, get_logger

logger = get_logger(__name__)

Status = Literal["optimal", "near-optimal", "infeasible", "max-iterations"]

# Step-length damping and the divergence scale used to read off infeasibility.
_STEP_FRACTION = 0.98
_DIVERGENCE = 1e6
_CERTIFICATE_TOL = 1e-7


class SolverError(RuntimeError):
    """Raised by callers that need a certified value the solve could not provide."""

    def __init__(self, message: str, solution: "SdpSolution") -> None:
        super().__init__(f"{message} (gap {solution.gap:.2e}, primal residual {solution.primal_residual:.2e}, "
                         f"dual residual {solution.dual_residual:.2e}, {solution.iterations} iterations)")
        self.solution = solution


@dataclass(frozen=True)
class SdpProblem:
    """
    SDPA primal form: minimize c.x + constant subject to sum_k F_k x_k - F_0 >= 0.

    The dual is: maximize <F_0, Y> + constant subject to <F_k, Y> = c_k, Y >= 0.
    Constraint matrices are block diagonal and stored sparsely as upper-triangle
    entries (matrix, block, row, col, value) with 0-based block and index values;
    matrix 0 is F_0.
    """
    block_sizes: Tuple[int, ...]
    c: np.ndarray
    matrix: np.ndarray
    block: np.ndarray
    row: np.ndarray
    col: np.ndarray
    value: np.ndarray
    constant: float = 0.0

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError(f"Block sizes must be positive, got {sizes}.")
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(-1))
        for name in ("matrix", "block", "row", "col"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float).reshape(-1))
        n = len(self.value)
        if any(len(getattr(self, name)) != n for name in ("matrix", "block", "row", "col")):
            raise ValueError("Entry arrays must have equal length.")
        if n:
            if self.matrix.min() < 0 or self.matrix.max() > self.m:
                raise ValueError(f"Matrix index out of range 0..{self.m}.")
            if self.block.min() < 0 or self.block.max() >= len(sizes):
                raise ValueError(f"Block index out of range 0..{len(sizes) - 1}.")
            limits = np.asarray(sizes)[self.block]
            if (self.row < 0).any() or (self.col >= limits).any():
                raise ValueError("Entry index outside its block.")
            if (self.row > self.col).any():
                raise ValueError("Entries must lie in the upper triangle (row <= col).")
        if not np.all(np.isfinite(self.c)) or not np.all(np.isfinite(self.value)):
            raise ValueError("Problem data must be finite.")

    @classmethod
    def from_entries(cls, block_sizes: Sequence[int], c: Sequence[float],
                     entries: Iterable[Tuple[int, int, int, int, float]], constant: float = 0.0) -> "SdpProblem":
        """Builds a problem from (matrix, block, row, col, value) tuples; duplicates are summed, zeros dropped."""
        merged = {}
        for mat, blk, i, j, v in entries:
            if i > j:
                i, j = j, i
            key = (int(mat), int(blk), int(i), int(j))
            merged[key] = merged.get(key, 0.0) + float(v)
        keys = sorted(k for k, v in merged.items() if v != 0.0)
        columns = list(zip(*keys)) if keys else [(), (), (), ()]
        return cls(tuple(block_sizes), np.asarray(c, dtype=float), *[np.asarray(col) for col in columns],
                   np.asarray([merged[k] for k in keys]), constant=float(constant))

    @property
    def m(self) -> int:
        return len(self.c)

    @property
    def n(self) -> int:
        return sum(self.block_sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.block_sizes)[:-1]]).astype(np.int64)

    def dense(self, k: int) -> np.ndarray:
        """F_k as a dense symmetric n x n matrix."""
        mask = self.matrix == k
        rows = self.offsets[self.block[mask]] + self.row[mask]
        cols = self.offsets[self.block[mask]] + self.col[mask]
        out = np.zeros((self.n, self.n))
        np.add.at(out, (rows, cols), self.value[mask])
        off = rows != cols
        np.add.at(out, (cols[off], rows[off]), self.value[mask][off])
        return out

    def entries(self) -> List[Tuple[int, int, int, int, float]]:
        return list(zip(self.matrix.tolist(), self.block.tolist(), self.row.tolist(), self.col.tolist(),
                        self.value.tolist()))


@dataclass(frozen=True)
class SdpSolution:
    status: Status
    primal_objective: float
    dual_objective: float
    x: np.ndarray
    Y: np.ndarray = field(repr=False)
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int

    @property
    def objective(self) -> float:
        return self.primal_objective

    @property
    def lower_bound(self) -> float:
        """Dual objective; `certified_bound` also charges the dual residual."""
        return self.dual_objective


def certified_bound(problem: SdpProblem, Y: np.ndarray, bounds: Sequence[float]) -> float:
    """
    Lower bound on c.x + constant over every x with F(x) >= 0 and |x_k| <= bounds[k].

    Y is projected onto the PSD cone first; what remains of the dual residual
    r = c - A(Y) is charged at |r_k| bounds[k]. Returns -inf when a nonzero
    residual meets an unbounded variable.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (problem.m,):
        raise ValueError(f"Expected {problem.m} variable bounds, got shape {bounds.shape}.")
    if Y.shape != (problem.n, problem.n):
        raise ValueError(f"Dual matrix has shape {Y.shape}, expected {(problem.n, problem.n)}.")
    w, V = np.linalg.eigh(_sym(Y))
    Y = (V * np.clip(w, 0.0, None)) @ V.T
    rows = problem.offsets[problem.block] + problem.row
    cols = problem.offsets[problem.block] + problem.col
    weights = problem.value * np.where(problem.row == problem.col, 1.0, 2.0) * Y[rows, cols]
    inner = np.bincount(problem.matrix, weights=weights, minlength=problem.m + 1)
    residual = np.abs(problem.c - inner[1:])
    charged = residual > 0
    if not np.all(np.isfinite(bounds[charged])):
        return -np.inf
    return float(inner[0] + problem.constant - residual[charged] @ bounds[charged])


def _step_length(M: np.ndarray, dM: np.ndarray) -> float:
    """Largest a with M + a dM >= 0 (infinite if dM keeps M positive)."""
    L = np.linalg.cholesky(M)
    W = scipy.linalg.solve_triangular(L, dM, lower=True)
    W = scipy.linalg.solve_triangular(L, W.T, lower=True)
    smallest = np.linalg.eigvalsh((W + W.T) / 2)[0]
    return np.inf if smallest >= 0 else -1.0 / smallest


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2


def _presolve(problem: SdpProblem) -> Tuple[Optional[SdpProblem], np.ndarray, bool]:
    """
    Drops blocks without free variables after checking they are PSD, and
    variables that appear in no constraint. Returns the reduced problem (None
    when no block has a free variable), the
    kept variable mask, and whether a constant block was found infeasible.
    """
    free = problem.matrix > 0
    active_blocks = sorted(set(problem.block[free].tolist()))
    for b in range(len(problem.block_sizes)):
        if b in active_blocks:
            continue
        size = problem.block_sizes[b]
        mask = (problem.block == b) & (problem.matrix == 0)
        F0 = np.zeros((size, size))
        np.add.at(F0, (problem.row[mask], problem.col[mask]), problem.value[mask])
        F0 = F0 + np.triu(F0, 1).T
        if np.linalg.eigvalsh(-F0)[0] < -config.PSD_TOL:
            logger.debug(f"Presolve: constant block {b} is not PSD.")
            return None, np.zeros(problem.m, dtype=bool), True

    used = np.zeros(problem.m, dtype=bool)
    used[problem.matrix[free] - 1] = True
    if not active_blocks:
        return None, used, False
    if active_blocks == list(range(len(problem.block_sizes))) and used.all():
        return problem, used, False

    block_map = {b: k for k, b in enumerate(active_blocks)}
    var_map = np.cumsum(used)
    keep = np.isin(problem.block, active_blocks) & ((problem.matrix == 0) | used[problem.matrix - 1])
    reduced = SdpProblem(
        tuple(problem.block_sizes[b] for b in active_blocks),
        problem.c[used],
        np.where(problem.matrix[keep] > 0, var_map[problem.matrix[keep] - 1], 0),
        np.array([block_map[b] for b in problem.block[keep].tolist()], dtype=np.int64),
        problem.row[keep], problem.col[keep], problem.value[keep], problem.constant,
    )
    return reduced, used, False


def _embed_dual(problem: SdpProblem, reduced: SdpProblem, Y: np.ndarray) -> np.ndarray:
    """Places a dual matrix of the presolved problem in the full block layout; dropped blocks get zero."""
    active = sorted(set(problem.block[problem.matrix > 0].tolist()))
    full = np.zeros((problem.n, problem.n))
    for k, b in enumerate(active):
        src, dst, size = reduced.offsets[k], problem.offsets[b], problem.block_sizes[b]
        full[dst:dst + size, dst:dst + size] = Y[src:src + size, src:src + size]
    return full


def _infeasible(problem: SdpProblem, iterations: int = 0) -> SdpSolution:
    return SdpSolution("infeasible", np.inf, -np.inf, np.zeros(problem.m), np.zeros((problem.n, problem.n)),
                       np.inf, np.inf, np.inf, iterations)


def solve_sdp(problem: SdpProblem, tol: Optional[float] = None, max_iter: Optional[int] = None) -> SdpSolution:
    """
    Dense primal-dual interior-point method (HKM direction, Mehrotra
    predictor-corrector) from an infeasible start.

    Never raises for numerical trouble: the status and residuals of the
    returned solution describe what happened.
    """
    tol = config.SDP_TOL if tol is None else tol
    max_iter = config.SDP_MAX_ITER if max_iter is None else max_iter

    reduced, used, infeasible = _presolve(problem)
    if infeasible:
        return _infeasible(problem)
    unused_cost = problem.c[~used]
    if np.any(np.abs(unused_cost) > 0):
        # A free variable with nonzero cost and no constraint makes the primal unbounded.
        logger.debug("Variable with nonzero cost appears in no constraint; problem is unbounded.")
        return _infeasible(problem)
    if reduced is None:
        return SdpSolution("optimal", problem.constant, problem.constant, np.zeros(problem.m),
                           np.zeros((problem.n, problem.n)), 0.0, 0.0, 0.0, 0)

    solution = _interior_point(reduced, tol, max_iter)
    if reduced is problem:
        return solution
    x = np.zeros(problem.m)
    x[used] = solution.x
    Y = _embed_dual(problem, reduced, solution.Y)
    return SdpSolution(solution.status, solution.primal_objective, solution.dual_objective, x, Y,
                       solution.primal_residual, solution.dual_residual, solution.gap, solution.iterations)


def _interior_point(problem: SdpProblem, tol: float, max_iter: int) -> SdpSolution:
    m, n = problem.m, problem.n
    c = problem.c
    F0 = problem.dense(0)
    D = np.stack([problem.dense(k) for k in range(1, m + 1)])
    Fmat = scipy.sparse.csr_matrix(D.reshape(m, n * n))

    def A(M: np.ndarray) -> np.ndarray:
        return Fmat @ M.reshape(-1)

    def A_adjoint(v: np.ndarray) -> np.ndarray:
        return (Fmat.T @ v).reshape(n, n)

    scale = max(1.0, float(np.abs(F0).max(initial=0.0)), float(np.abs(c).max(initial=0.0)))
    lam = 100.0 * scale
    x = np.zeros(m)
    X = lam * np.eye(n)
    Y = lam * np.eye(n)
    norm_F0 = np.linalg.norm(F0)
    norm_c = np.linalg.norm(c)

    status: Status = "max-iterations"
    p_res = d_res = gap = np.inf
    pobj = dobj = np.nan
    stalled = 0
    iteration = 0
    for iteration in range(1, max_iter + 1):
        P = A_adjoint(x) - F0 - X
        d = c - A(Y)
        pobj = float(c @ x)
        dobj = float(np.sum(F0 * Y))
        mu = float(np.sum(X * Y)) / n
        p_res = np.linalg.norm(P) / (1.0 + norm_F0)
        d_res = np.linalg.norm(d) / (1.0 + norm_c)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        logger.debug(f"iter {iteration}: pobj={pobj:.9e} dobj={dobj:.9e} p_res={p_res:.2e} d_res={d_res:.2e} gap={gap:.2e}")

        if p_res < tol and d_res < tol and gap < tol:
            status = "optimal"
            break
        # Dual objective diverging with bounded A(Y): Y is a Farkas certificate, the primal is infeasible.
        if dobj > _DIVERGENCE and np.abs(A(Y)).max() < _CERTIFICATE_TOL * dobj:
            status = "infeasible"
            break
        # Primal objective diverging to -inf along a direction that stays PSD: the dual is infeasible.
        if -pobj > _DIVERGENCE:
            direction = A_adjoint(x) / -pobj
            if np.linalg.eigvalsh(direction)[0] >= -_CERTIFICATE_TOL:
                status = "infeasible"
                break

        try:
            Xinv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(X), np.eye(n))
            Xinv = _sym(Xinv)
            T = np.matmul(np.matmul(Xinv, D), Y)
            B = _sym(np.asarray(Fmat @ T.reshape(m, n * n).T))
            factor = scipy.linalg.cho_factor(B)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            logger.debug(f"Numerical breakdown at iteration {iteration}.")
            break

        XinvPY = Xinv @ P @ Y

        def direction(Rc: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
            rhs = A(Rc - XinvPY) - d
            dx = scipy.linalg.cho_solve(factor, rhs)
            dX = P + A_adjoint(dx)
            dY = _sym(Rc - Xinv @ dX @ Y)
            return dx, dX, dY

        try:
            # Predictor.
            dx, dX, dY = direction(-Y)
            ap = min(1.0, _step_length(X, dX))
            ad = min(1.0, _step_length(Y, dY))
            mu_aff = float(np.sum((X + ap * dX) * (Y + ad * dY))) / n
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

            # Corrector.
            Rc = sigma * mu * Xinv - Y - Xinv @ dX @ dY
            dx, dX, dY = direction(Rc)
            ap = min(1.0, _STEP_FRACTION * _step_length(X, dX))
            ad = min(1.0, _STEP_FRACTION * _step_length(Y, dY))
        except np.linalg.LinAlgError:
            logger.debug(f"Lost positive definiteness at iteration {iteration}.")
            break

        x = x + ap * dx
        X = _sym(X + ap * dX)
        Y = _sym(Y + ad * dY)
        stalled = stalled + 1 if max(ap, ad) < 1e-10 else 0
        if stalled >= 5:
            logger.debug("Step lengths collapsed; stopping.")
            break
    else:
        iteration = max_iter

    if status not in ("optimal", "infeasible"):
        near = 1e3 * tol
        if p_res < near and d_res < near and gap < near:
            status = "near-optimal"
        elif max(abs(pobj), abs(dobj)) > _DIVERGENCE:
            status = "infeasible"
        else:
            status = "max-iterations"
        logger.debug(f"Solver stopped without full convergence: {status}")

    return SdpSolution(status, pobj + problem.constant, dobj + problem.constant, x, Y,
                       float(p_res), float(d_res), float(gap), iteration)
