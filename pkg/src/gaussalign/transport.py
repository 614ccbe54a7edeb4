"""Entropic-regularized optimal transport for batch matching.

Cost convention: lower is better. Callers that score candidate pairs by
similarity (inner products) negate before building a cost matrix.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InvalidInputError, NumericalError, SizeLimitError

# Above this value of max|C|/reg the exp kernel is at risk of over/underflow
# and sinkhorn() switches to log-domain updates automatically.
LOG_DOMAIN_RATIO = 500.0

# Hard cap for the factorial enumeration in exact_matching.
EXACT_MATCHING_MAX_SIZE = 10

_ENUM_CHUNK = 40320


def _as_cost_array(c):
    if isinstance(c, CostMatrix):
        return c.data
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"cost matrix must be 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("cost matrix contains non-finite entries")
    return arr


class CostMatrix:
    """Immutable b_x x b_y matrix of matching costs (lower = better)."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"cost matrix must be 2-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("cost matrix contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"CostMatrix(shape={self.data.shape})"


class Coupling:
    """Nonnegative b_x x b_y transport plan with prescribed marginals."""

    __slots__ = ("data", "row_mass", "col_mass")

    def __init__(self, data, row_mass, col_mass):
        arr = np.asarray(data, dtype=np.float64)
        rm = np.asarray(row_mass, dtype=np.float64)
        cm = np.asarray(col_mass, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError("coupling must be 2-D")
        if rm.shape != (arr.shape[0],) or cm.shape != (arr.shape[1],):
            raise InvalidInputError(
                f"marginal lengths {rm.shape}/{cm.shape} do not match "
                f"coupling shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("coupling contains non-finite entries")
        if np.any(arr < 0.0):
            raise InvalidInputError("coupling contains negative entries")
        arr = arr.copy()
        arr.setflags(write=False)
        self.data = arr
        self.row_mass = rm.copy()
        self.col_mass = cm.copy()

    @property
    def shape(self):
        return self.data.shape

    def marginal_violation(self):
        """Max absolute deviation of row/column sums from the prescribed masses."""
        row = np.max(np.abs(self.data.sum(axis=1) - self.row_mass))
        col = np.max(np.abs(self.data.sum(axis=0) - self.col_mass))
        return float(max(row, col))

    def __repr__(self):
        return f"Coupling(shape={self.data.shape})"


class Matching:
    """Hard source->target index map; injective when b_x <= b_y."""

    __slots__ = ("target_of",)

    def __init__(self, target_of, n_targets=None):
        arr = np.asarray(target_of, dtype=np.int64)
        if arr.ndim != 1:
            raise InvalidInputError("matching must be a 1-D index array")
        if arr.size and arr.min() < 0:
            raise InvalidInputError("matching contains negative target indices")
        if n_targets is not None:
            if arr.size and arr.max() >= n_targets:
                raise InvalidInputError(
                    f"matching targets exceed range [0, {n_targets})"
                )
            if arr.size <= n_targets and len(np.unique(arr)) != arr.size:
                raise InvalidInputError("matching is not injective")
        arr = arr.copy()
        arr.setflags(write=False)
        self.target_of = arr

    def __len__(self):
        return self.target_of.size

    def __getitem__(self, i):
        return int(self.target_of[i])

    def __eq__(self, other):
        if isinstance(other, Matching):
            return np.array_equal(self.target_of, other.target_of)
        return NotImplemented

    def __repr__(self):
        return f"Matching(size={self.target_of.size})"


@dataclass(frozen=True)
class SinkhornResult:
    coupling: Coupling
    converged: bool
    iterations: int
    max_violation: float


def sinkhorn(
    c,
    reg,
    max_iter=1000,
    tol=1e-6,
    row_mass=None,
    col_mass=None,
    log_domain=None,
    use_numba=None,
):
    """Approximately solve min <C, P> + reg * sum P log P over couplings.

    Parameters
    ----------
    c : CostMatrix or (b_x, b_y) array
    reg : float
        Entropic regularization strength, > 0.
    max_iter, tol : stopping rule; iteration ends when the max marginal
        violation drops below tol.
    row_mass, col_mass : optional prescribed marginals (strictly positive);
        default uniform 1/b_x and 1/b_y.
    log_domain : None for automatic selection (log-space updates whenever
        max|C|/reg exceeds LOG_DOMAIN_RATIO), or an explicit bool.
    use_numba : kernel backend override, None = module default.

    Returns
    -------
    SinkhornResult with the coupling, a convergence flag, the iteration
    count and the final marginal violation.
    """
    C = _as_cost_array(c)
    if reg <= 0.0:
        raise ConfigError(f"sinkhorn regularization must be positive, got {reg}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be >= 1, got {max_iter}")
    if tol <= 0.0:
        raise ConfigError(f"tol must be positive, got {tol}")
    bx, by = C.shape
    a = np.full(bx, 1.0 / bx) if row_mass is None else np.asarray(row_mass, float)
    b = np.full(by, 1.0 / by) if col_mass is None else np.asarray(col_mass, float)
    if a.shape != (bx,) or b.shape != (by,):
        raise InvalidInputError("marginal vectors do not match the cost shape")
    if np.any(a <= 0.0) or np.any(b <= 0.0) or not (
        np.all(np.isfinite(a)) and np.all(np.isfinite(b))
    ):
        raise InvalidInputError("marginals must be finite and strictly positive")
    if log_domain is None:
        ratio = float(np.max(np.abs(C))) / reg
        log_domain = ratio > LOG_DOMAIN_RATIO
    P, iters, converged, violation, status = kernels.sinkhorn_scaling(
        C, reg, a, b, max_iter, tol, log_domain, use_numba=use_numba
    )
    if status != kernels.STATUS_OK:
        raise NumericalError(
            "sinkhorn scaling over/underflowed in the exp kernel after "
            f"{iters} iterations; retry with log_domain=True",
            iterations=iters,
            reg=reg,
            max_abs_cost=float(np.max(np.abs(C))),
        )
    return SinkhornResult(
        coupling=Coupling(P, a, b),
        converged=converged,
        iterations=iters,
        max_violation=violation,
    )


def exact_matching(c):
    """Exact minimum-cost permutation by exhaustive enumeration.

    Only for square costs of size <= EXACT_MATCHING_MAX_SIZE. Ties break to
    the lexicographically smallest permutation.
    """
    C = _as_cost_array(c)
    bx, by = C.shape
    if bx != by:
        raise InvalidInputError(f"exact matching needs a square cost, got {C.shape}")
    if bx > EXACT_MATCHING_MAX_SIZE:
        raise SizeLimitError(
            f"exact matching enumerates {bx}! permutations; size {bx} exceeds "
            f"the guard ({EXACT_MATCHING_MAX_SIZE})"
        )
    rows = np.arange(bx)
    best_cost = np.inf
    best_perm = None
    perms = itertools.permutations(range(bx))
    while True:
        chunk = list(itertools.islice(perms, _ENUM_CHUNK))
        if not chunk:
            break
        arr = np.array(chunk, dtype=np.int64)
        costs = C[rows[None, :], arr].sum(axis=1)
        k = int(np.argmin(costs))
        if costs[k] < best_cost:
            best_cost = float(costs[k])
            best_perm = arr[k]
    return Matching(best_perm, n_targets=by)


def coupling_to_matching(p, use_numba=None):
    """Greedy hard matching: repeatedly take the largest remaining coupling
    entry whose row and column are both unassigned; ties break by (row, col).

    When b_x > b_y the columns run out and each leftover row falls back to
    its individually best column (not injective in that case).
    """
    P = p.data if isinstance(p, Coupling) else np.asarray(p, dtype=np.float64)
    if P.ndim != 2:
        raise InvalidInputError("coupling must be 2-D")
    if not np.all(np.isfinite(P)):
        raise InvalidInputError("coupling contains non-finite entries")
    target = kernels.greedy_assign(P, use_numba=use_numba)
    by = P.shape[1]
    return Matching(target, n_targets=by if P.shape[0] <= by else None)


def matching_cost(c, matching):
    """Total cost of a hard matching under cost matrix c."""
    C = _as_cost_array(c)
    t = matching.target_of if isinstance(matching, Matching) else np.asarray(matching)
    if t.shape != (C.shape[0],):
        raise InvalidInputError("matching length does not match the cost rows")
    return float(C[np.arange(C.shape[0]), t].sum())
