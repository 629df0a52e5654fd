"""Dense LP / convex QP kernel for tiny problems.

Every geometric operation in the package reduces to linear or quadratic
programs in a handful of variables (state dimension n <= 6, control
dimension m <= 2 in practice).  At this scale a dense tableau simplex and a
primal active-set QP written directly against numpy are both exact enough and
an order of magnitude faster than calling a general-purpose solver.

The LP is solved through its dual in standard form::

    min  c.z   s.t.  G z <= h          (primal, z free)
    min  h.y   s.t.  G^T y = -c, y >= 0 (dual, what the tableau works on)

The dual tableau has only ``dim`` rows, so each pivot is cheap, and the
primal optimum is recovered from the optimal basis by solving
``G_B z = h_B``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    InfeasibleProblem,
    NotPositiveDefinite,
    NumericalFailure,
    UnboundedDirection,
)

EPS_FEAS = 1e-8
EPS_OPT = 1e-9
_EPS_PIVOT = 1e-11
_EPS_RANK = 1e-10
_MAX_REFACTOR = 5


@dataclass(frozen=True, eq=False)
class LinConstraintSet:
    """Rows ``A[i] . z <= b[i]``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(len(b), -1) if len(b) else A.reshape(0, A.size)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"constraint shapes {A.shape} and {b.shape} disagree")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("constraint data contains NaN or Inf")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def __len__(self) -> int:
        return self.A.shape[0]

    @classmethod
    def free(cls, dim: int) -> "LinConstraintSet":
        return cls(np.zeros((0, dim)), np.zeros(0))

    def stack(self, A, b) -> "LinConstraintSet":
        A = np.asarray(A, dtype=float).reshape(-1, self.dim)
        return LinConstraintSet(np.vstack([self.A, A]), np.concatenate([self.b, np.ravel(b)]))

    def violation(self, z) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.max(self.A @ z - self.b))


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True, eq=False)
class SolveStatus:
    kind: Status
    point: np.ndarray | None = None
    value: float = np.nan

    @property
    def optimal(self) -> bool:
        return self.kind is Status.OPTIMAL


def _as_cons(cons, dim=None) -> LinConstraintSet:
    if isinstance(cons, LinConstraintSet):
        out = cons
    elif cons is None:
        out = LinConstraintSet.free(dim)
    else:
        out = LinConstraintSet(*cons)
    if dim is not None and out.dim != dim and len(out):
        raise DimensionMismatch(f"expected dimension {dim}, constraints have {out.dim}")
    if dim is not None and len(out) == 0 and out.dim != dim:
        out = LinConstraintSet.free(dim)
    return out


class _RankDeficient(Exception):
    pass


def _pivot(T, r, j):
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run_simplex(T, basis, n_enter, max_pivots):
    """Bland's-rule pivoting on tableau T (last row = reduced costs, last col = rhs).

    Returns True on optimality, False if the problem is unbounded.
    """
    p = T.shape[0] - 1
    for _ in range(max_pivots):
        red = T[p, :n_enter]
        cand = np.flatnonzero(red < -EPS_OPT)
        if cand.size == 0:
            return True
        j = cand[0]
        col = T[:p, j]
        rows = np.flatnonzero(col > _EPS_PIVOT)
        if rows.size == 0:
            return False
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        r = min(ties, key=lambda i: basis[i])
        _pivot(T, r, j)
        basis[r] = j
    raise NumericalFailure("simplex exceeded its pivot budget (cycling?)")


def _standard_form_lp(Aeq, beq, cost):
    """min cost.y s.t. Aeq y = beq, y >= 0 with Aeq of full row rank.

    Returns (status, basis) where basis lists the basic column of each row.
    """
    p, N = Aeq.shape
    sign = np.where(beq < 0, -1.0, 1.0)
    A = Aeq * sign[:, None]
    rhs = beq * sign
    T = np.zeros((p + 1, N + p + 1))
    T[:p, :N] = A
    T[:p, N:N + p] = np.eye(p)
    T[:p, -1] = rhs
    T[p, :N] = -A.sum(axis=0)
    T[p, -1] = -rhs.sum()
    basis = list(range(N, N + p))
    max_pivots = 50 * (N + p) + 100

    _run_simplex(T, basis, N, max_pivots)
    if -T[p, -1] > EPS_FEAS * (1.0 + np.abs(rhs).max(initial=0.0)):
        return Status.INFEASIBLE, None
    # drive remaining artificials out of the basis
    for r in range(p):
        if basis[r] >= N:
            nz = np.flatnonzero(np.abs(T[r, :N]) > 1e-9)
            if nz.size == 0:
                raise _RankDeficient()
            _pivot(T, r, nz[0])
            basis[r] = nz[0]

    cb = cost[basis]
    T[p, :N] = cost - cb @ T[:p, :N]
    T[p, N:N + p] = 0.0
    T[p, -1] = -cb @ T[:p, -1]
    for _ in range(_MAX_REFACTOR):
        if not _run_simplex(T, basis, N, max_pivots):
            return Status.UNBOUNDED, None
        # rebuild the tableau from the basis to shed accumulated round-off
        if _refactor(T, A, rhs, cost, basis):
            return Status.OPTIMAL, basis
    raise NumericalFailure("simplex tableau could not be stabilised")


def _refactor(T, A, rhs, cost, basis) -> bool:
    """Recompute T from the basis; True when it is still optimal and feasible."""
    p, N = A.shape
    try:
        X = np.linalg.solve(A[:, basis], np.hstack([A, rhs[:, None]]))
    except np.linalg.LinAlgError:
        raise NumericalFailure("singular simplex basis")
    xb = X[:, -1]
    if np.any(xb < -EPS_FEAS * (1.0 + np.abs(rhs).max(initial=0.0))):
        return True  # basis lost primal feasibility; keep the pivoted tableau
    T[:p, :N] = X[:, :N]
    T[:p, -1] = np.maximum(xb, 0.0)
    cb = cost[basis]
    T[p, :N] = cost - cb @ X[:, :N]
    T[p, -1] = -cb @ T[:p, -1]
    return not np.any(T[p, :N] < -EPS_OPT)


def _lp_full_rank(c, G, h):
    """LP with G of full column rank."""
    status, basis = _standard_form_lp(G.T, -c, h)
    if status is Status.OPTIMAL:
        z = np.linalg.solve(G[basis], h[basis])
        return Status.OPTIMAL, z
    if status is Status.UNBOUNDED:
        return Status.INFEASIBLE, None
    # dual infeasible: primal is unbounded or infeasible
    return (Status.UNBOUNDED if _is_feasible(G, h) else Status.INFEASIBLE), None


def _is_feasible(G, h) -> bool:
    k, d = G.shape
    Ga = np.zeros((k + 1, d + 1))
    Ga[:k, :d] = G
    Ga[:k, d] = -1.0
    Ga[k, d] = -1.0
    ha = np.append(h, 1.0)
    ca = np.zeros(d + 1)
    ca[d] = 1.0
    status, z = _lp_full_rank(ca, Ga, ha)
    if status is not Status.OPTIMAL:
        raise NumericalFailure("feasibility subproblem did not solve")
    return z[d] <= EPS_FEAS


def _lp_reduced(c, G, h):
    """Restrict to the row space of G so the reduced matrix has full column rank."""
    d = c.size
    _, s, Vt = np.linalg.svd(G, full_matrices=False)
    rank = int(np.sum(s > _EPS_RANK * max(s[0], 1.0)))
    if rank == 0:
        if np.any(h < -EPS_FEAS):
            return Status.INFEASIBLE, None
        if np.allclose(c, 0.0):
            return Status.OPTIMAL, np.zeros(d)
        return Status.UNBOUNDED, None
    V = Vt[:rank].T
    cr = V.T @ c
    Gr = G @ V
    if np.linalg.norm(c - V @ cr) > 1e-12 * (1.0 + np.linalg.norm(c)):
        return (Status.UNBOUNDED if _is_feasible(Gr, h) else Status.INFEASIBLE), None
    status, w = _lp_full_rank(cr, Gr, h)
    return status, (V @ w if w is not None else None)


def solve_lp(c, cons) -> SolveStatus:
    """Minimize ``c . z`` over ``cons``.

    Raises
    ------
    DimensionMismatch
        if ``c`` and ``cons`` disagree on the dimension.
    NumericalFailure
        if the pivot budget is exhausted.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    d = c.size
    cons = _as_cons(cons, d)
    G, h = cons.A, cons.b
    if len(cons) == 0:
        if np.allclose(c, 0.0):
            return SolveStatus(Status.OPTIMAL, np.zeros(d), 0.0)
        return SolveStatus(Status.UNBOUNDED)

    if len(cons) >= d:
        try:
            status, z = _lp_full_rank(c, G, h)
        except _RankDeficient:
            status, z = _lp_reduced(c, G, h)
    else:
        status, z = _lp_reduced(c, G, h)
    if status is not Status.OPTIMAL:
        return SolveStatus(status)
    return SolveStatus(Status.OPTIMAL, z, float(c @ z))


def support(cons, direction) -> float:
    """Return ``max direction . z`` over ``cons``.

    Raises
    ------
    InfeasibleProblem
        if ``cons`` is empty.
    UnboundedDirection
        if the maximum is infinite.
    """
    direction = np.asarray(direction, dtype=float).reshape(-1)
    res = solve_lp(-direction, cons)
    if res.kind is Status.INFEASIBLE:
        raise InfeasibleProblem("support of an empty set")
    if res.kind is Status.UNBOUNDED:
        raise UnboundedDirection(f"set is unbounded along {direction}")
    return -res.value


def check_pd(S) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12, rtol=1e-10):
        raise NotPositiveDefinite("weight matrix must be square and symmetric")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("weight matrix is not positive definite") from None
    return S


def _independent_subset(rows, candidates):
    chosen = []
    for i in candidates:
        trial = rows[chosen + [i]]
        if np.linalg.matrix_rank(trial, tol=1e-9) == len(chosen) + 1:
            chosen.append(i)
    return chosen


def solve_qp(S, target, cons) -> SolveStatus:
    """Minimize ``(z - target)' S (z - target)`` over ``cons``.

    Primal active-set method started from an LP vertex.  Blocking
    constraints and dropped constraints are chosen with the smallest index
    on ties so the iterate sequence is deterministic.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    d = target.size
    S = check_pd(S)
    if S.shape[0] != d:
        raise DimensionMismatch(f"weight is {S.shape}, target has {d} entries")
    cons = _as_cons(cons, d)
    G, h = cons.A, cons.b
    if len(cons) == 0 or np.all(G @ target <= h + EPS_FEAS):
        return SolveStatus(Status.OPTIMAL, target.copy(), 0.0)

    start = solve_lp(np.zeros(d), cons)
    if start.kind is Status.INFEASIBLE:
        return SolveStatus(Status.INFEASIBLE)
    z = start.point
    slack = h - G @ z
    W = _independent_subset(G, list(np.flatnonzero(np.abs(slack) <= EPS_FEAS)))
    H2 = 2.0 * S
    for _ in range(100 * (len(cons) + d) + 100):
        g = H2 @ (z - target)
        nw = len(W)
        # null-space step: exact zero once the working set spans R^d
        if nw:
            Aw = G[W]
            _, _, Vt = np.linalg.svd(Aw)
            Z = Vt[nw:].T
        else:
            Z = np.eye(d)
        if Z.shape[1]:
            step = Z @ np.linalg.solve(Z.T @ H2 @ Z, -(Z.T @ g))
        else:
            step = np.zeros(d)
        if nw:
            mu = np.linalg.lstsq(Aw.T, -(H2 @ step + g), rcond=None)[0]
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(z)):
            if nw == 0 or mu.min() >= -EPS_OPT:
                r = z - target
                return SolveStatus(Status.OPTIMAL, z, float(r @ S @ r))
            drop = int(np.argmin(mu))
            W.pop(drop)
            continue
        Gs = G @ step
        alpha, block = 1.0, None
        for i in np.flatnonzero(Gs > 1e-14):
            if i in W:
                continue
            a = (h[i] - G[i] @ z) / Gs[i]
            if a < alpha - 1e-15:
                alpha, block = max(a, 0.0), i
        z = z + alpha * step
        if block is not None:
            W.append(int(block))
    raise NumericalFailure("active-set QP did not converge")
