"""Offline set computations: unrecoverable sets, reach sets and O-infinity.

``X_k`` collects the states from which every admissible control sequence
enters the exclusion zone ``X_0`` within ``k`` steps.  The recursion

    X_k = X_0  U  A^{-1} (X_{k-1} ~ B U)

is evaluated with the union algebra of :mod:`action_governor.polytope`,
restricted to the operating box: every preimage is clipped to it, which keeps
the sequence increasing and stops far-away slivers from growing under ``A^{-1}``.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import OriginNotInU, UnstableClosedLoop
from .optimize import LinConstraintSet, Status, solve_lp
from .polytope import (
    EPS_MEM,
    PolyUnion,
    Polytope,
    affine_preimage,
    intersect_union,
    linear_image,
    minkowski_sum,
    prune,
    region_diff,
    set_equal,
    union_pdiff,
)
from .system import LinearSystem

log = logging.getLogger(__name__)

K_MAX = 50
REACH_HORIZON = 20
EPS_SS = 1e-6
ORACLE_GRID = 21


@dataclass
class UnrecoverableSeq:
    """``sets[k]`` is ``X_k``; ``K`` is the last index computed."""

    sets: list
    converged: bool
    K: int

    def __post_init__(self):
        if len(self.sets) != self.K + 1:
            raise ValueError("sets must hold X_0 ... X_K")

    @property
    def last(self) -> PolyUnion:
        return self.sets[-1]

    def unsafe(self, kprime: int | None = None) -> PolyUnion:
        """``X_{k'}``, clamped to the last computed index."""
        if kprime is None or kprime > self.K:
            return self.sets[-1]
        return self.sets[kprime]

    def to_dict(self, system_hash: str = "") -> dict:
        return {
            "kind": "unrecoverable",
            "K": self.K,
            "converged": self.converged,
            "system_hash": system_hash,
            "sets": [S.to_dict() for S in self.sets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnrecoverableSeq":
        if d.get("kind") != "unrecoverable":
            raise ValueError("not an unrecoverable-set file")
        sets = [PolyUnion.from_dict(s) for s in d["sets"]]
        return cls(sets, bool(d["converged"]), int(d["K"]))


def system_hash(sys: LinearSystem, X0: Polytope, U: Polytope) -> str:
    """Digest of everything the unrecoverable sets depend on."""
    payload = {
        "A": sys.A.tolist(),
        "B": sys.B.tolist(),
        "X0": X0.to_dict(),
        "U": U.to_dict(),
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def step_unrecoverable(X_prev: PolyUnion, X0: Polytope, sys: LinearSystem, U: Polytope,
                       BU: Polytope | None = None, domain: Polytope | None = None) -> PolyUnion:
    """One step of the recursion, clipped to ``domain`` (default: operating box).

    ``BU`` may be passed to avoid recomputation.
    """
    sys.check_invertible()
    if BU is None:
        BU = linear_image(sys.B, U)
    if domain is None:
        domain = Polytope.operating_box(sys.n)
    G = union_pdiff(X_prev, BU)
    pre = intersect_union(affine_preimage(sys.A, G), domain)
    parts = [X0] if not X0.is_empty() else []
    return PolyUnion(prune(parts + list(pre.parts)), dim=sys.n)


def compute_unrecoverable(X0: Polytope, sys: LinearSystem, U: Polytope,
                          k_max: int = K_MAX, domain: Polytope | None = None) -> UnrecoverableSeq:
    """Iterate the recursion until two consecutive sets coincide or ``k_max``."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    sys.check_invertible()
    BU = linear_image(sys.B, U)
    if domain is None:
        domain = Polytope.operating_box(sys.n)
    sets = [PolyUnion([X0], dim=sys.n)]
    converged = False
    for k in range(1, k_max + 1):
        Xk = step_unrecoverable(sets[-1], X0, sys, U, BU, domain)
        sets.append(Xk)
        log.debug("X_%d: %d parts", k, len(Xk))
        # X_{k-1} is inside X_k by construction; test the other direction first
        if set_equal(Xk, sets[-2]):
            converged = True
            break
    return UnrecoverableSeq(sets, converged, len(sets) - 1)


@dataclass
class ReachSet:
    R_trunc: Polytope
    horizon: int


def reach_trunc(sys: LinearSystem, U: Polytope, horizon: int = REACH_HORIZON) -> ReachSet:
    """``BU + A BU + ... + A^h BU``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not U.contains(np.zeros(U.dim), "closure"):
        raise OriginNotInU("the control set must contain the origin")
    BU = linear_image(sys.B, U)
    R = BU
    term = BU
    for _ in range(horizon):
        term = linear_image(sys.A, term)
        R = minkowski_sum(R, term)
    return ReachSet(R, horizon)


class FiniteDeterminationCheck(NamedTuple):
    holds: bool
    converged: bool
    truncated: bool = True

    def __bool__(self):
        return self.holds


def check_prop5(R: ReachSet, seq: UnrecoverableSeq, kprime: int) -> FiniteDeterminationCheck:
    """Whether the truncated reach set misses ``X_last \\ X_{k'}``.

    With a truncated ``R`` (or an unconverged sequence) a true verdict is
    necessary evidence only.
    """
    if not seq.converged:
        log.warning("unrecoverable sequence not converged; X_K stands in for X_inf")
    gap = region_diff(seq.last, seq.unsafe(kprime))
    hit = intersect_union(gap, R.R_trunc)
    return FiniteDeterminationCheck(hit.is_empty(), seq.converged)


# ---------------------------------------------------------------------------
# maximal output-admissible set
# ---------------------------------------------------------------------------

@dataclass
class OinfSet:
    """Constraint rows over stacked ``(x, v)`` for a frozen reference ``v``."""

    cons: LinConstraintSet
    determined: bool
    Acl: np.ndarray
    Bcl: np.ndarray
    t_star: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.Acl.shape[0]

    def contains(self, x, v, tol: float = EPS_MEM) -> bool:
        z = np.concatenate([np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(v, float))])
        return bool(np.all(self.cons.A @ z <= self.cons.b + tol))

    def step(self, x, v) -> np.ndarray:
        return self.Acl @ np.asarray(x, float) + self.Bcl @ np.atleast_1d(np.asarray(v, float))

    def state_slice(self, v) -> Polytope:
        """``{x : (x, v) in O_inf}`` for a fixed reference."""
        v = np.atleast_1d(np.asarray(v, float))
        A = self.cons.A
        return Polytope(A[:, :self.n], self.cons.b - A[:, self.n:] @ v, dim=self.n)

    def to_dict(self) -> dict:
        return {
            "kind": "oinf",
            "A": self.cons.A.tolist(),
            "b": self.cons.b.tolist(),
            "determined": self.determined,
            "Acl": self.Acl.tolist(),
            "Bcl": self.Bcl.tolist(),
            "t_star": self.t_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OinfSet":
        Acl = np.atleast_2d(np.asarray(d["Acl"], float))
        Bcl = np.asarray(d["Bcl"], float).reshape(Acl.shape[0], -1)
        A = np.asarray(d["A"], float).reshape(-1, Acl.shape[0] + Bcl.shape[1])
        return cls(LinConstraintSet(A, np.asarray(d["b"], float)), bool(d["determined"]),
                   Acl, Bcl, int(d.get("t_star", 0)))


def _redundant(row, rhs, cons: LinConstraintSet) -> bool:
    res = solve_lp(-row, cons)
    return res.kind is Status.OPTIMAL and -res.value <= rhs + 1e-9 * (1 + abs(rhs))


def compute_oinf(Acl, Bcl, rows: LinConstraintSet, t_max: int = 100,
                 eps_ss: float = EPS_SS) -> OinfSet:
    """Maximal output-admissible set of ``x+ = Acl x + Bcl v`` with constant ``v``.

    Rows ``C (x, v) <= d`` are propagated through the lifted dynamics until a
    whole batch is redundant.  A steady-state row set tightened by ``eps_ss``
    makes the construction finitely determined.
    """
    Acl = np.atleast_2d(np.asarray(Acl, float))
    n = Acl.shape[0]
    Bcl = np.asarray(Bcl, float).reshape(n, -1)
    p = Bcl.shape[1]
    rho = max(abs(np.linalg.eigvals(Acl)))
    if rho >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rho:.6g} >= 1")
    C = np.asarray(rows.A, float).reshape(-1, n + p)
    d = np.asarray(rows.b, float)
    if len(C) == 0:
        return OinfSet(LinConstraintSet(C, d), True, Acl, Bcl, 0)
    Phi = np.block([[Acl, Bcl], [np.zeros((p, n)), np.eye(p)]])
    Xss = np.linalg.solve(np.eye(n) - Acl, Bcl)
    Hss = np.vstack([Xss, np.eye(p)])
    A_rows = [C @ Hss @ np.hstack([np.zeros((p, n)), np.eye(p)]), C]
    b_rows = [d - eps_ss, d]
    cur = LinConstraintSet(np.vstack(A_rows), np.concatenate(b_rows))
    M = C
    for t in range(1, t_max + 1):
        M = M @ Phi
        fresh = [i for i in range(len(M)) if not _redundant(M[i], d[i], cur)]
        if not fresh:
            return OinfSet(cur, True, Acl, Bcl, t - 1)
        cur = LinConstraintSet(np.vstack([cur.A, M[fresh]]), np.concatenate([cur.b, d[fresh]]))
    log.warning("O_inf not determined after %d steps", t_max)
    return OinfSet(cur, False, Acl, Bcl, t_max)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def u_grid_box(U: Polytope, points: int = ORACLE_GRID) -> np.ndarray:
    """Tensor grid over the bounding box of ``U`` restricted to ``U``."""
    lo, hi = U.bbox()
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, U.dim)
    return G[U.contains_many(G, "closure", 1e-12)]


def oracle_unrecoverable(x0, depth: int, u_grid, X0: Polytope, sys: LinearSystem) -> bool:
    """True iff every grid control sequence of length ``depth`` enters ``X0``.

    Depth-first with early exit on the first escaping sequence.  Membership in
    ``X0`` is the raw strict test ``G x < g`` without tolerance.
    """
    u_grid = np.atleast_2d(np.asarray(u_grid, float))
    steps = u_grid @ sys.B.T
    G, g = X0.A, X0.b

    def in_x0(X):
        return np.all(X @ G.T < g, axis=1)

    def escapes(x, d):
        succ = sys.A @ x + steps
        alive = succ[~in_x0(succ)]
        if len(alive) == 0:
            return False
        if d == 1:
            return True
        # try successors farthest from the zone first
        slack = np.max(alive @ G.T - g, axis=1)
        for y in alive[np.argsort(-slack, kind="stable")]:
            if escapes(y, d - 1):
                return True
        return False

    x0 = np.asarray(x0, float).reshape(-1)
    if in_x0(x0[None])[0]:
        return True
    if depth == 0:
        return False
    return not escapes(x0, depth)
