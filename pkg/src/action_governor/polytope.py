"""H-representation polytopes and finite unions of polytopes.

Rows are stored with unit-norm normals so every tolerance below is a
Euclidean distance.  Each row carries a ``strict`` flag (``a.x < b``) so open
sets such as an exclusion zone can be represented faithfully; all geometric
algorithms (hulls, sums, differences) operate on closures, and only the
membership test can honour strictness.

Sets of measure zero are treated as empty by the union algebra: a part with
no interior contributes nothing to ``region_diff`` or ``set_equal``.
"""
from __future__ import annotations

import itertools
import logging
from math import comb
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import DimensionMismatch, EmptyPolytope, SingularMatrix, UnboundedPolytope
from .optimize import LinConstraintSet, Status, solve_lp

log = logging.getLogger(__name__)

EPS_MEM = 1e-7
EPS_INT = 1e-7
M_BOX = 1e3

_EPS_ROW = 1e-12
_CHEB_CAP = 1e9
_MAX_COMBOS = 200_000
_FAST_COMBOS = 5_000


def _vtol(b) -> float:
    return 1e-9 + 1e-11 * float(np.abs(b).max(initial=0.0))


@lru_cache(maxsize=256)
def _combos(k: int, n: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(k), n)), dtype=np.intp).reshape(-1, n)


def _unique_points(V: np.ndarray, tol: float) -> np.ndarray:
    if len(V) <= 1:
        return V
    if len(V) <= 64:
        close = np.max(np.abs(V[:, None, :] - V[None, :, :]), axis=2) <= tol
        dup = np.any(np.tril(close, -1), axis=1)
        return V[~dup]
    keys = np.round(V / tol).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    V = V[np.sort(idx)]
    if len(V) <= 2000:
        keep = np.ones(len(V), dtype=bool)
        for i in range(len(V)):
            if keep[i]:
                close = np.max(np.abs(V[i + 1:] - V[i]), axis=1) <= tol
                keep[i + 1:][close] = False
        V = V[keep]
    return V


class Membership(NamedTuple):
    inside: bool
    witness_part: int | None = None

    def __bool__(self):
        return self.inside


class Polytope:
    """Convex polyhedron ``{x : A x <= b}`` with optional strict rows.

    Parameters
    ----------
    A, b : array_like
        Row data.  Rows are rescaled to unit norm; all-zero rows are dropped
        when trivially satisfied and kept as an infeasibility marker otherwise.
    strict : bool or array_like of bool, optional
        Marks open rows.
    bounded : bool, optional
        Construction-time hint that skips the boundedness LPs.
    """

    __slots__ = ("A", "b", "strict", "_bounded", "_vertices", "_empty", "_cheb", "_bbox")

    def __init__(self, A, b, strict=None, *, bounded=None, dim=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.size == 0:
            n = dim if dim is not None else (A.shape[1] if A.ndim == 2 else 0)
            A = np.zeros((0, n))
        A = np.atleast_2d(A)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"A has {A.shape[0]} rows, b has {b.shape[0]}")
        if strict is None or np.isscalar(strict):
            strict = np.full(len(b), bool(strict))
        strict = np.asarray(strict, dtype=bool).reshape(-1)
        if strict.shape[0] != b.shape[0]:
            raise DimensionMismatch("strict flags must match the row count")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("polytope data contains NaN or Inf")
        norms = np.linalg.norm(A, axis=1)
        zero = norms <= _EPS_ROW
        if np.any(zero):
            bad = zero & ((b < 0) | (strict & (b <= 0)))
            keep = ~zero | bad
            A, b, strict, norms = A[keep], b[keep], strict[keep], norms[keep]
            zero = zero[keep]
            norms = np.where(zero, 1.0, norms)
            b = np.where(zero, -1.0, b)
        A = A / norms[:, None]
        b = b / norms
        self.A = A
        self.b = b
        self.strict = strict
        self._bounded = bounded
        self._vertices = None
        self._empty = None
        self._cheb = None
        self._bbox = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_box(cls, lo, hi, strict=False) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        return cls(A, np.concatenate([hi, -lo]), strict, bounded=True)

    @classmethod
    def point(cls, p) -> "Polytope":
        p = np.asarray(p, dtype=float).reshape(-1)
        return cls.from_box(p, p)

    @classmethod
    def universe(cls, dim: int) -> "Polytope":
        return cls(np.zeros((0, dim)), np.zeros(0), bounded=False)

    @classmethod
    def operating_box(cls, dim: int, half_width: float = M_BOX) -> "Polytope":
        return cls.from_box(-half_width * np.ones(dim), half_width * np.ones(dim))

    # -- basic properties -----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def __len__(self) -> int:
        return self.A.shape[0]

    @property
    def cons(self) -> LinConstraintSet:
        return LinConstraintSet(self.A, self.b)

    def __repr__(self):
        return f"Polytope(dim={self.dim}, rows={len(self)}, strict={int(self.strict.sum())})"

    def copy_rows(self, A=None, b=None, strict=None, **hints) -> "Polytope":
        return Polytope(self.A if A is None else A, self.b if b is None else b,
                        self.strict if strict is None else strict, dim=self.dim, **hints)

    def __neg__(self) -> "Polytope":
        out = Polytope(-self.A, self.b, self.strict, bounded=self._bounded, dim=self.dim)
        if self._vertices is not None:
            out._vertices = -self._vertices
        return out

    def translate(self, d) -> "Polytope":
        d = np.asarray(d, dtype=float).reshape(-1)
        out = Polytope(self.A, self.b + self.A @ d, self.strict, bounded=self._bounded, dim=self.dim)
        if self._vertices is not None:
            out._vertices = self._vertices + d
        return out

    def intersect(self, other: "Polytope") -> "Polytope":
        _check_dim(self.dim, other.dim)
        bounded = True if (self._bounded or other._bounded) else None
        return Polytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]),
                        np.concatenate([self.strict, other.strict]), bounded=bounded, dim=self.dim)

    # -- membership -------------------------------------------------------------
    def _slack_bound(self, strictness: str, tol: float) -> np.ndarray:
        if strictness == "respect":
            return np.where(self.strict, self.b - tol, self.b + tol)
        if strictness == "closure":
            return self.b + tol
        raise ValueError(f"unknown strictness {strictness!r}")

    def contains(self, x, strictness: str = "closure", tol: float = EPS_MEM) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        _check_dim(self.dim, x.size)
        return bool(np.all(self.A @ x <= self._slack_bound(strictness, tol)))

    def contains_many(self, X, strictness: str = "closure", tol: float = EPS_MEM) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        bound = self._slack_bound(strictness, tol)
        return np.all(X @ self.A.T <= bound, axis=1)

    # -- LP-backed queries -------------------------------------------------------
    def is_empty(self) -> bool:
        if self._empty is None:
            if self._vertices is not None and len(self._vertices):
                self._empty = False
            elif self._bounded and _ncr(len(self), self.dim) <= _FAST_COMBOS:
                V = _enumerate_vertices(self.A, self.b)
                self._empty = len(V) == 0
                if len(V):
                    self._vertices = V
            else:
                self._empty = solve_lp(np.zeros(self.dim), self.cons).kind is Status.INFEASIBLE
        return self._empty

    def chebyshev(self) -> tuple[np.ndarray | None, float]:
        """Centre and radius of the largest inscribed ball (radius -inf when empty)."""
        if self._cheb is None:
            n = self.dim
            A = np.hstack([self.A, np.ones((len(self), 1))])
            cap = np.zeros((1, n + 1))
            cap[0, n] = 1.0
            c = np.zeros(n + 1)
            c[n] = -1.0
            res = solve_lp(c, LinConstraintSet(np.vstack([A, cap]), np.append(self.b, _CHEB_CAP)))
            if res.kind is Status.OPTIMAL:
                self._cheb = (res.point[:n], float(res.point[n]))
            else:
                self._cheb = (None, -np.inf)
            if self._cheb[1] < -_vtol(self.b):
                self._empty = True
            elif self._cheb[1] >= 0.0:
                self._empty = False
        return self._cheb

    def has_interior(self, eps: float = EPS_INT) -> bool:
        """Whether a ball of radius ``eps`` fits inside.

        The radius is padded by the vertex tolerance at this scale, so slivers
        below round-off of large coordinates do not count as interior.
        """
        eps = eps + _vtol(self.b)
        if self._cheb is None and self._bounded and _ncr(len(self), self.dim) <= _FAST_COMBOS:
            # the eps-shrunk polytope is bounded, so it is nonempty iff it has a vertex
            inner = len(_enumerate_vertices(self.A, self.b - eps)) > 0
            if inner:
                self._empty = False
            return inner
        return self.chebyshev()[1] > eps

    def is_bounded(self) -> bool:
        if self._bounded is None:
            if self.is_empty():
                self._bounded = True
            else:
                n = self.dim
                self._bounded = True
                for d in np.vstack([np.eye(n), -np.eye(n)]):
                    if solve_lp(-d, self.cons).kind is Status.UNBOUNDED:
                        self._bounded = False
                        break
        return self._bounded

    def vertices(self) -> np.ndarray:
        if self._vertices is None:
            if not self.is_bounded():
                raise UnboundedPolytope("vertex enumeration needs a bounded polytope")
            V = _enumerate_vertices(self.A, self.b, self)
            if len(V) == 0:
                self._empty = True
                raise EmptyPolytope("polytope has no vertices")
            self._vertices = V
            self._empty = False
        return self._vertices

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if self._bbox is None:
            V = self.vertices()
            self._bbox = (V.min(axis=0), V.max(axis=0))
        return self._bbox

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "strict": self.strict.tolist()}

    @classmethod
    def from_dict(cls, d: dict, dim: int | None = None) -> "Polytope":
        A = np.asarray(d["A"], dtype=float)
        if A.size == 0:
            A = np.zeros((0, dim if dim is not None else 0))
        return cls(A, d["b"], d.get("strict"), dim=dim)


def _check_dim(n, m):
    if n != m:
        raise DimensionMismatch(f"dimension {n} vs {m}")


def _enumerate_vertices(A, b, P=None) -> np.ndarray:
    k, n = A.shape
    if k < n:
        return np.zeros((0, n))
    tol = _vtol(b)
    n_combos = _ncr(k, n)
    if n_combos > _MAX_COMBOS and P is not None:
        return _vertices_qhull(P, tol)
    idx = _combos(k, n)
    if n == 2:
        # Cramer's rule; much cheaper than batched LAPACK calls for 2x2 systems
        i, j = idx[:, 0], idx[:, 1]
        a, c = A[i], A[j]
        det = a[:, 0] * c[:, 1] - a[:, 1] * c[:, 0]
        ok = np.abs(det) > 1e-12
        if not np.any(ok):
            return np.zeros((0, n))
        a, c, det = a[ok], c[ok], det[ok]
        bi, bj = b[i[ok]], b[j[ok]]
        V = np.column_stack([(bi * c[:, 1] - bj * a[:, 1]) / det, (a[:, 0] * bj - c[:, 0] * bi) / det])
    else:
        M = A[idx]
        ok = np.abs(np.linalg.det(M)) > 1e-12
        if not np.any(ok):
            return np.zeros((0, n))
        V = np.linalg.solve(M[ok], b[idx][ok][..., None])[..., 0]
    feas = np.all(V @ A.T <= b + tol, axis=1)
    V = V[feas]
    return _unique_points(V, 10 * tol)


def _ncr(k, n):
    return comb(k, n)


def _vertices_qhull(P: Polytope, tol) -> np.ndarray:
    center, r = P.chebyshev()
    if r <= EPS_INT:
        raise UnboundedPolytope("too many rows for exhaustive enumeration of a flat polytope")
    hs = HalfspaceIntersection(np.hstack([P.A, -P.b[:, None]]), center)
    return _unique_points(hs.intersections, 10 * tol)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def vertices(P: Polytope) -> np.ndarray:
    """Vertex set of the closure of ``P``."""
    return P.vertices()


def _dedupe_rows(P: Polytope) -> Polytope:
    """Merge rows with identical normals, keeping the tightest offset."""
    if len(P) < 2:
        return P
    keys = np.round(P.A * 1e10).astype(np.int64)
    order = np.lexsort(np.vstack([P.b, keys.T[::-1]]))
    keep = []
    strict = P.strict.copy()
    last = None
    for i in order:
        key = keys[i].tobytes()
        if key == last:
            j = keep[-1]
            if abs(P.b[i] - P.b[j]) <= _EPS_ROW * (1 + abs(P.b[j])):
                strict[j] = strict[j] or strict[i]
            continue
        keep.append(i)
        last = key
    if len(keep) == len(P):
        return P
    keep = sorted(keep)
    out = Polytope(P.A[keep], P.b[keep], strict[keep], bounded=P._bounded, dim=P.dim)
    out._vertices = P._vertices
    return out


def canonicalize(P: Polytope) -> tuple[Polytope, bool]:
    """Remove redundant rows.  Returns ``(P', empty)``."""
    if P.is_empty():
        return P, True
    P = _dedupe_rows(P)
    n = P.dim
    if len(P) <= 1:
        return P, False
    if P.is_bounded():
        V = P.vertices()
        if _affine_rank(V) == n:
            act = np.abs(V @ P.A.T - P.b) <= 10 * _vtol(P.b)
            keep = []
            for i in range(len(P)):
                Vi = V[act[:, i]]
                if len(Vi) >= n and (n <= 2 or _affine_rank(Vi) == n - 1):
                    keep.append(i)
            out = Polytope(P.A[keep], P.b[keep], P.strict[keep], bounded=True, dim=n)
            out._vertices = V
            out._empty = False
            return out, False
    # LP-based elimination (lower-dimensional or unbounded sets)
    keep = list(range(len(P)))
    for i in range(len(P)):
        others = [j for j in keep if j != i]
        res = solve_lp(-P.A[i], LinConstraintSet(P.A[others], P.b[others]))
        if res.kind is Status.OPTIMAL and -res.value <= P.b[i] + _vtol(P.b):
            keep = others
    out = Polytope(P.A[keep], P.b[keep], P.strict[keep], bounded=P._bounded, dim=n)
    out._vertices = P._vertices
    out._empty = False
    return out, False


def _affine_rank(V, tol=1e-9) -> int:
    if len(V) <= 1:
        return 0
    Y = V[1:] - V[0]
    s = np.linalg.svd(Y, compute_uv=False)
    scale = max(1.0, float(np.abs(V).max()))
    return int(np.sum(s > tol * scale))


def hull(points) -> Polytope:
    """Minimal H-representation of the convex hull of ``points``.

    Lower-dimensional hulls come back with pairs of opposite rows pinning the
    affine hull.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        raise EmptyPolytope("hull of no points")
    n = P.shape[1]
    scale = max(1.0, float(np.abs(P).max()))
    P = _unique_points(P, 1e-10 * scale)
    center = P.mean(axis=0)
    Y = P - center
    if len(P) == 1:
        out = Polytope.point(P[0])
        out._vertices = P
        return out
    _, s, Vt = np.linalg.svd(Y, full_matrices=True)
    r = int(np.sum(s > 1e-9 * scale))
    while True:
        basis, comp = Vt[:r], Vt[r:]
        W = Y @ basis.T
        try:
            Aw, bw, vidx = _hull_in_subspace(W)
            break
        except QhullError:
            r -= 1
    A = Aw @ basis
    b = bw + A @ center
    if len(comp):
        A = np.vstack([A, comp, -comp])
        b = np.concatenate([b, comp @ center, -(comp @ center)])
    out = Polytope(A, b, bounded=True, dim=n)
    out._vertices = P[vidx] if r == n else None
    out._empty = False
    if r < n:
        out._vertices = _unique_points(P[vidx], 1e-10 * scale)
    return out


def _hull_in_subspace(W):
    """Hull of points in R^r (r = W.shape[1]); returns (A, b, vertex indices)."""
    r = W.shape[1]
    if r == 0:
        return np.zeros((0, 0)), np.zeros(0), np.array([0])
    if r == 1:
        w = W[:, 0]
        i, j = int(np.argmax(w)), int(np.argmin(w))
        return np.array([[1.0], [-1.0]]), np.array([w[i], -w[j]]), np.array(sorted({i, j}))
    h = ConvexHull(W)
    eq = h.equations
    keys = np.round(eq * 1e9).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    eq = eq[np.sort(first)]
    return eq[:, :r], -eq[:, r], h.vertices


def linear_image(M, P: Polytope) -> Polytope:
    """Image ``{M x : x in P}`` of a bounded polytope."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _check_dim(M.shape[1], P.dim)
    return hull(P.vertices() @ M.T)


def minkowski_sum(P: Polytope, Q: Polytope) -> Polytope:
    _check_dim(P.dim, Q.dim)
    VP, VQ = P.vertices(), Q.vertices()
    return hull((VP[:, None, :] + VQ[None, :, :]).reshape(-1, P.dim))


def pdiff(P: Polytope, Q: Polytope) -> Polytope:
    """Pontryagin difference ``{x : x + q in P for all q in Q}``."""
    _check_dim(P.dim, Q.dim)
    VQ = Q.vertices()
    shift = np.max(P.A @ VQ.T, axis=1) if len(P) else np.zeros(0)
    out = Polytope(P.A, P.b - shift, P.strict, bounded=P._bounded, dim=P.dim)
    out, _ = canonicalize(out)
    return out


def _check_invertible(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise SingularMatrix("preimage map must be square")
    if 1.0 / np.linalg.cond(A) < 1e-12:
        raise SingularMatrix("preimage map is singular")
    return A


def affine_preimage(A, S: "PolyUnion | Polytope"):
    """``{x : A x in S}`` for invertible ``A``; rows (g, h) become (g A, h)."""
    A = _check_invertible(A)
    Ainv = np.linalg.inv(A)

    def one(P):
        out = Polytope(P.A @ A, P.b, P.strict, bounded=P._bounded, dim=P.dim)
        if P._vertices is not None:
            out._vertices = P._vertices @ Ainv.T
            out._empty = False
        return out

    if isinstance(S, Polytope):
        return one(S)
    return PolyUnion([one(P) for P in S.parts], dim=S.dim)


# ---------------------------------------------------------------------------
# unions
# ---------------------------------------------------------------------------

class PolyUnion:
    """Finite union of polytopes of a common dimension.

    The empty list denotes the empty set.  Parts that are empty (or, with
    ``drop_flat=True``, without interior) are discarded on construction.
    """

    def __init__(self, parts: Iterable[Polytope] = (), dim: int | None = None, *, drop_flat=False):
        parts = list(parts)
        if dim is None:
            if not parts:
                raise DimensionMismatch("dimension required for an empty union")
            dim = parts[0].dim
        for P in parts:
            _check_dim(dim, P.dim)
        if drop_flat:
            parts = [P for P in parts if P.has_interior()]
        else:
            parts = [P for P in parts if not P.is_empty()]
        self.parts = tuple(parts)
        self.dim = dim

    def __len__(self):
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __getitem__(self, i):
        return self.parts[i]

    def __repr__(self):
        return f"PolyUnion(dim={self.dim}, parts={len(self)})"

    def is_empty(self) -> bool:
        return len(self.parts) == 0

    def contains(self, x, strictness: str = "respect", tol: float = EPS_MEM) -> Membership:
        return contains(self, x, strictness, tol)

    def contains_many(self, X, strictness: str = "respect", tol: float = EPS_MEM) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X), dtype=bool)
        for P in self.parts:
            out |= P.contains_many(X, strictness, tol)
        return out

    def n_rows(self) -> list[int]:
        return [len(P) for P in self.parts]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "parts": [P.to_dict() for P in self.parts]}

    @classmethod
    def from_dict(cls, d: dict) -> "PolyUnion":
        n = int(d["dim"])
        return cls([Polytope.from_dict(p, dim=n) for p in d["parts"]], dim=n)

    @classmethod
    def of(cls, P: Polytope) -> "PolyUnion":
        return cls([P], dim=P.dim)


def _as_union(S, dim=None) -> PolyUnion:
    if isinstance(S, PolyUnion):
        return S
    if isinstance(S, Polytope):
        return PolyUnion.of(S)
    return PolyUnion(list(S), dim=dim)


def contains(S, x, strictness: str = "respect", tol: float = EPS_MEM) -> Membership:
    """Membership of ``x`` in a union; the witness is the first containing part."""
    S = _as_union(S)
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_dim(S.dim, x.size)
    for j, P in enumerate(S.parts):
        if P.contains(x, strictness, tol):
            return Membership(True, j)
    return Membership(False, None)


def _bbox_disjoint(P: Polytope, Q: Polytope) -> bool:
    if not (P.is_bounded() and Q.is_bounded()):
        return False
    lp, hp = P.bbox()
    lq, hq = Q.bbox()
    return bool(np.any(lp > hq - EPS_INT) or np.any(lq > hp - EPS_INT))


def _bbox_table(parts: Sequence[Polytope]):
    """Stacked bounding boxes; unbounded parts get infinite boxes."""
    n = parts[0].dim if parts else 0
    lo = np.full((len(parts), n), -np.inf)
    hi = np.full((len(parts), n), np.inf)
    for i, P in enumerate(parts):
        if P.is_bounded():
            lo[i], hi[i] = P.bbox()
    return lo, hi


def _overlapping(P: Polytope, lo, hi) -> np.ndarray:
    """Indices of table boxes whose interior meets the box of ``P``."""
    if not P.is_bounded():
        return np.arange(len(lo))
    lp, hp = P.bbox()
    sep = np.any(lp > hi - EPS_INT, axis=1) | np.any(lo > hp - EPS_INT, axis=1)
    return np.flatnonzero(~sep)


def _diff_pair(p: Polytope, t: Polytope) -> list[Polytope]:
    """Closure-convention ``p \\ t`` as a list of pieces with interior."""
    if _bbox_disjoint(p, t):
        return [p]
    Vp = p.vertices()
    proj = Vp @ t.A.T
    if np.any(np.min(proj, axis=0) >= t.b - EPS_INT):
        return [p]
    if t.is_bounded() and np.any(np.min(t.vertices() @ p.A.T, axis=0) >= p.b - EPS_INT):
        return [p]
    if not p.intersect(t).has_interior():
        return [p]
    reach = np.max(proj, axis=0)
    cut = np.flatnonzero(reach > t.b + EPS_INT)
    if cut.size == 0:
        return []
    pieces = []
    A, b, s = p.A, p.b, p.strict
    for i in cut:
        piece = Polytope(np.vstack([A, -t.A[i]]), np.append(b, -t.b[i]),
                         np.append(s, not t.strict[i]), bounded=True, dim=p.dim)
        if piece.has_interior():
            pieces.append(canonicalize(piece)[0])
        A = np.vstack([A, t.A[i]])
        b = np.append(b, t.b[i])
        s = np.append(s, t.strict[i])
    return pieces


def _diff_poly_union(p: Polytope, T: Sequence[Polytope], table=None) -> list[Polytope]:
    if not T:
        return [p]
    lo, hi = table if table is not None else _bbox_table(T)
    pieces = [p]
    for k in _overlapping(p, lo, hi):
        t = T[k]
        nxt = []
        for q in pieces:
            nxt.extend(_diff_pair(q, t))
        pieces = nxt
        if not pieces:
            break
    return pieces


def _covered(P: Polytope, Q: Polytope) -> bool:
    """Closure of P inside closure of Q (vertex test)."""
    return bool(np.all(Q.contains_many(P.vertices(), "closure", _vtol(Q.b))))


def prune(parts: Sequence[Polytope]) -> list[Polytope]:
    """Drop parts covered by another part; the union is unchanged.

    Among mutually covering (equal) parts the first one is kept.
    """
    parts = list(parts)
    if len(parts) < 2:
        return parts
    lo, hi = _bbox_table(parts)
    dropped = np.zeros(len(parts), dtype=bool)
    for i, P in enumerate(parts):
        if not P.is_bounded():
            continue
        lp, hp = lo[i], hi[i]
        # a cover must contain the box of P
        cand = np.flatnonzero(np.all(lo <= lp + 10 * EPS_MEM, axis=1) & np.all(hi >= hp - 10 * EPS_MEM, axis=1))
        for j in cand:
            if j == i or dropped[j]:
                continue
            if _covered(P, parts[j]) and (j < i or not _covered(parts[j], P)):
                dropped[i] = True
                break
    return [P for P, d in zip(parts, dropped) if not d]


def region_diff(S, T) -> PolyUnion:
    """Set difference ``S \\ T`` up to measure-zero boundaries."""
    S, T = _as_union(S), _as_union(T)
    _check_dim(S.dim, T.dim)
    out = []
    table = _bbox_table(T.parts)
    for p in S.parts:
        if not p.has_interior():
            continue
        out.extend(_diff_poly_union(p, T.parts, table))
    return PolyUnion(prune(out), dim=S.dim)


def is_subset(S, T) -> bool:
    """``S`` inside ``T`` up to measure zero (short-circuits)."""
    S, T = _as_union(S), _as_union(T)
    table = _bbox_table(T.parts)
    for p in S.parts:
        if p.has_interior() and _diff_poly_union(p, T.parts, table):
            return False
    return True


def set_equal(S, T) -> bool:
    S, T = _as_union(S), _as_union(T)
    _check_dim(S.dim, T.dim)
    return is_subset(S, T) and is_subset(T, S)


def convhull_union(S) -> Polytope:
    S = _as_union(S)
    if S.is_empty():
        raise EmptyPolytope("hull of an empty union")
    return hull(np.vstack([P.vertices() for P in S.parts]))


def union_pdiff(S, Q: Polytope) -> PolyUnion:
    """``{x : x + Q inside S}`` for a union ``S``.

    Hull, shrink, then carve out everything that can reach a gap of the hull::

        H = hull(S); D = H ~ Q; E = H \\ S; F = E + (-Q); result = D \\ F
    """
    S = _as_union(S)
    n = S.dim
    _check_dim(n, Q.dim)
    parts = [P for P in S.parts if P.has_interior()]
    if not parts:
        return PolyUnion([], dim=n)
    if len(parts) == 1:
        out = [pdiff(parts[0], Q)]
    else:
        H = hull(np.vstack([P.vertices() for P in parts]))
        D = pdiff(H, Q)
        if not D.has_interior():
            return PolyUnion([], dim=n)
        E = region_diff(H, PolyUnion(parts, dim=n))
        negQ = -Q
        F = [minkowski_sum(e, negQ) for e in E.parts]
        out = _diff_poly_union(D, F)
        all_strict = all(P.strict.all() for P in parts)
        if all_strict:
            out = [P.copy_rows(strict=np.ones(len(P), dtype=bool), bounded=True) for P in out]
        elif not any(P.strict.any() for P in parts):
            out = [P.copy_rows(strict=np.zeros(len(P), dtype=bool), bounded=True) for P in out]
    return PolyUnion(prune(out), dim=n, drop_flat=True)


def intersect_union(S, P: Polytope) -> PolyUnion:
    S = _as_union(S)
    return PolyUnion([Q.intersect(P) for Q in S.parts if not _bbox_disjoint(Q, P)], dim=S.dim,
                     drop_flat=True)
