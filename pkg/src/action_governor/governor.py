"""Online supervision of a nominal control.

Three supervisors share one problem description:

* ``govern_miqp`` finds the control closest to the nominal one (in the
  ``S`` norm) whose successor state avoids every part of the unsafe union.
  The disjunction "leave part j through at least one of its faces" is handled
  by depth-first branch-and-bound over convex QP relaxations.
* ``govern_bisect`` blends the nominal control with a safe-mode control and
  keeps the largest safe blending weight found by bisection.
* ``rg_update`` is the scalar reference-governor baseline working on an
  ``OinfSet``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, SeedInadmissible
from .optimize import EPS_FEAS, LinConstraintSet, Status, check_pd, solve_qp
from .polytope import M_BOX, PolyUnion, Polytope
from .setcalc import OinfSet
from .system import LinearSystem

log = logging.getLogger(__name__)

DELTA_TOL = 1e-4
MARGIN = 1e-6

SafeModePolicy = Callable[[np.ndarray, int], np.ndarray]


class Mode(str, Enum):
    MIQP = "miqp"
    BISECT = "bisect"
    RG = "rg"
    PASSTHROUGH = "passthrough"


class GovernStatus(str, Enum):
    EXACT = "exact"
    BISECT_APPROX = "bisect_approx"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class GovernorProblem:
    """Everything the supervisor needs besides the current state.

    ``margin`` keeps accepted successors that far outside each unsafe part,
    so shared faces between parts cannot be used as an escape route.
    """

    sys: LinearSystem
    U: Polytope
    S: np.ndarray
    unsafe: PolyUnion
    mode: Mode = Mode.MIQP
    margin: float = MARGIN

    def __post_init__(self):
        S = check_pd(np.atleast_2d(np.asarray(self.S, dtype=float)))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "mode", Mode(self.mode))
        if S.shape[0] != self.sys.m or self.U.dim != self.sys.m:
            raise DimensionMismatch("S and U must match the control dimension")
        if self.unsafe.dim != self.sys.n:
            raise DimensionMismatch("unsafe set must match the state dimension")

    def is_safe(self, y) -> bool:
        """Successor ``y`` lies outside the open unsafe union."""
        return not self.unsafe.contains(y, "respect").inside

    def in_U(self, u) -> bool:
        return self.U.contains(u, "closure", EPS_FEAS)


@dataclass
class GovernResult:
    u: np.ndarray
    modified: bool
    status: GovernStatus
    lam: float = float("nan")
    nodes: int = 0
    iterations: int = 0
    selection: tuple = field(default_factory=tuple)


def _value(S, u, target) -> float:
    d = u - target
    return float(d @ S @ d)


def govern_miqp(prob: GovernorProblem, x, u_phi) -> GovernResult:
    """Exact minimal modification of ``u_phi``.

    Returns status ``INFEASIBLE`` (with ``u_phi`` projected onto ``U``) when
    no admissible control keeps the successor safe.
    """
    A, B, S = prob.sys.A, prob.sys.B, prob.S
    x = np.asarray(x, dtype=float).reshape(-1)
    u_phi = np.atleast_1d(np.asarray(u_phi, dtype=float))
    if x.size != prob.sys.n or u_phi.size != prob.sys.m:
        raise DimensionMismatch("state or control has the wrong size")
    y0 = A @ x
    if prob.in_U(u_phi) and prob.is_safe(y0 + B @ u_phi):
        return GovernResult(u_phi.copy(), False, GovernStatus.EXACT, nodes=0)

    best = None
    for margin in (prob.margin, 0.0) if prob.margin > 0 else (0.0,):
        best = _branch_and_bound(prob, y0, u_phi, margin)
        if best[0] is not None:
            break
    u, value, nodes, sel = best
    if u is None:
        proj = solve_qp(S, u_phi, prob.U.cons)
        u_fb = proj.point if proj.kind is Status.OPTIMAL else u_phi.copy()
        return GovernResult(u_fb, True, GovernStatus.INFEASIBLE, nodes=nodes)
    modified = not np.array_equal(u, u_phi)
    status = GovernStatus.EXACT if prob.is_safe(y0 + B @ u) else GovernStatus.INFEASIBLE
    return GovernResult(u, modified, status, nodes=nodes, selection=sel)


def _disjunctions(prob: GovernorProblem, y0, u_phi, margin):
    """Per-part candidate rows in control space: ``a . u <= c`` means leaving
    the part through face ``i``.  Parts already left for every ``u`` in ``U``
    are dropped, as are faces no control can cross.
    """
    B = prob.sys.B
    VU = prob.U.vertices()
    y_nom = y0 + B @ u_phi
    out = []
    for j, P in enumerate(prob.unsafe.parts):
        G, g = P.A, P.b + margin
        reach = G @ y0[:, None] + (G @ B) @ VU.T  # rows x U-vertices
        if np.any(np.all(reach >= g[:, None], axis=1)):
            continue
        crossable = np.flatnonzero(np.max(reach, axis=1) >= g)
        slack = G[crossable] @ y_nom - g[crossable]
        depth = float(np.min(g - G @ y_nom))
        rows = [(int(i), -(G[i] @ B), float(G[i] @ y0 - g[i]))
                for i in crossable[np.argsort(-slack, kind="stable")]]
        out.append((depth, j, rows))
    out.sort(key=lambda t: (-t[0], t[1]))
    return [(j, rows) for _, j, rows in out]


def _branch_and_bound(prob: GovernorProblem, y0, u_phi, margin):
    S = prob.S
    UA, Ub = prob.U.A, prob.U.b
    parts = _disjunctions(prob, y0, u_phi, margin)
    if any(not rows for _, rows in parts):
        return None, np.inf, 0, ()
    state = {"value": np.inf, "u": None, "key": None, "nodes": 0}
    tol = 1e-12

    def satisfied(u, rows):
        return any(a @ u <= c + EPS_FEAS for _, a, c in rows)

    def dfs(extra_A, extra_b, chosen):
        state["nodes"] += 1
        cons = LinConstraintSet(np.vstack([UA] + extra_A), np.concatenate([Ub] + extra_b))
        res = solve_qp(S, u_phi, cons)
        if res.kind is not Status.OPTIMAL:
            return
        bound = res.value
        if bound > state["value"] + tol * (1.0 + state["value"]):
            return
        u = res.point
        open_part = next(((j, rows) for j, rows in parts if j not in chosen and not satisfied(u, rows)), None)
        if open_part is None:
            key = tuple(sorted(chosen.items()))
            better = bound < state["value"] - tol * (1.0 + bound)
            tie = not better and abs(bound - state["value"]) <= tol * (1.0 + bound)
            if better or (tie and key < state["key"]):
                state.update(value=bound, u=u, key=key)
            return
        j, rows = open_part
        for i, a, c in rows:
            chosen[j] = i
            dfs(extra_A + [a[None, :]], extra_b + [np.array([c])], chosen)
            del chosen[j]

    dfs([], [], {})
    return state["u"], state["value"], state["nodes"], state["key"] or ()


def govern_bisect(prob: GovernorProblem, x, u_phi, u_psi, delta_tol: float = DELTA_TOL) -> GovernResult:
    """Blend ``lam * u_phi + (1 - lam) * u_psi`` with the largest safe ``lam``.

    The candidate at the current ``lam`` is tested at the top of every
    iteration, starting from ``lam = 1``.  The blend at ``lam = 0`` is never
    tested; its safety is the safe-mode policy's promise, so the final
    status reports whether the returned control is actually safe.
    """
    A, B = prob.sys.A, prob.sys.B
    x = np.asarray(x, dtype=float).reshape(-1)
    u_phi = np.atleast_1d(np.asarray(u_phi, dtype=float))
    u_psi = np.atleast_1d(np.asarray(u_psi, dtype=float))
    y0 = A @ x
    lo, hi, lam = 0.0, 1.0, 1.0
    it = 0
    while hi - lo > delta_tol:
        u = lam * u_phi + (1.0 - lam) * u_psi
        if prob.is_safe(y0 + B @ u):
            lo = lam
        else:
            hi = lam
        lam = 0.5 * (lo + hi)
        it += 1
    u = lo * u_phi + (1.0 - lo) * u_psi
    ok = prob.is_safe(y0 + B @ u)
    status = GovernStatus.BISECT_APPROX if ok else GovernStatus.INFEASIBLE
    return GovernResult(u, lo < 1.0, status, lam=lo, iterations=it)


def rg_update(oinf: OinfSet, x, r: float, v_prev: float, delta_tol: float = DELTA_TOL) -> float:
    """Move the applied reference from ``v_prev`` toward ``r`` as far as ``O_inf`` allows."""
    if not oinf.contains(x, v_prev):
        raise SeedInadmissible("(x, v_prev) is not in O_inf")
    if oinf.contains(x, r):
        return float(r)
    step = r - v_prev
    lo, hi = 0.0, 1.0
    while (hi - lo) * abs(step) > delta_tol:
        mid = 0.5 * (lo + hi)
        if oinf.contains(x, v_prev + mid * step):
            lo = mid
        else:
            hi = mid
    return float(v_prev + lo * step)


def assumption1_audit(policy: SafeModePolicy, prob: GovernorProblem, x, t: int) -> bool:
    """Does the safe-mode control keep the successor outside the unsafe set?"""
    u = np.atleast_1d(np.asarray(policy(x, t), dtype=float))
    return prob.is_safe(prob.sys.step(x, u))


# ---------------------------------------------------------------------------
# big-M export
# ---------------------------------------------------------------------------

def big_m(P: Polytope, box_half_width: float = M_BOX) -> np.ndarray:
    """Per-row constants large enough to relax a row anywhere in the operating box."""
    return np.maximum(P.b + box_half_width * np.abs(P.A).sum(axis=1), 0.0) + 1.0


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _lin(coefs, names) -> str:
    terms = []
    for c, name in zip(coefs, names):
        if c != 0.0:
            terms.append(f"{'+' if c > 0 else '-'} {_fmt(abs(c))} {name}")
    return " ".join(terms) if terms else f"0 {names[0]}"


def export_miqp(prob: GovernorProblem, x, u_phi, box_half_width: float = M_BOX) -> str:
    """The big-M MIQP for one step in CPLEX LP format.

    Each unsafe part ``j`` gets binaries ``d_j_i`` with ``sum_i d_j_i = 1``
    and rows ``G_ji (A x + B u) >= g_ji - M_ji (1 - d_j_i)``.  The objective
    drops the constant ``u_phi' S u_phi``.
    """
    A, B, S = prob.sys.A, prob.sys.B, prob.S
    x = np.asarray(x, dtype=float).reshape(-1)
    u_phi = np.atleast_1d(np.asarray(u_phi, dtype=float))
    m = prob.sys.m
    un = [f"u{k + 1}" for k in range(m)]
    lines = [
        "\\ action governor big-M MIQP",
        f"\\ x = {' '.join(_fmt(v) for v in x)}",
        f"\\ u_phi = {' '.join(_fmt(v) for v in u_phi)}",
        f"\\ objective constant = {_fmt(float(u_phi @ S @ u_phi))}",
        "Minimize",
    ]
    lin = -2.0 * (S @ u_phi)
    quad = []
    for a in range(m):
        for b in range(a, m):
            coef = 2.0 * S[a, b] * (1.0 if a == b else 2.0)
            if coef != 0.0:
                term = f"{un[a]} ^ 2" if a == b else f"{un[a]} * {un[b]}"
                quad.append(f"{'+' if coef > 0 else '-'} {_fmt(abs(coef))} {term}")
    lines.append(f" obj: {_lin(lin, un)} + [ {' '.join(quad)} ] / 2")
    lines.append("Subject To")
    for k, (a, b) in enumerate(zip(prob.U.A, prob.U.b)):
        lines.append(f" U_{k}: {_lin(a, un)} <= {_fmt(b)}")
    binaries = []
    y0 = A @ x
    for j, P in enumerate(prob.unsafe.parts):
        M = big_m(P, box_half_width)
        names = []
        for i in range(len(P)):
            d = f"d_{j}_{i}"
            names.append(d)
            coef = P.A[i] @ B
            rhs = P.b[i] - M[i] - P.A[i] @ y0
            lines.append(f" r_{j}_{i}: {_lin(coef, un)} - {_fmt(M[i])} {d} >= {_fmt(rhs)}")
        lines.append(f" sos_{j}: {' + '.join(names)} = 1")
        binaries.extend(names)
    lines.append("Bounds")
    for name in un:
        lines.append(f" {name} free")
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
