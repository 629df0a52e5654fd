"""Problem instances, nominal and safe-mode policies, and the closed-loop simulator.

Two instances ship with the package:

``acc``
    Car following with relative distance/speed state, a linear LQR nominal
    law and a "keep at least 2 m" exclusion zone.
``robot``
    Planar double integrator steered around a diamond-shaped obstacle, with
    a saturated LQR nominal law and a repulsive-field safe mode.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySaturationRange,
    GovernorError,
    NotStabilizable,
    RiccatiDivergence,
    ScenarioError,
    SeedInadmissible,
)
from .governor import (
    DELTA_TOL,
    GovernorProblem,
    GovernStatus,
    Mode,
    assumption1_audit,
    govern_bisect,
    govern_miqp,
    rg_update,
)
from .optimize import LinConstraintSet, Status, solve_lp, solve_qp
from .polytope import M_BOX, PolyUnion, Polytope
from .setcalc import OinfSet, compute_oinf, system_hash
from .system import LinearSystem

log = logging.getLogger(__name__)

RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 10_000


# ---------------------------------------------------------------------------
# LQR
# ---------------------------------------------------------------------------

def _stabilizable(A, B) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-12:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-9) < n:
                return False
    return True


def dlqr(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon discrete LQR gain by Riccati iteration.

    Returns ``K`` for the law ``u = K x``, so ``A + B K`` is Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not _stabilizable(A, B):
        raise NotStabilizable("(A, B) is not stabilizable")
    P = Q.copy()
    for _ in range(RICCATI_MAX_ITER):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise RiccatiDivergence("Riccati iterate overflowed")
        if np.max(np.abs(P_next - P)) <= RICCATI_TOL * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    else:
        raise RiccatiDivergence(f"no Riccati fixed point within {RICCATI_MAX_ITER} iterations")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if max(abs(np.linalg.eigvals(A + B @ K))) >= 1.0:
        raise NotStabilizable("LQR closed loop is not Schur stable")
    return K


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def acc_nominal(x, ds_ref: float, K) -> float:
    """Car-following law ``u = K (ds - ds_ref, dv)``."""
    x = np.asarray(x, dtype=float)
    K = np.asarray(K, dtype=float).reshape(-1)
    return float(K @ np.array([x[0] - ds_ref, x[1]]))


def saturation_range(speed: float, dt: float, v_max: float = 4.0, u_max: float = 2.0):
    """Acceleration interval that keeps the next speed inside ``[-v_max, v_max]``."""
    lo = max(-u_max, -(v_max + speed) / dt)
    hi = min(u_max, (v_max - speed) / dt)
    if lo > hi:
        raise EmptySaturationRange(f"speed {speed:.6g} cannot be brought back within {v_max}")
    return lo, hi


def robot_nominal(x, target, K, dt: float = 1.0, v_max: float = 4.0, u_max: float = 2.0) -> np.ndarray:
    """Saturated LQR position tracking for the planar robot."""
    x = np.asarray(x, dtype=float)
    e = np.concatenate([x[:2] - np.asarray(target, dtype=float), x[2:]])
    raw = np.asarray(K, dtype=float) @ e
    u = np.empty(2)
    for i in range(2):
        lo, hi = saturation_range(x[2 + i], dt, v_max, u_max)
        u[i] = min(max(raw[i], lo), hi)
    return u


@dataclass(frozen=True, eq=False)
class LQRPolicy:
    """``u = K (x - E r)``, optionally saturated per axis to keep speeds bounded."""

    K: np.ndarray
    E: np.ndarray
    dt: float = 1.0
    velocity_index: tuple = ()
    v_max: float = 4.0
    u_max: float = 2.0

    def __call__(self, x, r) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = self.K @ (x - self.E @ np.atleast_1d(r))
        if self.velocity_index:
            u = u.copy()
            for i, vi in enumerate(self.velocity_index):
                lo, hi = saturation_range(x[vi], self.dt, self.v_max, self.u_max)
                u[i] = min(max(u[i], lo), hi)
        return u


@dataclass(frozen=True, eq=False)
class RepulsiveField:
    """Constant-magnitude push away from an obstacle, active near it.

    ``obstacle`` lives in the position plane picked by ``position_index``.
    """

    obstacle: Polytope
    c_field: float = 2.0
    influence: float = 3.0
    u_max: float = 2.0
    position_index: tuple = (0, 1)

    def direction(self, p) -> np.ndarray | None:
        p = np.asarray(p, dtype=float)
        O = self.obstacle
        proj = solve_qp(np.eye(O.dim), p, O.cons)
        if proj.kind is not Status.OPTIMAL:
            return None
        d = p - proj.point
        dist = float(np.linalg.norm(d))
        if dist > self.influence:
            return None
        if dist <= 1e-9:
            viol = O.A @ p - O.b
            return O.A[int(np.argmax(viol >= viol.max() - 1e-12))].copy()
        return d / dist

    def __call__(self, x, t: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.direction(x[list(self.position_index)])
        if d is None:
            return np.zeros(len(self.position_index))
        return np.clip(self.c_field * d, -self.u_max, self.u_max)


def robot_safemode(x, field: RepulsiveField) -> np.ndarray:
    return field(x)


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------

@dataclass
class Reference:
    """Piecewise-constant signal: ``values[i]`` holds from step ``breaks[i]`` on."""

    breaks: list
    values: np.ndarray

    @classmethod
    def constant(cls, value) -> "Reference":
        return cls([0], np.atleast_2d(np.asarray(value, dtype=float)))

    def at(self, k: int) -> np.ndarray:
        i = int(np.searchsorted(self.breaks, k, side="right")) - 1
        return self.values[max(i, 0)]

    def to_json(self):
        if len(self.breaks) == 1:
            v = self.values[0].tolist()
            return v[0] if len(v) == 1 else v
        return {"breaks": list(self.breaks), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, d) -> "Reference":
        if isinstance(d, dict):
            breaks = [int(b) for b in d["breaks"]]
            if breaks != sorted(breaks) or breaks[0] != 0:
                raise ScenarioError("reference breaks must be increasing and start at 0")
            vals = np.asarray(d["values"], dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            return cls(breaks, vals)
        return cls.constant(np.atleast_1d(np.asarray(d, dtype=float)))


@dataclass
class Scenario:
    """Complete problem instance.

    ``policy`` keeps the raw JSON policy block (``kind``, ``Q``, ``R``,
    ``params``); :meth:`nominal_policy` turns it into a callable.
    """

    name: str
    sys: LinearSystem
    X0: Polytope
    U: Polytope
    S: np.ndarray
    x0: np.ndarray
    steps: int
    reference: Reference
    mode: Mode = Mode.MIQP
    kprime: int | None = None
    delta_tol: float = DELTA_TOL
    policy: dict = field(default_factory=dict)
    k_max: int = 50
    rg: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n, m = self.sys.n, self.sys.m
        if self.X0.dim != n or self.x0.size != n:
            raise ScenarioError("exclusion set and x0 must match the state dimension")
        if self.U.dim != m or self.S.shape != (m, m):
            raise ScenarioError("control set and S must match the control dimension")
        if self.steps < 0:
            raise ScenarioError("steps must be non-negative")

    # -- derived objects ------------------------------------------------------
    def gain(self) -> np.ndarray:
        return dlqr(self.sys.A, self.sys.B, self.policy["Q"], self.policy["R"])

    def reference_map(self) -> np.ndarray:
        params = self.policy.get("params", {})
        p = self.reference.values.shape[1]
        E = params.get("reference_map")
        if E is None:
            E = np.eye(self.sys.n)[:, :p]
        return np.asarray(E, dtype=float).reshape(self.sys.n, p)

    def nominal_policy(self) -> LQRPolicy:
        kind = self.policy.get("kind", "lqr")
        params = self.policy.get("params", {})
        K = self.gain()
        if kind == "lqr":
            return LQRPolicy(K, self.reference_map(), self.sys.dt)
        if kind == "lqr_saturated":
            return LQRPolicy(K, self.reference_map(), self.sys.dt,
                             tuple(params.get("velocity_index", range(self.sys.m, 2 * self.sys.m))),
                             float(params.get("v_max", 4.0)), float(params.get("u_max", 2.0)))
        raise ScenarioError(f"unknown policy kind {kind!r}")

    def safe_mode(self) -> RepulsiveField | None:
        sm = self.policy.get("params", {}).get("safe_mode")
        if not sm:
            return None
        if sm.get("kind", "repulsive") != "repulsive":
            raise ScenarioError(f"unknown safe mode {sm.get('kind')!r}")
        obs = Polytope(sm["obstacle"]["A"], sm["obstacle"]["b"], bounded=True)
        return RepulsiveField(obs, float(sm.get("c_field", 2.0)), float(sm.get("influence", 3.0)),
                              float(sm.get("u_max", 2.0)), tuple(sm.get("position_index", (0, 1))))

    def system_hash(self) -> str:
        return system_hash(self.sys, self.X0, self.U)

    def config_hash(self) -> str:
        text = json.dumps(scenario_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def problem(self, unsafe: PolyUnion, mode: Mode | None = None) -> GovernorProblem:
        return GovernorProblem(self.sys, self.U, self.S, unsafe, mode or self.mode)

    def rg_constraints(self, K=None) -> LinConstraintSet:
        """Rows over ``(x, v)``: configured state rows plus ``U`` applied to the nominal law."""
        K = self.gain() if K is None else K
        E = self.reference_map()
        n, p = E.shape
        rows = self.rg.get("state_rows")
        if rows is None:
            raise ScenarioError("rg mode needs governor.rg.state_rows")
        Ax = np.asarray(rows["A"], dtype=float).reshape(-1, n + p)
        bx = np.asarray(rows["b"], dtype=float)
        Au = np.hstack([self.U.A @ K, -(self.U.A @ K @ E)])
        return LinConstraintSet(np.vstack([Ax, Au]), np.concatenate([bx, self.U.b]))

    def oinf(self, t_max: int = 200) -> OinfSet:
        K = self.gain()
        E = self.reference_map()
        Acl = self.sys.A + self.sys.B @ K
        Bcl = -self.sys.B @ K @ E
        return compute_oinf(Acl, Bcl, self.rg_constraints(K), t_max)


def _mat(d, key, ctx):
    try:
        return np.asarray(d[key], dtype=float)
    except KeyError:
        raise ScenarioError(f"missing {ctx}.{key}") from None
    except (TypeError, ValueError):
        raise ScenarioError(f"{ctx}.{key} is not numeric") from None


def scenario_to_dict(scn: Scenario) -> dict:
    pol = {"kind": scn.policy.get("kind", "lqr"),
           "Q": np.asarray(scn.policy["Q"], dtype=float).tolist(),
           "R": np.asarray(scn.policy["R"], dtype=float).tolist(),
           "params": scn.policy.get("params", {})}
    gov = {"mode": scn.mode.value, "kprime": scn.kprime, "delta_tol": scn.delta_tol, "kmax": scn.k_max}
    if scn.rg:
        gov["rg"] = scn.rg
    return {
        "name": scn.name,
        "system": {"A": scn.sys.A.tolist(), "B": scn.sys.B.tolist(), "dt": scn.sys.dt},
        "exclusion": scn.X0.to_dict(),
        "control_set": {"A": scn.U.A.tolist(), "b": scn.U.b.tolist()},
        "weight_S": scn.S.tolist(),
        "governor": gov,
        "policy": json.loads(json.dumps(pol)),
        "sim": {"x0": scn.x0.tolist(), "steps": scn.steps, "reference": scn.reference.to_json()},
    }


def scenario_from_dict(d: dict) -> Scenario:
    """Parse and validate a scenario; every problem surfaces as ``ScenarioError``."""
    try:
        sysd, exc, cset = d["system"], d["exclusion"], d["control_set"]
        gov, pol, sim = d.get("governor", {}), d["policy"], d["sim"]
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"missing scenario section: {e}") from None
    try:
        A = _mat(sysd, "A", "system")
        B = _mat(sysd, "B", "system")
        sys = LinearSystem(A, B.reshape(A.shape[0], -1) if B.ndim == 1 else B, float(sysd.get("dt", 1.0)))
        n, m = sys.n, sys.m
        X0 = Polytope(_mat(exc, "A", "exclusion").reshape(-1, n), _mat(exc, "b", "exclusion"),
                      exc.get("strict", True))
        U = Polytope(_mat(cset, "A", "control_set").reshape(-1, m), _mat(cset, "b", "control_set"))
        if not U.is_bounded():
            raise ScenarioError("control set must be bounded")
        X0 = _with_hint(X0)
        S = np.atleast_2d(np.asarray(d.get("weight_S", np.eye(m).tolist()), dtype=float))
        kprime = gov.get("kprime")
        scn = Scenario(
            name=str(d.get("name", "scenario")),
            sys=sys, X0=X0, U=U, S=S,
            x0=_mat(sim, "x0", "sim"),
            steps=int(sim.get("steps", 0)),
            reference=Reference.from_json(sim.get("reference", 0.0)),
            mode=Mode(gov.get("mode", "miqp")),
            kprime=None if kprime is None else int(kprime),
            delta_tol=float(gov.get("delta_tol", DELTA_TOL)),
            policy={"kind": pol.get("kind", "lqr"), "Q": _mat(pol, "Q", "policy").tolist(),
                    "R": np.atleast_2d(_mat(pol, "R", "policy")).tolist(), "params": pol.get("params", {})},
            k_max=int(gov.get("kmax", 50)),
            rg=gov.get("rg", {}),
        )
    except ScenarioError:
        raise
    except (DimensionMismatch, ValueError, TypeError, KeyError) as e:
        raise ScenarioError(str(e)) from None
    return scn


def _with_hint(P: Polytope) -> Polytope:
    return Polytope(P.A, P.b, P.strict, bounded=P.is_bounded(), dim=P.dim)


def load_scenario(path) -> Scenario:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"malformed JSON: {e}") from None
    return scenario_from_dict(d)


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# the two shipped instances
# ---------------------------------------------------------------------------

def acc_scenario(mode: str = "miqp", M: float = M_BOX, steps: int = 200, kprime: int | None = None) -> Scenario:
    dt = 0.25
    A = [[1.0, dt], [0.0, 1.0]]
    B = [[-0.5 * dt * dt], [-dt]]
    X0 = Polytope([[1, 0], [-1, 0], [0, 1], [0, -1]], [2.0, M, M, M], True, bounded=True)
    U = Polytope.from_box([-2.0], [2.0])
    rg = {"state_rows": {"A": [[-1, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0]], "b": [-2.0, M, M, M]}}
    return Scenario(
        name="acc", sys=LinearSystem(A, B, dt), X0=X0, U=U, S=np.eye(1),
        x0=np.array([18.0, -4.0]), steps=steps, reference=Reference.constant([2.5]),
        mode=Mode(mode), kprime=kprime,
        policy={"kind": "lqr", "Q": [[10.0, 0.0], [0.0, 1.0]], "R": [[20.0]],
                "params": {"reference_map": [[1.0], [0.0]]}},
        rg=rg,
    )


ROBOT_DIAMOND_CENTER = (0.0, 0.5)


def diamond(center=ROBOT_DIAMOND_CENTER, half_width: float = 4.0, half_height: float = 2.0) -> Polytope:
    """``|s1 - c1| / w + |s2 - c2| / h <= 1`` in H-form."""
    c = np.asarray(center, dtype=float)
    ratio = half_width / half_height
    A = np.array([[1.0, ratio], [1.0, -ratio], [-1.0, ratio], [-1.0, -ratio]])
    return Polytope(A, half_width + A @ c, bounded=True)


def robot_scenario(mode: str = "bisect", kprime: int = 3, steps: int = 60,
                   center=ROBOT_DIAMOND_CENTER, v_max: float = 4.0) -> Scenario:
    dt = 1.0
    I2 = np.eye(2)
    A = np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    B = np.vstack([0.5 * dt * dt * I2, dt * I2])
    obs = diamond(center)
    X0 = Polytope(
        np.vstack([np.hstack([obs.A, np.zeros((4, 2))]), np.hstack([np.zeros((4, 2)), np.vstack([I2, -I2])])]),
        np.concatenate([obs.b, v_max * np.ones(4)]),
        # open obstacle, closed speed range: a speed of exactly v_max is still in range
        [True] * 4 + [False] * 4, bounded=True)
    U = Polytope.from_box([-2.0, -2.0], [2.0, 2.0])
    params = {
        "reference_map": np.vstack([I2, np.zeros((2, 2))]).tolist(),
        "velocity_index": [2, 3], "v_max": v_max, "u_max": 2.0,
        "safe_mode": {"kind": "repulsive", "c_field": 2.0, "influence": 3.0, "u_max": 2.0,
                      "position_index": [0, 1], "obstacle": {"A": obs.A.tolist(), "b": obs.b.tolist()}},
    }
    return Scenario(
        name="robot", sys=LinearSystem(A, B, dt), X0=X0, U=U, S=np.eye(2),
        x0=np.array([-10.0, 0.0, 0.0, 0.0]), steps=steps, reference=Reference.constant([10.0, 0.0]),
        mode=Mode(mode), kprime=kprime,
        policy={"kind": "lqr_saturated", "Q": np.eye(4).tolist(), "R": np.eye(2).tolist(), "params": params},
    )


BUILTIN = {"acc": acc_scenario, "robot": robot_scenario}


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Per-step log.  Row ``k`` holds the state ``x(k)`` and the controls
    applied at ``k``; the last row carries the final state and NaN controls.
    """

    x: np.ndarray
    u_nom: np.ndarray
    u_app: np.ndarray
    modified: np.ndarray
    lam: np.ndarray
    rg_v: np.ndarray
    status: list
    audit: list
    u_psi: np.ndarray | None = None
    halted: str | None = None
    online_us: list = field(default_factory=list)

    @property
    def k(self) -> np.ndarray:
        return np.arange(len(self.x))

    def __len__(self):
        return len(self.x)

    def columns(self) -> list[str]:
        n, m = self.x.shape[1], self.u_nom.shape[1]
        return (["k"] + [f"x_{i + 1}" for i in range(n)] + [f"u_nom_{i + 1}" for i in range(m)]
                + [f"u_app_{i + 1}" for i in range(m)] + ["modified", "lambda", "rg_v"])

    def table(self) -> np.ndarray:
        return np.column_stack([self.k, self.x, self.u_nom, self.u_app,
                                self.modified.astype(float), self.lam, self.rg_v])

    def to_csv(self) -> str:
        lines = [",".join(self.columns())]
        for k, row in enumerate(self.table()):
            cells = [str(k)] + [_fmt12(v) for v in row[1:-3]]
            cells.append(str(int(row[-3])))
            cells += [_fmt12(row[-2]), _fmt12(row[-1])]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _fmt12(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.12g}"


def read_trajectory_csv(text: str) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


def _project_U(U: Polytope, u) -> np.ndarray:
    if U.contains(u, "closure", 0.0):
        return np.asarray(u, dtype=float)
    return solve_qp(np.eye(U.dim), u, U.cons).point


def rg_seed(oinf: OinfSet, x, r) -> float:
    """Admissible reference closest to ``r`` for the initial state."""
    n = oinf.n
    A, b = oinf.cons.A, oinf.cons.b
    Av, rhs = A[:, n:], b - A[:, :n] @ np.asarray(x, dtype=float)
    cons = LinConstraintSet(Av, rhs)
    lo = solve_lp(np.ones(1), cons)
    hi = solve_lp(-np.ones(1), cons)
    if lo.kind is Status.INFEASIBLE:
        raise SeedInadmissible("no admissible reference for the initial state")
    v_lo = lo.point[0] if lo.kind is Status.OPTIMAL else -np.inf
    v_hi = hi.point[0] if hi.kind is Status.OPTIMAL else np.inf
    return float(min(max(float(np.atleast_1d(r)[0]), v_lo), v_hi))


def simulate(scn: Scenario, prob: GovernorProblem | None = None, *, oinf: OinfSet | None = None,
             timer=None) -> Trajectory:
    """Closed-loop run.  Governing failures end the run and set ``halted``."""
    mode = scn.mode if prob is None else prob.mode
    sys = scn.sys
    n, m = sys.n, sys.m
    N = scn.steps
    policy = scn.nominal_policy()
    psi = scn.safe_mode() if mode is Mode.BISECT else None
    if mode in (Mode.MIQP, Mode.BISECT) and prob is None:
        raise ValueError(f"{mode.value} mode needs a GovernorProblem")
    if mode is Mode.BISECT and psi is None:
        raise ScenarioError("bisect mode needs policy.params.safe_mode")
    if mode is Mode.RG and oinf is None:
        oinf = scn.oinf()

    X = np.full((N + 1, n), np.nan)
    u_nom = np.full((N + 1, m), np.nan)
    u_app = np.full((N + 1, m), np.nan)
    u_psi = np.full((N + 1, m), np.nan) if psi is not None else None
    modified = np.zeros(N + 1, dtype=bool)
    lam = np.full(N + 1, np.nan)
    rg_v = np.full(N + 1, np.nan)
    status, audit, online = [], [], []
    halted = None
    x = scn.x0.copy()
    X[0] = x
    last = N
    if prob is not None and not prob.is_safe(x):
        halted = "x0 inside the unsafe set"
        log.warning(halted)
    v = None
    if mode is Mode.RG and halted is None:
        v = rg_seed(oinf, x, scn.reference.at(0))
    clock = timer or _now_us
    for k in range(N):
        if halted:
            last = k
            break
        r = scn.reference.at(k)
        t0 = clock()
        try:
            if mode is Mode.RG:
                v = rg_update(oinf, x, float(r[0]), v, scn.delta_tol)
                rg_v[k] = v
                un = policy(x, np.array([v]))
                u = un
                st = GovernStatus.EXACT
            else:
                un = policy(x, r)
                if mode is Mode.PASSTHROUGH:
                    u = _project_U(scn.U, un)
                    modified[k] = not np.array_equal(u, un)
                    st = GovernStatus.EXACT
                elif mode is Mode.MIQP:
                    res = govern_miqp(prob, x, un)
                    u, modified[k], st = res.u, res.modified, res.status
                else:
                    up = psi(x, k)
                    u_psi[k] = up
                    res = govern_bisect(prob, x, un, up, scn.delta_tol)
                    u, modified[k], st, lam[k] = res.u, res.modified, res.status, res.lam
                    audit.append(assumption1_audit(psi, prob, x, k))
        except GovernorError as e:
            halted = f"step {k}: {type(e).__name__}: {e}"
            log.warning(halted)
            last = k
            break
        online.append(clock() - t0)
        u_nom[k] = un
        status.append(st.value)
        if st is GovernStatus.INFEASIBLE:
            halted = f"step {k}: governor infeasible"
            log.warning(halted)
            last = k
            break
        u_app[k] = u
        x = sys.A @ x + sys.B @ u
        X[k + 1] = x
    sl = slice(0, last + 1)
    return Trajectory(X[sl], u_nom[sl], u_app[sl], modified[sl], lam[sl], rg_v[sl], status, audit,
                      None if u_psi is None else u_psi[sl], halted, online)


def _now_us() -> float:
    return time.perf_counter() * 1e6
