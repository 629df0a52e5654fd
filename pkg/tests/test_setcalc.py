import json

import numpy as np
import pytest

from action_governor.errors import OriginNotInU, SingularMatrix, UnstableClosedLoop
from action_governor.governor import GovernorProblem, GovernStatus, govern_miqp
from action_governor.optimize import LinConstraintSet
from action_governor.polytope import M_BOX, PolyUnion, Polytope, is_subset, linear_image, set_equal
from action_governor.setcalc import (
    UnrecoverableSeq,
    check_prop5,
    compute_oinf,
    compute_unrecoverable,
    oracle_unrecoverable,
    reach_trunc,
    step_unrecoverable,
    system_hash,
    u_grid_box,
)
from action_governor.system import LinearSystem
from oracles import box, near_part_boundary


# -- the recursion on hand-checkable systems ---------------------------------

def test_one_dim_symmetric_escape():
    sys = LinearSystem([[1.0]], [[1.0]])
    X0 = box([-1], [1], strict=True)
    seq = compute_unrecoverable(X0, sys, box([-1], [1]), 10)
    assert seq.converged and seq.K == 1
    assert set_equal(seq.sets[1], PolyUnion.of(X0))


def test_zero_input_matrix_is_pure_preimage():
    sys = LinearSystem(0.5 * np.eye(2), np.zeros((2, 1)))
    X0 = box([-1, -1], [1, 1], strict=True)
    seq = compute_unrecoverable(X0, sys, box([-1], [1]), 3)
    assert not seq.converged
    for k in range(4):
        w = 2.0**k
        assert set_equal(seq.sets[k], PolyUnion.of(box([-w, -w], [w, w])))


def test_empty_exclusion_zone():
    X0 = Polytope([[1.0], [-1.0]], [0.0, -1.0])
    seq = compute_unrecoverable(X0, LinearSystem([[1.0]], [[1.0]]), box([-1], [1]), 5)
    assert seq.converged and seq.K == 1
    assert all(S.is_empty() for S in seq.sets)


def test_singular_dynamics_rejected():
    sys = LinearSystem([[1.0, 1.0], [1.0, 1.0]], [[1.0], [0.0]])
    with pytest.raises(SingularMatrix):
        compute_unrecoverable(box([-1, -1], [1, 1], True), sys, box([-1], [1]), 2)


def test_k_max_validated():
    with pytest.raises(ValueError):
        compute_unrecoverable(box([-1], [1]), LinearSystem([[1.0]], [[1.0]]), box([-1], [1]), 0)


def test_acc_x1_closed_form(acc_scn):
    """With u = -2 the gap grows fastest: x is in X_1 iff ds + dt dv + dt^2 < 2 (inside the box)."""
    X1 = step_unrecoverable(PolyUnion.of(acc_scn.X0), acc_scn.X0, acc_scn.sys, acc_scn.U)
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.uniform(-5, 30, 4000), rng.uniform(-20, 20, 4000)])
    margin = X[:, 0] + 0.25 * X[:, 1] + 0.0625 - 2.0
    keep = (np.abs(margin) > 1e-6) & (np.abs(X[:, 0] - 2.0) > 1e-6)
    X, margin = X[keep], margin[keep]
    expect = (X[:, 0] < 2.0) | (margin < 0)
    assert np.array_equal(X1.contains_many(X, "respect"), expect)


def test_acc_x1_grid_oracle(acc_scn):
    X1 = step_unrecoverable(PolyUnion.of(acc_scn.X0), acc_scn.X0, acc_scn.sys, acc_scn.U)
    ug = u_grid_box(acc_scn.U, 201)
    pts = np.stack(np.meshgrid(np.linspace(0, 6, 25), np.linspace(-8, 8, 25)), -1).reshape(-1, 2)
    for x in pts:
        got = X1.contains(x, "respect").inside
        want = oracle_unrecoverable(x, 1, ug, acc_scn.X0, acc_scn.sys)
        assert got == want or near_part_boundary(X1, x, 1e-6)


def test_acc_sequence_oracle_depth3(acc_scn, acc_seq):
    X3 = acc_seq.sets[3]
    ug = u_grid_box(acc_scn.U)
    rng = np.random.default_rng(11)
    pts = np.column_stack([rng.uniform(0, 30, 1000), rng.uniform(-8, 8, 1000)])
    mismatch = 0
    for x in pts:
        if X3.contains(x, "respect").inside != oracle_unrecoverable(x, 3, ug, acc_scn.X0, acc_scn.sys):
            # the 21-point grid misses controls near a boundary
            assert near_part_boundary(X3, x, 0.05)
            mismatch += 1
    assert mismatch <= 20


def test_robot_sequence_oracle_depth2(robot_scn, robot_seq):
    X2 = robot_seq.unsafe(2)
    ug = u_grid_box(robot_scn.U)
    rng = np.random.default_rng(5)
    pts = np.column_stack([rng.uniform(-7, 7, 200), rng.uniform(-5, 6, 200),
                           rng.uniform(-4, 4, 200), rng.uniform(-4, 4, 200)])
    for x in pts:
        if X2.contains(x, "respect").inside != oracle_unrecoverable(x, 2, ug, robot_scn.X0, robot_scn.sys):
            assert near_part_boundary(X2, x, 0.05)


def test_robot_sequence_monotone(robot_seq):
    for a, b in zip(robot_seq.sets, robot_seq.sets[1:]):
        assert is_subset(a, b)


def test_sequence_clipped_to_operating_box(acc_seq):
    for Xk in acc_seq.sets[1:]:
        for P in Xk.parts:
            assert np.all(np.abs(P.vertices()) <= M_BOX + 1e-6)


def test_shear_preimage_clipped():
    # without the box, A^-1 would carry the part far outside it
    sys = LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
    X0 = box([-M_BOX, -M_BOX], [2.0, M_BOX], strict=True)
    X1 = step_unrecoverable(PolyUnion([X0]), X0, sys, box([-1.0], [1.0]))
    lo, hi = np.min([P.bbox()[0] for P in X1.parts], axis=0), np.max([P.bbox()[1] for P in X1.parts], axis=0)
    assert np.all(lo >= -M_BOX - 1e-9) and np.all(hi <= M_BOX + 1e-9)
    wide = step_unrecoverable(PolyUnion([X0]), X0, sys, box([-1.0], [1.0]),
                              domain=box([-3 * M_BOX] * 2, [3 * M_BOX] * 2))
    assert is_subset(X1, wide) and not is_subset(wide, X1)


# -- oracle sanity -----------------------------------------------------------

def test_oracle_trivial_cases():
    sys = LinearSystem(np.eye(2), np.eye(2))
    X0 = box([-1, -1], [1, 1], True)
    ug = u_grid_box(box([-5, -5], [5, 5]))
    assert oracle_unrecoverable([0.0, 0.0], 3, ug, X0, sys)
    assert not oracle_unrecoverable([10.0, 10.0], 3, ug, X0, sys)


# -- reach sets --------------------------------------------------------------

def test_reach_horizon_zero_is_BU(acc_scn):
    R = reach_trunc(acc_scn.sys, acc_scn.U, 0)
    assert set_equal(R.R_trunc, linear_image(acc_scn.sys.B, acc_scn.U))


def test_reach_nilpotent_collapse():
    sys = LinearSystem(np.zeros((2, 2)), np.eye(2))
    U = box([-1, -1], [1, 1])
    for h in (0, 1, 4):
        assert set_equal(reach_trunc(sys, U, h).R_trunc, U)


def test_reach_acc_samples(acc_scn):
    sys, h = acc_scn.sys, 5
    R = reach_trunc(sys, acc_scn.U, h)
    rng = np.random.default_rng(2)
    u = rng.uniform(-2, 2, size=(2000, h + 1))
    pts = sum((np.linalg.matrix_power(sys.A, k) @ sys.B @ u[:, [k]].T).T for k in range(h + 1))
    assert np.all(R.R_trunc.contains_many(pts, tol=1e-9))
    assert is_subset(R.R_trunc, reach_trunc(sys, acc_scn.U, h + 1).R_trunc)


def test_reach_requires_origin():
    with pytest.raises(OriginNotInU):
        reach_trunc(LinearSystem([[1.0]], [[1.0]]), box([1], [2]), 2)


def test_finite_determination_at_last_index(robot_seq, robot_scn):
    R = reach_trunc(robot_scn.sys, robot_scn.U, 3)
    assert check_prop5(R, robot_seq, robot_seq.K).holds


def test_finite_determination_acc_matches_sampling(acc_scn, acc_seq):
    R = reach_trunc(acc_scn.sys, acc_scn.U, 20)
    kp = acc_seq.K - 1
    verdict = check_prop5(R, acc_seq, kp)
    assert not verdict.converged
    lo, hi = R.R_trunc.bbox()
    rng = np.random.default_rng(8)
    X = rng.uniform(lo, hi, size=(20000, 2))
    X = X[R.R_trunc.contains_many(X, tol=0)]
    gap = acc_seq.last.contains_many(X, "respect") & ~acc_seq.unsafe(kp).contains_many(X, "closure")
    if verdict.holds:
        assert not gap.any()


# -- O-infinity --------------------------------------------------------------

def test_oinf_no_rows_is_everything():
    O = compute_oinf([[0.5]], [[0.5]], LinConstraintSet.free(2))
    assert O.determined and O.t_star == 0
    assert O.contains([1e6], [-1e6])


def test_oinf_scalar_contraction():
    """x+ = x/2 + v/2, |x| <= 1: with |x| <= 1 and |v| <= 1 every future |x_t| <= 1,
    so O-inf is the square tightened in v by the steady-state margin."""
    rows = LinConstraintSet([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0])
    O = compute_oinf([[0.5]], [[0.5]], rows)
    assert O.determined
    g = np.linspace(-1.5, 1.5, 61)
    for x in g:
        for v in g:
            want = abs(x) <= 1 and abs(v) <= 1 - 1e-6
            assert O.contains([x], [v], tol=0) == want


def test_oinf_unstable_rejected():
    with pytest.raises(UnstableClosedLoop):
        compute_oinf([[1.1]], [[1.0]], LinConstraintSet([[1.0, 0.0]], [1.0]))


def test_oinf_acc_invariance(acc_scn, acc_oinf):
    assert acc_oinf.determined
    rows = acc_scn.rg_constraints()
    rng = np.random.default_rng(4)
    Z = np.column_stack([rng.uniform(0, 40, 4000), rng.uniform(-10, 10, 4000), rng.uniform(0, 40, 4000)])
    Z = Z[[acc_oinf.contains(z[:2], z[2:], tol=0) for z in Z]][:150]
    assert len(Z) > 50
    for z in Z:
        x, v = z[:2].copy(), z[2:]
        for _ in range(200):
            assert np.all(rows.A @ np.concatenate([x, v]) <= rows.b + 1e-9)
            x = acc_oinf.step(x, v)
            assert acc_oinf.contains(x, v, tol=1e-9)


def test_oinf_json_round_trip(acc_oinf):
    from action_governor.setcalc import OinfSet

    O = OinfSet.from_dict(json.loads(json.dumps(acc_oinf.to_dict())))
    assert np.array_equal(O.cons.A, acc_oinf.cons.A) and np.array_equal(O.Acl, acc_oinf.Acl)


# -- persistence -------------------------------------------------------------

def test_sequence_json_round_trip(robot_seq, robot_scn):
    h = robot_scn.system_hash()
    d = json.loads(json.dumps(robot_seq.to_dict(h)))
    assert {"kind", "K", "converged", "system_hash", "sets"} <= set(d)
    assert d["kind"] == "unrecoverable" and d["system_hash"] == h
    back = UnrecoverableSeq.from_dict(d)
    assert back.K == robot_seq.K and back.converged == robot_seq.converged
    for a, b in zip(back.sets, robot_seq.sets):
        assert set_equal(a, b)


def test_system_hash_sensitivity(acc_scn):
    h = system_hash(acc_scn.sys, acc_scn.X0, acc_scn.U)
    assert h == system_hash(acc_scn.sys, acc_scn.X0, acc_scn.U)
    assert len(h) == 64
    other = LinearSystem(acc_scn.sys.A * 1.0001, acc_scn.sys.B)
    assert system_hash(other, acc_scn.X0, acc_scn.U) != h


# -- cross-module: the complement of X_K is controlled invariant --------------

def test_safe_states_admit_safe_controls(acc_scn, acc_seq):
    prob = GovernorProblem(acc_scn.sys, acc_scn.U, acc_scn.S, acc_seq.last)
    rng = np.random.default_rng(9)
    X = np.column_stack([rng.uniform(2, 30, 600), rng.uniform(-8, 8, 600)])
    X = X[~acc_seq.last.contains_many(X, "closure")][:150]
    assert len(X) > 50
    for x in X:
        res = govern_miqp(prob, x, rng.uniform(-2, 2, 1))
        assert res.status is GovernStatus.EXACT
