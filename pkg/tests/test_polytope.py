import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from action_governor.errors import SingularMatrix, UnboundedPolytope
from action_governor.polytope import (
    EPS_MEM,
    PolyUnion,
    Polytope,
    affine_preimage,
    canonicalize,
    contains,
    convhull_union,
    hull,
    intersect_union,
    is_subset,
    linear_image,
    minkowski_sum,
    pdiff,
    prune,
    region_diff,
    set_equal,
    union_pdiff,
)
from oracles import increasing_chain


def box(lo, hi, strict=False):
    return Polytope.from_box(lo, hi, strict)


def union(*parts):
    return PolyUnion(parts, dim=parts[0].dim)


def grid(lo, hi, n):
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def interior_of(S: PolyUnion, X, tol=1e-9):
    out = np.zeros(len(X), dtype=bool)
    for P in S.parts:
        out |= np.all(X @ P.A.T < P.b - tol, axis=1)
    return out


def closure_of(S: PolyUnion, X, tol=1e-9):
    return S.contains_many(X, "closure", tol)


def random_polygon(rng, center=(0, 0), scale=1.0, k=None):
    k = k or int(rng.integers(3, 8))
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    r = rng.uniform(0.5, 1.0, k) * scale
    return hull(np.column_stack([np.cos(ang), np.sin(ang)]) * r[:, None] + np.asarray(center))


# -- construction and membership ---------------------------------------------

def test_rows_are_normalized_and_zero_rows_handled():
    P = Polytope([[3.0, 4.0], [0.0, 0.0]], [5.0, 1.0])
    assert len(P) == 1
    assert np.allclose(P.A, [[0.6, 0.8]]) and P.b[0] == pytest.approx(1.0)
    bad = Polytope([[0.0, 0.0]], [-1.0])
    assert bad.is_empty()


def test_strict_membership():
    P = box([0, 0], [1, 1], strict=True)
    assert P.contains([1.0, 0.5], "closure")
    assert not P.contains([1.0, 0.5], "respect")
    assert P.contains([1.0 - 2 * EPS_MEM, 0.5], "respect")


def test_union_contains_witness():
    S = union(box([0, 0], [1, 1]), box([1, 0], [2, 1]))
    m = contains(S, [0.5, 0.5])
    assert m.inside and m.witness_part == 0
    assert not contains(S, [5.0, 5.0]).inside
    shared = contains(S, [1.0, 0.5], "closure")
    assert shared.inside


def test_json_round_trip():
    S = union(box([0, 0], [1, 1], strict=True), random_polygon(np.random.default_rng(1), (3, 3)))
    d = json.loads(json.dumps(S.to_dict()))
    T = PolyUnion.from_dict(d)
    assert set(d) == {"dim", "parts"} and set(d["parts"][0]) == {"A", "b", "strict"}
    assert set_equal(S, T)
    assert all(np.array_equal(P.strict, Q.strict) for P, Q in zip(S.parts, T.parts))


# -- canonicalize, vertices, hull --------------------------------------------

def test_canonicalize_dominated_row():
    P, empty = canonicalize(Polytope([[1.0], [1.0]], [1.0, 2.0]))
    assert not empty and len(P) == 1 and P.b[0] == pytest.approx(1.0)


def test_canonicalize_empty():
    _, empty = canonicalize(Polytope([[1.0], [-1.0]], [0.0, -1.0]))
    assert empty


def test_interior_threshold_scales_with_coordinates():
    thin = box([0.0, 0.0], [1.0, 2.5e-7])
    assert thin.has_interior()
    far = box([1e4, 0.0], [1e4 + 1.0, 2.5e-7])  # same sliver, vertex tolerance ~1e-7 out here
    assert not far.has_interior()
    assert box([1e4, 0.0], [1e4 + 1.0, 1e-3]).has_interior()


def test_prune_keeps_parts_protruding_by_a_sliver():
    big = box([0.0, 0.0], [1.0, 1.0])
    poke = box([0.2, 0.2], [0.5, 1.0 + 1e-6])
    kept = prune([big, poke])
    assert len(kept) == 2
    assert len(prune([big, box([0.2, 0.2], [0.5, 1.0])])) == 1


def test_canonicalize_hexagon_with_duplicates(rng):
    ang = np.arange(6) * np.pi / 3 + 0.2
    A = np.column_stack([np.cos(ang), np.sin(ang)])
    b = rng.uniform(0.8, 1.2, 6)
    P = Polytope(np.vstack([A, A[:3] * 2.0]), np.concatenate([b, 2.0 * b[:3]]))
    C, empty = canonicalize(P)
    assert not empty and len(C) == 6
    X = rng.uniform(-2, 2, size=(10_000, 2))
    assert np.array_equal(P.contains_many(X, tol=0), C.contains_many(X, tol=0))
    again, _ = canonicalize(C)
    assert len(again) == len(C)


def test_vertices_simple():
    V = box([0, 0], [1, 1]).vertices()
    assert {tuple(v) for v in np.round(V, 12)} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    simplex = Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert {tuple(v) for v in np.round(simplex.vertices(), 12)} == {(0, 0), (1, 0), (0, 1)}


def test_vertices_unbounded_raises():
    with pytest.raises(UnboundedPolytope):
        Polytope([[1.0, 0.0]], [1.0]).vertices()


def test_vertices_random_3d(rng):
    """Each vertex has >= n independent active rows; their hull reproduces membership."""
    for _ in range(5):
        A = rng.normal(size=(12, 3))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        P = Polytope(A, rng.uniform(0.5, 1.5, 12))
        if not P.is_bounded():
            continue
        V = P.vertices()
        for v in V:
            act = np.abs(P.A @ v - P.b) <= 1e-8
            assert np.linalg.matrix_rank(P.A[act]) == 3
        H = ConvexHull(V)
        X = rng.uniform(-3, 3, size=(10_000, 3))
        in_hull = np.all(X @ H.equations[:, :3].T + H.equations[:, 3] <= 1e-9, axis=1)
        assert np.array_equal(in_hull, P.contains_many(X, tol=1e-9))


def test_hull_examples(rng):
    H = hull([[0, 0], [1, 0], [0, 1]])
    assert set_equal(H, Polytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1]))
    I = hull([[0.0], [2.0]])
    assert set_equal(I, box([0], [2]))
    pts = rng.normal(size=(20, 2))
    V = hull(pts).vertices()
    assert all(np.min(np.linalg.norm(pts - v, axis=1)) < 1e-9 for v in V)
    assert np.all(hull(pts).contains_many(pts, tol=1e-9))


def test_hull_flat_set_uses_equalities():
    H = hull([[0, 0], [1, 1], [2, 2]])
    assert H.contains([0.5, 0.5]) and not H.contains([0.5, 0.6], tol=1e-9)
    assert not H.has_interior()


# -- images, sums and differences --------------------------------------------

def test_linear_image_acc_segment():
    dt = 0.25
    seg = linear_image(np.array([[0.5 * dt * dt], [dt]]), box([-2], [2]))
    V = seg.vertices()
    assert len(V) == 2
    assert {tuple(v) for v in np.round(V, 12)} == {(-0.0625, -0.5), (0.0625, 0.5)}


def test_linear_image_identity_and_random(rng):
    assert set_equal(linear_image(np.eye(2), box([0, 0], [1, 1])), box([0, 0], [1, 1]))
    M = rng.normal(size=(2, 2))
    P = box([-1, 0], [2, 1])
    img = linear_image(M, P)
    Z = rng.uniform([-1, 0], [2, 1], size=(2000, 2))
    assert np.all(img.contains_many(Z @ M.T, tol=1e-9))


def test_affine_preimage():
    S = union(box([0, 0], [2, 2]))
    assert set_equal(affine_preimage(np.eye(2), S), S)
    assert set_equal(affine_preimage(2 * np.eye(2), S), union(box([0, 0], [1, 1])))
    with pytest.raises(SingularMatrix):
        affine_preimage(np.array([[1.0, 1.0], [1.0, 1.0]]), S)


def test_affine_preimage_acc_part(rng):
    dt = 0.25
    A = np.array([[1, dt], [0, 1]])
    BU = linear_image(np.array([[-0.5 * dt * dt], [-dt]]), box([-2], [2]))
    X0 = Polytope([[1, 0], [-1, 0], [0, 1], [0, -1]], [2, 1000, 1000, 1000], True)
    pre = affine_preimage(A, union(pdiff(X0, BU)))
    P = pre.parts[0]
    lo, hi = P.bbox()
    X = rng.uniform(lo, hi, size=(5000, 2))
    X = X[P.contains_many(X, "closure", 0)]
    assert np.all(pdiff(X0, BU).contains_many(X @ A.T, "closure", 1e-9))


def test_minkowski_examples(rng):
    assert set_equal(minkowski_sum(box([0], [1]), box([0], [1])), box([0], [2]))
    assert set_equal(minkowski_sum(box([0, 0], [1, 1]), Polytope.point([5, 5])), box([5, 5], [6, 6]))
    dia = Polytope([[1, 1], [1, -1], [-1, 1], [-1, -1]], [1, 1, 1, 1])
    sq = box([-0.5, -0.5], [0.5, 0.5])
    octa = minkowski_sum(dia, sq)
    assert len(octa.vertices()) == 8
    p = rng.uniform(-1, 1, size=(20000, 2))
    p = p[dia.contains_many(p, tol=0)][:3000]
    q = rng.uniform(-0.5, 0.5, size=(len(p), 2))
    assert np.all(octa.contains_many(p + q, tol=1e-9))
    # points outside the octagon are not sums: check distance to the sum of vertex sets
    X = rng.uniform(-3, 3, size=(3000, 2))
    out = ~octa.contains_many(X, tol=1e-9)
    # x is in dia + sq iff x - sq meets dia, i.e. the box around x hits the diamond
    hits = np.array([dia.intersect(box(x - 0.5, x + 0.5)).is_empty() for x in X[out][:200]])
    assert hits.all()


def test_pdiff_examples(rng):
    assert set_equal(pdiff(box([0, 0], [2, 2]), box([-0.5, -0.5], [0.5, 0.5])), box([0.5, 0.5], [1.5, 1.5]))
    P = random_polygon(rng)
    assert set_equal(pdiff(P, Polytope.point([0, 0])), P)
    seg = hull([[-0.2, -0.1], [0.2, 0.1]])
    D = pdiff(P, seg)
    X = rng.uniform(-1, 1, size=(4000, 2))
    X = X[D.contains_many(X, tol=0)]
    for q in np.linspace([-0.2, -0.1], [0.2, 0.1], 11):
        assert np.all(P.contains_many(X + q, tol=1e-9))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_minkowski_pdiff_duality(seed):
    rng = np.random.default_rng(seed)
    P = random_polygon(rng, scale=2.0)
    Q = random_polygon(rng, scale=0.3)
    D = pdiff(P, Q)
    if D.is_empty():
        return
    assert is_subset(minkowski_sum(D, Q), P)


# -- region difference and unions --------------------------------------------

def test_region_diff_trivial():
    S = union(box([0, 0], [1, 1]))
    assert set_equal(region_diff(S, PolyUnion([], dim=2)), S)
    assert region_diff(S, S).is_empty()


def test_region_diff_frame_grid():
    R = region_diff(union(box([0, 0], [3, 3])), union(box([1, 1], [2, 2])))
    assert len(R) == 4
    X = grid([0, 0], [3, 3], 301)
    expect = ~np.all((X > 1) & (X < 2), axis=1)
    assert np.array_equal(closure_of(R, X), expect)


def test_region_diff_random_membership(rng):
    """x in S \\ T  <=>  x in S and not in the interior of T, away from boundaries."""
    for _ in range(5):
        S = union(*[random_polygon(rng, rng.uniform(-1, 1, 2)) for _ in range(2)])
        T = union(*[random_polygon(rng, rng.uniform(-1, 1, 2), 0.7) for _ in range(2)])
        R = region_diff(S, T)
        X = rng.uniform(-2.5, 2.5, size=(10_000, 2))
        expect = closure_of(S, X) & ~interior_of(T, X)
        got = closure_of(R, X, 1e-9)
        bad = expect != got
        if bad.any():
            # only points on measure-zero boundaries may disagree
            Y = X[bad]
            near = np.zeros(len(Y), dtype=bool)
            for P in S.parts + T.parts:
                near |= np.min(np.abs(Y @ P.A.T - P.b), axis=1) < 1e-7
            assert near.all()


def test_set_equal_examples():
    S = union(box([0, 0], [2, 1]))
    split = union(box([0, 0], [1, 1]), box([1, 0], [2, 1]))
    assert set_equal(S, S)
    assert set_equal(S, split)
    assert not set_equal(union(box([0], [1])), union(box([0], [1 + 1e-3])))


def test_convhull_union_examples(rng):
    B = box([0, 0], [1, 1])
    assert set_equal(convhull_union(union(B)), B)
    assert set_equal(convhull_union(union(box([0], [1]), box([2], [3]))), box([0], [3]))
    parts = [random_polygon(rng, c, 0.5) for c in ([0, 0], [3, 0], [1, 2])]
    H = convhull_union(union(*parts))
    for P in parts:
        assert np.all(H.contains_many(P.vertices(), tol=1e-9))
    allv = np.vstack([P.vertices() for P in parts])
    for v in H.vertices():
        assert np.min(np.linalg.norm(allv - v, axis=1)) < 1e-9


def test_union_pdiff_single_part_matches_pdiff(rng):
    P = random_polygon(rng)
    Q = box([-0.1, -0.1], [0.1, 0.1])
    assert set_equal(union_pdiff(union(P), Q), pdiff(P, Q))


def test_union_pdiff_intervals():
    S = union(box([0], [4]), box([5], [9]))
    R = union_pdiff(S, box([-1], [1]))
    assert set_equal(R, union(box([1], [3]), box([6], [8])))


def test_union_pdiff_bridges_touching_parts():
    # [0,2] u [2,4] is one interval; the difference must not split at 2
    R = union_pdiff(union(box([0], [2]), box([2], [4])), box([-0.5], [0.5]))
    assert set_equal(R, union(box([0.5], [3.5])))


def test_union_pdiff_l_shape_grid():
    L = union(box([0, 0], [3, 1]), box([0, 0], [1, 3]))
    Q = box([-0.25, -0.25], [0.25, 0.25])
    R = union_pdiff(L, Q)
    X = grid([-0.5, -0.5], [3.5, 3.5], 81)
    offsets = grid([-0.25, -0.25], [0.25, 0.25], 5)
    expect = np.ones(len(X), dtype=bool)
    for q in offsets:
        expect &= closure_of(L, X + q, 1e-12)
    assert np.array_equal(closure_of(R, X, 1e-9), expect)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([1, 2]), st.integers(1, 4))
def test_union_pdiff_distributes_over_chain(seed, dim, links):
    """union_pdiff(X_r, Q) equals the union of union_pdiff(X_k, Q) over the chain."""
    rng = np.random.default_rng(seed)
    chain = increasing_chain(rng, dim, links)
    h = rng.uniform(0.05, 0.6, dim)
    Q = box(-h, h)
    lhs = union_pdiff(chain[-1], Q)
    rhs = PolyUnion([P for X in chain for P in union_pdiff(X, Q).parts], dim=dim)
    assert set_equal(lhs, rhs)


def test_representation_independence(rng):
    P = random_polygon(rng, scale=2.0)
    # split P along x = 0
    left = P.intersect(Polytope([[1.0, 0.0]], [0.0]))
    right = P.intersect(Polytope([[-1.0, 0.0]], [0.0]))
    Q = box([-0.2, -0.1], [0.2, 0.1])
    assert set_equal(union_pdiff(union(P), Q), union_pdiff(union(left, right), Q))
    T = union(box([-0.3, -0.3], [0.3, 0.3]))
    assert set_equal(region_diff(union(P), T), region_diff(union(left, right), T))


def test_intersect_union():
    S = union(box([0, 0], [1, 1]), box([2, 2], [3, 3]))
    I = intersect_union(S, box([0.5, 0.5], [2.5, 2.5]))
    assert set_equal(I, union(box([0.5, 0.5], [1, 1]), box([2, 2], [2.5, 2.5])))
