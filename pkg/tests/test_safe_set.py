from itertools import combinations

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from tubecert import datasets, envs, safe_set
from tubecert.geometry import Polytope


def triangle_oracle(P):
    # extreme points = points not strictly inside any triangle of the others
    keep = []
    n = len(P)
    idx = np.arange(n)
    for p_i in range(n):
        p = P[p_i]
        others = P[idx != p_i]
        inside = False
        for a, b, c in combinations(range(len(others)), 3):
            A, B, C = others[a], others[b], others[c]
            d1 = (B[0] - A[0]) * (p[1] - A[1]) - (B[1] - A[1]) * (p[0] - A[0])
            d2 = (C[0] - B[0]) * (p[1] - B[1]) - (C[1] - B[1]) * (p[0] - B[0])
            d3 = (A[0] - C[0]) * (p[1] - C[1]) - (A[1] - C[1]) * (p[0] - C[0])
            if (d1 > 0 and d2 > 0 and d3 > 0) or (d1 < 0 and d2 < 0 and d3 < 0):
                inside = True
                break
        if not inside:
            keep.append(tuple(p))
    return set(keep)


def collect_pendulum_dataset(steps, seed=0):
    env = envs.make_env("pendulum", noise_scale=1e-3, seed=seed)
    backup = envs.backup_policy(env)
    rng = np.random.default_rng(seed)
    ds = datasets.TransitionDataset(2, 1)
    x = env.reset()
    for t in range(steps):
        u = backup(x, rng)
        xn, r, viol, done = env.step(u)
        assert not viol
        ds.append(x, u, xn, r, True, done, t % 400, t // 400)
        x = env.reset() if done else xn
    return env, ds


def test_square_hull_with_interior_points():
    rng = np.random.default_rng(0)
    pts = np.vstack([[[0, 0], [1, 0], [1, 1], [0, 1]], rng.uniform(0.1, 0.9, (50, 2))])
    h = safe_set.convex_hull_2d(pts)
    assert h.shape == (4, 2)
    assert set(map(tuple, h)) == {(0, 0), (1, 0), (1, 1), (0, 1)}
    # CCW: positive area
    assert safe_set.polygon_area(h) == 1.0


def test_collinear_points_give_extremes():
    h = safe_set.convex_hull_2d(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    assert set(map(tuple, h)) == {(0.0, 0.0), (2.0, 2.0)}


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        safe_set.convex_hull_2d(np.zeros((0, 2)))


def test_hull_matches_triangle_oracle():
    # the literal extreme-point oracle is O(n^4); run it at n=80
    P = np.random.default_rng(1).normal(size=(80, 2))
    assert set(map(tuple, safe_set.convex_hull_2d(P))) == triangle_oracle(P)


def test_hull_matches_qhull_on_1000_points():
    P = np.random.default_rng(2).normal(size=(1000, 2))
    q = ConvexHull(P)
    assert set(map(tuple, safe_set.convex_hull_2d(P))) == set(map(tuple, P[q.vertices]))


def test_unit_square_polytope_rows():
    poly = safe_set.hull_to_polytope(
        np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]]), (0, 1), 2)
    rows = sorted(map(tuple, np.column_stack([poly.H, poly.d]).round(12)))
    assert rows == [(-1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0)]


def test_vertices_graze_rows_and_interior_satisfies():
    rng = np.random.default_rng(3)
    v = safe_set.convex_hull_2d(rng.normal(size=(40, 2)))
    poly = safe_set.hull_to_polytope(v, (0, 1), 2)
    mv = poly.H @ v.T - poly.d[:, None]
    assert np.all(np.any(np.abs(mv) < 1e-9, axis=0))
    w = rng.dirichlet(np.ones(len(v)), size=10_000)
    margins = poly.H @ (w @ v).T - poly.d[:, None]
    assert margins.max() <= 1e-9


def test_degenerate_hulls_inflate_to_box():
    poly = safe_set.hull_to_polytope(np.array([[1.0, 2.0]]), (0, 2), 4)
    assert poly.H.shape == (4, 4)
    assert np.all(poly.H[:, [1, 3]] == 0.0)
    for pt, inside in (([1.0, 2.0], True), ([1.0009, 2.0], True), ([1.002, 2.0], False)):
        x = np.zeros(4)
        x[0], x[2] = pt
        assert poly.contains(x, tol=0.0) == inside
    seg = safe_set.hull_to_polytope(np.array([[0.0, 0.0], [1.0, 0.0]]), (0, 1), 2)
    assert seg.contains(np.array([0.5, 0.0005]), tol=0.0)
    assert not seg.contains(np.array([0.5, 0.002]), tol=0.0)


def test_estimate_square_corners_and_flag_filter():
    spec = envs.make_env("pendulum").spec
    corners = np.array([[3.0, -0.5], [3.2, -0.5], [3.2, 0.5], [3.0, 0.5]])
    ds = datasets.TransitionDataset(2, 1)
    for c in corners:
        ds.append(c, [0.0], c, 0.0, True, False)
    est = safe_set.estimate_safe_set(ds, 0, spec)
    assert set(map(tuple, est.vertices)) == set(map(tuple, corners))
    # infeasible outlier must not move the estimate
    ds.append([4.5, 3.0], [0.0], [4.5, 3.0], 0.0, False, False)
    est2 = safe_set.estimate_safe_set(ds, 1, spec)
    assert np.array_equal(est2.vertices, est.vertices)


def test_estimate_requires_feasible_states():
    spec = envs.make_env("pendulum").spec
    ds = datasets.TransitionDataset(2, 1)
    ds.append([3.0, 0.0], [0.0], [3.0, 0.0], 0.0, False, False)
    with pytest.raises(ValueError):
        safe_set.estimate_safe_set(ds, 0, spec)


def test_pendulum_backup_hull_stays_in_claimed_range():
    env, ds = collect_pendulum_dataset(4000)
    est = safe_set.estimate_safe_set(ds, 0, env.spec)
    lo = est.vertices.min(axis=0)
    hi = est.vertices.max(axis=0)
    assert lo[0] >= np.pi / 2 and hi[0] <= 3 * np.pi / 2
    assert lo[1] >= -8.0 and hi[1] <= 8.0
    assert est.area > 0.0


def test_monotone_under_data_growth():
    env, ds = collect_pendulum_dataset(3000)
    sub = type("D", (), {"x": ds.x[:800], "feasible": ds.feasible[:800]})
    est_sub = safe_set.estimate_safe_set(sub, 0, env.spec)
    est = safe_set.estimate_safe_set(ds, 0, env.spec)
    H2 = est.polytope.H[:, [0, 1]]
    assert np.all(H2 @ est_sub.vertices.T - est.polytope.d[:, None] <= 1e-9)
    assert est_sub.area <= est.area + 1e-12


def test_clip_to_state_rows():
    spec = envs.make_env("pendulum").spec
    # hull poking past the angle upper bound 25 pi / 12 gets shaved
    big = np.array([[6.0, -1.0], [7.5, -1.0], [7.5, 1.0], [6.0, 1.0]])
    clipped = safe_set.clip_to_state_rows(big, spec)
    assert clipped[:, 0].max() <= 25 * np.pi / 12 + 1e-12
    assert clipped[:, 0].min() == 6.0


def test_selector_delay_and_epoch_zero():
    sel = safe_set.TerminalSetSelector(delay=3)
    base = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    for j in range(6):
        sel.record(safe_set.SafeSetEstimate(j, base + 0.01 * j, (0, 1), 2))
    for j in (0, 1, 2, 3):
        assert sel.select(j) is sel.history[max(0, j - 3)]
    assert sel.select(5) is sel.history[2]
    assert np.array_equal(sel.select(5).vertices, base + 0.02)
    with pytest.raises(ValueError):
        sel.select(20)
    with pytest.raises(ValueError):
        sel.record(safe_set.SafeSetEstimate(9, base, (0, 1), 2))


def test_estimate_json_roundtrip_bit_exact():
    import json
    env, ds = collect_pendulum_dataset(1500)
    est = safe_set.estimate_safe_set(ds, 4, env.spec)
    back = safe_set.SafeSetEstimate.from_dict(json.loads(json.dumps(est.to_dict())))
    assert back.epoch == 4
    assert np.array_equal(back.vertices, est.vertices)
    assert np.array_equal(back.polytope.H, est.polytope.H)
    assert np.array_equal(back.polytope.d, est.polytope.d)


def test_convexity_invariant_rejected_on_bad_vertices():
    bad = np.array([[0.0, 0], [1, 0], [0.2, 0.1], [0, 1]])
    with pytest.raises(ValueError):
        safe_set.SafeSetEstimate(0, bad, (0, 1), 2)
