import numpy as np
import pytest

from tubecert import envs, models, tubes
from tubecert.geometry import Ellipsoid
from model_factory import affine_gaussian, LinearStub, NonlinearStub

F = np.array([[0.9, 0.2], [0.0, 0.8]])
G = np.array([[0.0], [0.1]])


def test_scalar_outer_sum_value():
    # hand evaluation: shape 0.5^2 * 1 = 0.25, noise 0.01, ratio alpha = 5,
    # (1 + 1/5) * 0.25 + (1 + 5) * 0.01 = 0.36
    m = affine_gaussian([[0.5]], [[1.0]], var=0.01)
    e1 = tubes.propagate_one(m, Ellipsoid([2.0], [[1.0]]), [0.3], [[0.0]])
    assert abs(e1.shape[0, 0] - 0.36) < 1e-12
    assert abs(e1.center[0] - 1.3) < 1e-12


def test_zero_shape_passthrough_gives_noise_ellipsoid():
    m = affine_gaussian(0.9 * np.eye(2), [[0.1], [0.2]], var=0.04)
    e = tubes.propagate_one(m, Ellipsoid(np.zeros(2), np.zeros((2, 2))),
                            [0.5], np.zeros((1, 2)))
    assert np.allclose(e.shape, 0.04 * np.eye(2), atol=1e-15)


def test_zero_variance_linear_chain_exact():
    K = np.array([[-0.5, -0.3]])
    stub = LinearStub(F, G, var=0.0)
    S = np.array([[0.3, 0.1], [0.1, 0.2]])
    Fcl = F + G @ K
    e = Ellipsoid(np.array([1.0, -0.5]), S)
    expect = S.copy()
    for _ in range(4):
        e = tubes.propagate_one(stub, e, [0.2], K)
        expect = Fcl @ expect @ Fcl.T
        assert np.abs(e.shape - expect).max() < 1e-10


def test_bundle_shapes_and_single_member_chain():
    m = affine_gaussian(F, G, var=1e-4)
    v_seq = np.array([[0.1], [0.2], [-0.1]])
    bundle = tubes.rollout_bundle([m], np.array([0.5, -0.2]), v_seq, np.zeros((1, 2)))
    assert bundle.size == 1 and bundle.horizon == 3
    e = Ellipsoid(np.array([0.5, -0.2]), np.zeros((2, 2)))
    for k in range(3):
        e = tubes.propagate_one(m, e, v_seq[k], np.zeros((1, 2)))
        got = bundle.tubes[0].ellipsoids[k + 1]
        assert np.array_equal(got.center, e.center)
        assert np.array_equal(got.shape, e.shape)


def test_identical_members_give_identical_tubes():
    ens = [affine_gaussian(F, G, var=1e-4) for _ in range(3)]
    bundle = tubes.rollout_bundle(ens, np.zeros(2), np.array([[0.3]]), np.zeros((1, 2)))
    for t in bundle.tubes[1:]:
        assert np.array_equal(t.ellipsoids[1].center, bundle.tubes[0].ellipsoids[1].center)
        assert np.array_equal(t.ellipsoids[1].shape, bundle.tubes[0].ellipsoids[1].shape)


def test_distinct_members_diverge_monotonically():
    members = []
    for off in (0.0, 0.1, 0.2):
        m = models.GaussianDynamicsModel(
            2, 1, rng=np.random.default_rng(3), prior=models.make_prior("pendulum", off))
        for W, b in m.params:
            W[:] = 0.0
            b[:] = 0.0
        members.append(m)
    v_seq = np.random.default_rng(4).uniform(-1, 1, size=(6, 1))
    bundle = tubes.rollout_bundle(members, np.array([np.pi + 0.3, 0.5]),
                                  v_seq, np.zeros((1, 2)))

    def spread(k):
        C = np.array([t.ellipsoids[k].center for t in bundle.tubes])
        return max(np.linalg.norm(a - b) for a in C for b in C)

    assert spread(6) > spread(1) > 0.0


def test_mc_soundness_linear_gaussian():
    # the single member IS the truth; per-step disturbances truncated at the
    # 1-level set of the model variance must stay inside the tube
    rng = np.random.default_rng(0)
    sig2 = np.array([2e-4, 1e-4])
    m = affine_gaussian(F, G, var=sig2)
    N = 10
    v_seq = rng.uniform(-1, 1, size=(N, 1))
    x_t = np.array([0.5, -0.2])
    bundle = tubes.rollout_bundle([m], x_t, v_seq, K=np.zeros((1, 2)))
    n_mc = 10_000
    X = np.tile(x_t, (n_mc, 1))
    ok = np.ones(n_mc, dtype=bool)
    for k in range(N):
        E = bundle.tubes[0].ellipsoids[k + 1]
        w = rng.standard_normal((n_mc, 2)) * np.sqrt(sig2)
        lvl = np.sqrt(np.sum(w ** 2 / sig2, axis=1))
        w = w / np.maximum(lvl, 1.0)[:, None]
        X = X @ F.T + v_seq[k] @ G.T + w
        d = X - E.center
        q = np.einsum("bi,ij,bj->b", d, np.linalg.inv(E.shape), d)
        ok &= q <= 1.0 + 1e-9
    assert ok.mean() >= 0.99


def test_first_order_consistency_small_noise():
    fn = envs.mean_step_fn("pendulum", 1.0)
    nl = NonlinearStub(fn, 2, 1, var=1e-12)
    rng = np.random.default_rng(2)
    v_seq = rng.uniform(-1, 1, size=(5, 1))
    x0 = np.array([np.pi, 0.0])
    bundle = tubes.rollout_bundle([nl], x0, v_seq, K=np.zeros((1, 2)))
    for _ in range(200):
        x = x0.copy()
        traj = [x.copy()]
        for k in range(5):
            w = rng.standard_normal(2) * 1e-6
            w = w / max(np.sqrt(np.sum(w ** 2 / 1e-12)), 1.0)
            x = fn(x, v_seq[k]) + w
            traj.append(x.copy())
        assert tubes.captures(bundle, np.array(traj)).overall


def test_captures_centers_and_far_state():
    m = affine_gaussian(F, G, var=1e-4)
    bundle = tubes.rollout_bundle([m], np.zeros(2), np.array([[0.1], [0.2]]),
                                  np.zeros((1, 2)))
    assert tubes.captures(bundle, bundle.tubes[0].centers).overall
    far = bundle.tubes[0].centers.copy()
    far[2] = [100.0, 100.0]
    rep = tubes.captures(bundle, far)
    assert not rep.captured[2] and not rep.overall


def test_captures_hull_between_disjoint_balls():
    e0 = Ellipsoid(np.zeros(2), np.zeros((2, 2)))
    ta = tubes.Tube([e0, Ellipsoid([3.0, 0.0], np.eye(2))], [[0.0]], np.zeros((1, 2)))
    tb = tubes.Tube([e0, Ellipsoid([-3.0, 0.0], np.eye(2))], [[0.0]], np.zeros((1, 2)))
    rep = tubes.captures(tubes.TubeBundle([ta, tb]), np.zeros((2, 2)))
    assert not rep.in_ellipsoid[1]
    assert rep.captured[1] and rep.overall


def test_trace_nondecreasing_with_zero_feedback():
    m = affine_gaussian(F, G, var=np.array([3e-4, 1e-4]))
    bundle = tubes.rollout_bundle([m], np.array([0.5, -0.2]),
                                  np.random.default_rng(5).uniform(-1, 1, (10, 1)),
                                  np.zeros((1, 2)))
    tr = [np.trace(e.shape) for e in bundle.tubes[0].ellipsoids]
    assert all(tr[i + 1] >= tr[i] for i in range(len(tr) - 1))


def test_propagation_blowup_raises():
    bad = LinearStub(F, G, var=np.nan)
    with pytest.raises(tubes.TubeBlowup):
        tubes.propagate_one(bad, Ellipsoid(np.zeros(2), np.zeros((2, 2))),
                            [0.0], np.zeros((1, 2)))


def test_tube_and_bundle_validation():
    e0 = Ellipsoid(np.zeros(2), np.zeros((2, 2)))
    e1 = Ellipsoid(np.ones(2), np.eye(2))
    with pytest.raises(ValueError):
        tubes.Tube([e1, e1], [[0.0]], np.zeros((1, 2)))  # nonzero start shape
    with pytest.raises(ValueError):
        tubes.Tube([e0, e1], np.zeros((2, 1)), np.zeros((1, 2)))  # count mismatch
    ta = tubes.Tube([e0, e1], [[0.0]], np.zeros((1, 2)))
    tb = tubes.Tube([e0, e1, e1], [[0.0], [0.0]], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        tubes.TubeBundle([ta, tb])
    tc = tubes.Tube([Ellipsoid(np.ones(2), np.zeros((2, 2))), e1], [[0.0]],
                    np.zeros((1, 2)))
    with pytest.raises(ValueError):
        tubes.TubeBundle([ta, tc])
    with pytest.raises(ValueError):
        tubes.TubeBundle([])
    m = affine_gaussian(F, G)
    with pytest.raises(ValueError):
        tubes.rollout_bundle([m], np.zeros(2), np.zeros((0, 1)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        tubes.captures(tubes.TubeBundle([ta]), np.zeros((3, 2)))
