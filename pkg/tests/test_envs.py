import math

import numpy as np
import pytest

from tubecert import envs


@pytest.mark.parametrize("kind", envs.ENV_KINDS)
def test_spec_shapes(kind):
    env = envs.make_env(kind)
    spec = env.spec
    assert spec.state_polytope.dim == spec.n_x
    assert spec.action_polytope.dim == spec.n_u
    assert len(spec.constrained_coords) == 2
    assert spec.dt == 0.02
    assert spec.episode_len == 400
    assert spec.disturbance_scale.shape == (spec.n_x,)
    assert np.all(spec.disturbance_scale == 0.0)  # deterministic by default


def test_pendulum_hanging_equilibrium():
    f = envs.mean_step_fn("pendulum")
    x = np.array([math.pi, 0.0])
    assert np.allclose(f(x, [0.0]), x, atol=1e-12)


def test_pendulum_reward_upright():
    env = envs.make_env("pendulum")
    assert env.reward(np.array([2.0 * math.pi, 0.0]), np.array([0.0])) == pytest.approx(1.0)


def test_pendulum_energy_drift_undamped():
    p = envs.pendulum_params()
    p["b"] = 0.0
    x = np.array([2.5, 0.0])
    energy = lambda s: 0.5 * p["m"] * p["l"] ** 2 * s[1] ** 2 + p["m"] * p["g"] * p["l"] * math.cos(s[0])
    e0 = energy(x)
    worst = 0.0
    for _ in range(500):
        x = envs.pendulum_mean_step(x, np.zeros(1), p)
        worst = max(worst, abs(energy(x) - e0))
    # symplectic integrator: bounded drift, under 1% of the mgl scale
    assert worst / (p["m"] * p["g"] * p["l"]) < 0.01


def test_cartpole_origin_equilibrium():
    f = envs.mean_step_fn("cartpole")
    assert np.array_equal(f(np.zeros(4), [0.0]), np.zeros(4))


def test_twolink_rest_zero_acceleration():
    f = envs.mean_step_fn("twolink")
    env = envs.make_env("twolink")
    x = env.reset()
    x[6:8] = 0.0
    out = f(x, np.zeros(2))
    assert np.allclose(out[6:8], 0.0, atol=1e-15)  # no gravity, no coriolis at rest


def test_twolink_reward_at_reference():
    env = envs.make_env("twolink")
    x = np.zeros(8)
    x[0:2] = env.params["p_ref"]
    assert env.reward(x, np.zeros(2)) == pytest.approx(0.0)


def test_drone_hover_fixed_point():
    f = envs.mean_step_fn("drone")
    x = np.zeros(12)
    x[2] = 1.0
    xn = f(x, np.array([9.81, 0.0, 0.0, 0.0]))
    assert np.allclose(xn, x, atol=1e-12)


def test_drone_ground_contact_clamps():
    f = envs.mean_step_fn("drone")
    x = np.zeros(12)
    x[5] = -1.0  # descending at the floor
    xn = f(x, np.array([0.0, 0.0, 0.0, 0.0]))
    assert xn[2] == 0.0
    assert xn[5] >= 0.0


def test_prior_scale_one_matches_env_mean_step():
    for kind in envs.ENV_KINDS:
        env = envs.make_env(kind, seed=3)
        f = envs.mean_step_fn(kind, param_scale=1.0)
        x = env.reset()
        rng = np.random.default_rng(0)
        lo, hi = envs.action_box(env.spec)
        u = rng.uniform(lo, hi)
        assert np.allclose(f(x, u), env.mean_step(x, u), atol=1e-12)


def test_prior_scale_changes_dynamics():
    f1 = envs.mean_step_fn("pendulum", param_scale=1.0)
    f2 = envs.mean_step_fn("pendulum", param_scale=1.2)
    x = np.array([2.0, 0.3])
    assert not np.allclose(f1(x, [0.5]), f2(x, [0.5]))


def test_step_noise_bounds_and_determinism():
    env = envs.make_env("pendulum", noise_scale=1e-3, seed=5)
    det = envs.make_env("pendulum", seed=5)
    x = env.reset()
    det.state, det.t, det.terminated = x.copy(), 0, False
    for _ in range(50):
        u = np.array([0.3])
        ref = det.mean_step(env.state, u)
        xn, _, _, _ = env.step(u)
        diff = np.abs(xn - ref)
        assert diff[0] == 0.0          # disturbance only on the velocity coordinate
        assert diff[1] <= 1e-3


def test_violation_flag_is_exact_membership():
    env = envs.make_env("pendulum")
    env.reset()
    env.state = np.array([math.pi, 7.9999])
    _, _, violated, _ = env.step(np.array([1.0]))  # torque pushes rate over 8
    assert violated
    assert env.terminated
    with pytest.raises(RuntimeError):
        env.step(np.array([0.0]))


def test_episode_caps_at_length():
    env = envs.make_env("pendulum", seed=1)
    env.reset()
    done = False
    steps = 0
    while not done:
        _, _, violated, done = env.step(np.array([0.0]))
        steps += 1
        assert not violated
    assert steps == 400


def test_action_outside_admissible_set_rejected():
    env = envs.make_env("pendulum")
    env.reset()
    with pytest.raises(ValueError):
        env.step(np.array([1.5]))


def test_reset_states_feasible():
    for kind in envs.ENV_KINDS:
        env = envs.make_env(kind, seed=9)
        for _ in range(20):
            x = env.reset()
            assert env.spec.state_polytope.contains(x, tol=0.0)


def test_pendulum_random_backup_contained():
    env = envs.make_env("pendulum", noise_scale=1e-3, seed=0)
    policy = envs.backup_policy(env)
    x = env.reset()
    worst = 0.0
    for _ in range(10000):
        x, _, violated, done = env.step(policy(x, env.rng))
        assert not violated
        worst = max(worst, abs(x[0] - math.pi))
        if done:
            x = env.reset()
    # the random backup never swings anywhere near the quarter-circle band
    assert worst < math.pi / 2.0


def test_cartpole_lqr_backup_keeps_angle():
    env = envs.make_env("cartpole", seed=4)
    policy = envs.backup_policy(env)
    x = env.reset()
    for _ in range(500):
        x, _, violated, done = env.step(policy(x, env.rng))
        assert not violated
        assert abs(x[2]) <= math.radians(12.0)
        if done:
            x = env.reset()


def test_twolink_backup_keeps_effector_near_root():
    env = envs.make_env("twolink", noise_scale=1e-3, seed=1)
    policy = envs.backup_policy(env)
    x = env.reset()
    for _ in range(500):
        x, _, violated, done = env.step(policy(x, env.rng))
        assert not violated
        assert math.hypot(x[0], x[1]) <= 0.15
        if done:
            x = env.reset()


def test_drone_backup_reaches_target():
    env = envs.make_env("drone", noise_scale=1e-3, seed=2)
    policy = envs.backup_policy(env)
    x = env.reset()
    reached = None
    for t in range(500):
        x, _, violated, done = env.step(policy(x, env.rng))
        assert not violated
        if reached is None and np.linalg.norm(x[0:3] - [0.0, 0.0, 1.0]) < 0.1:
            reached = t
        if done:
            x = env.reset()
    assert reached is not None and reached < 500


def test_action_box_roundtrip():
    env = envs.make_env("drone")
    lo, hi = envs.action_box(env.spec)
    assert np.allclose(lo, [0.0, -2.0, -2.0, -2.0])
    assert np.allclose(hi, [2.0 * 9.81, 2.0, 2.0, 2.0])
