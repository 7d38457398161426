"""Benchmark control environments with polytopic constraints.

All environments integrate with semi-implicit Euler at dt = 0.02 (50 Hz),
apply an additive bounded uniform disturbance on velocity coordinates, flag
constraint violations by exact polytope membership, and terminate episodes
early on violation.  The deterministic mean step of every environment is
exposed as a pure function of (state, action, params) so model priors can
share it.
"""

import math
from typing import Callable, Dict, Optional

import numpy as np
from scipy.linalg import solve_discrete_are

from tubecert.geometry import Polytope

DT = 0.02
EPISODE_LEN = 400

ENV_KINDS = ("pendulum", "cartpole", "twolink", "drone")


def _box_rows(dim, entries):
    """Half-space rows for per-coordinate bounds given as {idx: (lo, hi)}."""
    H, d = [], []
    for idx, (lo, hi) in entries.items():
        if hi is not None:
            row = np.zeros(dim)
            row[idx] = 1.0
            H.append(row)
            d.append(hi)
        if lo is not None:
            row = np.zeros(dim)
            row[idx] = -1.0
            H.append(row)
            d.append(-lo)
    return Polytope(np.array(H), np.array(d))


class EnvSpec:
    """Static description of an environment instance."""

    def __init__(self, kind, n_x, n_u, dt, state_polytope, action_polytope,
                 constrained_coords, episode_len, disturbance_scale, params):
        self.kind = kind
        self.n_x = n_x
        self.n_u = n_u
        self.dt = dt
        self.state_polytope = state_polytope
        self.action_polytope = action_polytope
        # pair of state indices spanning the plane used for safe-set geometry
        self.constrained_coords = constrained_coords
        self.episode_len = episode_len
        self.disturbance_scale = disturbance_scale  # per-coordinate vector
        self.params = dict(params)


# --- deterministic mean steps (pure, shared with model priors) ---------------


def pendulum_params():
    # sized so the unit torque can swing the arm up within one episode
    # (mgl = 1.72 vs |u| <= 1) while random torques rock it only ~0.6 rad,
    # and the swing-up rate 2*sqrt(g/l) = 7.5 stays inside the |rate| <= 8 box
    return {"m": 0.25, "l": 0.7, "b": 0.1, "g": 9.81, "dt": DT}


def pendulum_mean_step(x, u, p):
    ang, rate = x[0], x[1]
    torque = u[0]
    acc = (torque + p["m"] * p["g"] * p["l"] * math.sin(ang) - p["b"] * rate) / (
        p["m"] * p["l"] ** 2
    )
    rate2 = rate + p["dt"] * acc
    return np.array([ang + p["dt"] * rate2, rate2])


def cartpole_params():
    return {"m_c": 1.0, "m_p": 0.1, "l": 0.5, "g": 9.81, "dt": DT}


def cartpole_mean_step(x, u, p):
    pos, vel, ang, avel = x
    f = u[0]
    s, c = math.sin(ang), math.cos(ang)
    alpha = p["m_c"] + p["m_p"] * s * s
    m = p["m_c"] + p["m_p"]
    pos_acc = (f + p["m_p"] * s * (p["l"] * avel * avel + p["g"] * c)) / alpha
    ang_acc = (-f * c - s * (p["m_p"] * p["l"] * avel * avel * c + m * p["g"])) / (
        p["l"] * alpha
    )
    vel2 = vel + p["dt"] * pos_acc
    avel2 = avel + p["dt"] * ang_acc
    return np.array([pos + p["dt"] * vel2, vel2, ang + p["dt"] * avel2, avel2])


def twolink_params():
    # planar two-link arm, no gravity; inertial values from the standard
    # human-arm model used in iterative-LQR benchmarks
    return {
        "l1": 0.3, "l2": 0.33, "m2": 1.0, "s2": 0.16,
        "i1": 0.025, "i2": 0.045,
        "b11": 0.05, "b12": 0.025, "b22": 0.05,
        "p_ref": (0.2, 0.2), "dt": DT,
    }


def _twolink_fk(q1, q2, p):
    ex = p["l1"] * math.cos(q1) + p["l2"] * math.cos(q1 + q2)
    ey = p["l1"] * math.sin(q1) + p["l2"] * math.sin(q1 + q2)
    return ex, ey


def twolink_mean_step(x, u, p):
    # joints and rates are the minimal coordinates; end-effector entries of
    # the output are recomputed from them
    q1, q2, dq1, dq2 = x[4], x[5], x[6], x[7]
    a1 = p["i1"] + p["i2"] + p["m2"] * p["l1"] ** 2
    a2 = p["m2"] * p["l1"] * p["s2"]
    a3 = p["i2"]
    c2 = math.cos(q2)
    m11 = a1 + 2.0 * a2 * c2
    m12 = a3 + a2 * c2
    det = m11 * a3 - m12 * m12
    s2v = math.sin(q2)
    cor1 = -dq2 * (2.0 * dq1 + dq2) * a2 * s2v
    cor2 = dq1 * dq1 * a2 * s2v
    fr1 = p["b11"] * dq1 + p["b12"] * dq2
    fr2 = p["b12"] * dq1 + p["b22"] * dq2
    r1 = u[0] - cor1 - fr1
    r2 = u[1] - cor2 - fr2
    ddq1 = (a3 * r1 - m12 * r2) / det
    ddq2 = (m11 * r2 - m12 * r1) / det
    dq1n = dq1 + p["dt"] * ddq1
    dq2n = dq2 + p["dt"] * ddq2
    q1n = q1 + p["dt"] * dq1n
    q2n = q2 + p["dt"] * dq2n
    ex, ey = _twolink_fk(q1n, q2n, p)
    rx, ry = p["p_ref"]
    return np.array([ex, ey, ex - rx, ey - ry, q1n, q2n, dq1n, dq2n])


def drone_params():
    return {
        "m": 0.5, "g": 9.81, "arm": 0.17, "kappa": 0.016,
        "ixx": 3.65e-3, "iyy": 3.68e-3, "izz": 7.03e-3,
        "f_max": 0.5 * 9.81,          # per-rotor force ceiling (4x hover total)
        "rate_gain": 20.0,            # inner rate loop bandwidth, 1/s
        "p_ref": (0.0, 0.0, 1.0), "dt": DT,
    }


def _rotation_body_to_world(roll, pitch, yaw):
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def drone_mean_step(x, u, p):
    pos = x[0:3]
    vel = x[3:6]
    roll, pitch, yaw = x[6:9]
    omega = x[9:12]
    inertia = np.array([p["ixx"], p["iyy"], p["izz"]])

    # inner attitude-rate loop: desired torques from the rate error, then
    # rotor forces through the torque-allocation map (clipped to [0, f_max])
    torque_des = p["rate_gain"] * inertia * (u[1:4] - omega)
    thrust_des = p["m"] * u[0]
    a = p["arm"] / math.sqrt(2.0)
    k = p["kappa"]
    alloc = np.array([
        [1.0, 1.0, 1.0, 1.0],
        [-a, -a, a, a],
        [-a, a, a, -a],
        [-k, k, -k, k],
    ])
    forces = np.linalg.solve(alloc, np.concatenate([[thrust_des], torque_des]))
    forces = np.clip(forces, 0.0, p["f_max"])
    realized = alloc @ forces
    thrust, torque = realized[0], realized[1:4]

    R = _rotation_body_to_world(roll, pitch, yaw)
    accel = R @ np.array([0.0, 0.0, thrust / p["m"]]) - np.array([0.0, 0.0, p["g"]])
    omega_dot = (torque - np.cross(omega, inertia * omega)) / inertia

    vel2 = vel + p["dt"] * accel
    pos2 = pos + p["dt"] * vel2
    omega2 = omega + p["dt"] * omega_dot
    # body rates to Euler-angle rates (ZYX convention)
    cr, sr = math.cos(roll), math.sin(roll)
    cp = max(math.cos(pitch), 1e-6)
    tp = math.sin(pitch) / cp
    ang_rates = np.array([
        omega2[0] + sr * tp * omega2[1] + cr * tp * omega2[2],
        cr * omega2[1] - sr * omega2[2],
        (sr * omega2[1] + cr * omega2[2]) / cp,
    ])
    angles2 = np.array([roll, pitch, yaw]) + p["dt"] * ang_rates

    # ground contact: the vehicle cannot fall through the floor
    if pos2[2] < 0.0:
        pos2[2] = 0.0
        vel2[2] = max(vel2[2], 0.0)
    return np.concatenate([pos2, vel2, angles2, omega2])


_MEAN_STEPS: Dict[str, Callable] = {
    "pendulum": pendulum_mean_step,
    "cartpole": cartpole_mean_step,
    "twolink": twolink_mean_step,
    "drone": drone_mean_step,
}

_PARAM_FNS = {
    "pendulum": pendulum_params,
    "cartpole": cartpole_params,
    "twolink": twolink_params,
    "drone": drone_params,
}

# physical parameters eligible for prior-offset scaling (g and dt never scale)
_SCALABLE = {
    "pendulum": ("m", "l", "b"),
    "cartpole": ("m_c", "m_p", "l"),
    "twolink": ("l1", "l2", "m2", "s2", "i1", "i2", "b11", "b12", "b22"),
    "drone": ("m", "arm", "kappa", "ixx", "iyy", "izz"),
}


def mean_step_fn(kind: str, param_scale: float = 1.0) -> Callable:
    """Pure deterministic step x, u -> x_next for an environment kind.

    ``param_scale`` multiplies every scalable physical parameter; 1.0
    reproduces the environment's own mean dynamics exactly.
    """
    if kind not in _MEAN_STEPS:
        raise ValueError(f"unknown environment kind {kind!r}")
    p = _PARAM_FNS[kind]()
    for name in _SCALABLE[kind]:
        p[name] = p[name] * param_scale
    step = _MEAN_STEPS[kind]

    def f(x, u):
        return step(np.asarray(x, dtype=float), np.asarray(u, dtype=float), p)

    return f


# --- environment wrapper ------------------------------------------------------


class Environment:
    """Stateful simulation wrapper around a mean step plus disturbance."""

    def __init__(self, kind: str, noise_scale: float = 0.0, seed: int = 0):
        if kind not in _MEAN_STEPS:
            raise ValueError(f"unknown environment kind {kind!r}")
        self.kind = kind
        self.params = _PARAM_FNS[kind]()
        self.rng = np.random.default_rng(seed)
        self.spec = _build_spec(kind, self.params, noise_scale)
        self._mean = _MEAN_STEPS[kind]
        self.state: Optional[np.ndarray] = None
        self.t = 0
        self.terminated = False

    def mean_step(self, x, u):
        return self._mean(np.asarray(x, dtype=float), np.asarray(u, dtype=float), self.params)

    def reward(self, x_next, u):
        return _reward(self.kind, np.asarray(x_next, dtype=float),
                       np.asarray(u, dtype=float), self.params)

    def reset(self) -> np.ndarray:
        self.state = _sample_initial(self.kind, self.params, self.rng)
        self.t = 0
        self.terminated = False
        return self.state.copy()

    def step(self, u):
        """Advance one step; returns (x_next, reward, violated, terminated)."""
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        if self.terminated:
            raise RuntimeError("episode has terminated; call reset()")
        u = np.asarray(u, dtype=float).reshape(-1)
        if np.any(self.spec.action_polytope.margins(u) > 1e-9):
            raise ValueError(f"action {u} outside the admissible set")
        x_next = self._mean(self.state, u, self.params)
        scale = self.spec.disturbance_scale
        if np.any(scale > 0.0):
            x_next = x_next + self.rng.uniform(-scale, scale)
        violated = not self.spec.state_polytope.contains(x_next, tol=0.0)
        r = self.reward(x_next, u)
        self.state = x_next
        self.t += 1
        self.terminated = violated or self.t >= self.spec.episode_len
        return x_next.copy(), r, violated, self.terminated


def make_env(kind: str, noise_scale: float = 0.0, seed: int = 0) -> Environment:
    return Environment(kind, noise_scale=noise_scale, seed=seed)


def _build_spec(kind, p, noise_scale):
    if kind == "pendulum":
        state_poly = _box_rows(2, {0: (math.pi / 4.0, 25.0 * math.pi / 12.0), 1: (-8.0, 8.0)})
        action_poly = _box_rows(1, {0: (-1.0, 1.0)})
        vel_idx = [1]
        coords, n_x, n_u = (0, 1), 2, 1
    elif kind == "cartpole":
        ang = math.radians(12.0)
        state_poly = _box_rows(4, {0: (-2.4, 2.4), 2: (-ang, ang)})
        action_poly = _box_rows(1, {0: (-10.0, 10.0)})
        vel_idx = [1, 3]
        coords, n_x, n_u = (0, 2), 4, 1
    elif kind == "twolink":
        state_poly = _box_rows(8, {0: (-0.5, 0.5), 1: (-0.5, 0.5)})
        action_poly = _box_rows(2, {0: (-1.0, 1.0), 1: (-1.0, 1.0)})
        vel_idx = [6, 7]
        coords, n_x, n_u = (0, 1), 8, 2
    elif kind == "drone":
        tilt = math.radians(20.0)
        state_poly = _box_rows(12, {2: (0.0, 2.0), 6: (-tilt, tilt), 7: (-tilt, tilt)})
        action_poly = _box_rows(
            4, {0: (0.0, 2.0 * p["g"]), 1: (-2.0, 2.0), 2: (-2.0, 2.0), 3: (-2.0, 2.0)}
        )
        vel_idx = [3, 4, 5, 9, 10, 11]
        coords, n_x, n_u = (2, 5), 12, 4
    else:
        raise ValueError(kind)
    scale = np.zeros(n_x)
    scale[vel_idx] = noise_scale
    return EnvSpec(kind, n_x, n_u, DT, state_poly, action_poly, coords,
                   EPISODE_LEN, scale, p)


def _reward(kind, x_next, u, p):
    if kind == "pendulum":
        return float(math.cos(x_next[0]) - 1e-3 * x_next[1] ** 2 - 1e-3 * u[0] ** 2)
    if kind == "cartpole":
        # implemented as a penalty (negated quadratic); see README note
        return float(-(x_next @ x_next) - 1e-4 * float(u @ u))
    if kind == "twolink":
        return float(-math.hypot(x_next[2], x_next[3]) - 1e-3 * float(u @ u))
    if kind == "drone":
        dp = x_next[0:3] - np.asarray(p["p_ref"])
        return float(-(dp @ dp))
    raise ValueError(kind)


def _sample_initial(kind, p, rng):
    if kind == "pendulum":
        return np.array([
            math.pi + rng.uniform(-0.1, 0.1),
            rng.uniform(-0.05, 0.05),
        ])
    if kind == "cartpole":
        return rng.uniform(-0.05, 0.05, size=4)
    if kind == "twolink":
        q = _TWOLINK_REST + rng.uniform(-0.05, 0.05, size=2)
        dq = rng.uniform(-0.05, 0.05, size=2)
        ex, ey = _twolink_fk(q[0], q[1], p)
        rx, ry = p["p_ref"]
        return np.array([ex, ey, ex - rx, ey - ry, q[0], q[1], dq[0], dq[1]])
    if kind == "drone":
        x = np.zeros(12)
        x[0:2] = rng.uniform(-0.02, 0.02, size=2)
        return x
    raise ValueError(kind)


# rest pose keeps the end effector folded near the arm root
_TWOLINK_REST = np.array([math.pi / 2.0, 2.9])


# --- backup policies ----------------------------------------------------------


def _cartpole_lqr_gain(p):
    """Discrete LQR gain for the mean step linearized at the origin."""
    h = 1e-6
    x0 = np.zeros(4)
    u0 = np.zeros(1)
    A = np.zeros((4, 4))
    for i in range(4):
        dx = np.zeros(4)
        dx[i] = h
        A[:, i] = (cartpole_mean_step(x0 + dx, u0, p) - cartpole_mean_step(x0 - dx, u0, p)) / (2 * h)
    B = ((cartpole_mean_step(x0, u0 + h, p) - cartpole_mean_step(x0, u0 - h, p)) / (2 * h)).reshape(4, 1)
    Q = np.diag([1.0, 1.0, 10.0, 1.0])
    R = np.array([[0.1]])
    P = solve_discrete_are(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def backup_policy(env: Environment) -> Callable:
    """Conservative controller used to seed data and to catch failures.

    Returns a callable policy(x, rng) -> u that always emits actions inside
    the admissible set.
    """
    kind = env.kind
    p = env.params
    if kind == "pendulum":
        def policy(x, rng):
            return np.array([rng.uniform(-1.0, 1.0)])
        return policy
    if kind == "cartpole":
        K = _cartpole_lqr_gain(p)

        def policy(x, rng):
            return np.clip(-K @ x, -10.0, 10.0)
        return policy
    if kind == "twolink":
        def policy(x, rng):
            q = x[4:6]
            dq = x[6:8]
            tau = 5.0 * (_TWOLINK_REST - q) - 1.0 * dq
            return np.clip(tau, -1.0, 1.0)
        return policy
    if kind == "drone":
        g = p["g"]

        def policy(x, rng):
            pos, vel = x[0:3], x[3:6]
            angles = x[6:9]
            c = g + 3.0 * (p["p_ref"][2] - pos[2]) - 3.5 * vel[2]
            # thrust tilts as accel ~ (g*pitch, -g*roll); level toward the
            # attitude that pushes the position error down
            rate_des = np.array([
                -4.0 * (angles[0] - 0.3 * pos[1] - 0.4 * vel[1]),
                -4.0 * (angles[1] + 0.3 * pos[0] + 0.4 * vel[0]),
                -2.0 * angles[2],
            ])
            u = np.concatenate([[c], rate_des])
            lo = np.array([0.0, -2.0, -2.0, -2.0])
            hi = np.array([2.0 * g, 2.0, 2.0, 2.0])
            return np.clip(u, lo, hi)
        return policy
    raise ValueError(kind)


def action_box(spec: EnvSpec):
    """Per-coordinate (lo, hi) bounds recovered from a box action polytope."""
    lo = np.full(spec.n_u, -np.inf)
    hi = np.full(spec.n_u, np.inf)
    for row, off in zip(spec.action_polytope.H, spec.action_polytope.d):
        nz = np.nonzero(row)[0]
        if nz.size != 1:
            raise ValueError("action polytope is not axis-aligned")
        j = nz[0]
        if row[j] > 0:
            hi[j] = min(hi[j], off / row[j])
        else:
            lo[j] = max(lo[j], off / row[j])
    return lo, hi
