"""Model-based actor-critic that proposes actions for certification.

A compact soft actor-critic: a squashed-Gaussian policy, two action-value
critics with slowly-tracking target copies, behavior-cloning pre-training on
the initial safe dataset, and short policy rollouts through the dynamics
ensemble to augment real data.  The learner is deliberately constraint-blind;
keeping proposals safe is entirely the certifier's job, so nothing in this
module accepts a constraint set.
"""

import json
from typing import Callable, List, Optional, Tuple

import numpy as np

from tubecert import nn
from tubecert.datasets import TransitionDataset

LOG_STD_LO = -5.0
LOG_STD_HI = 2.0
CRITIC_STEPS = 8
_CKPT_VERSION = 1


class PolicyNetwork:
    """State -> squashed Gaussian over the action box."""

    def __init__(self, n_x: int, n_u: int, low, high, hidden=(100, 100),
                 seed: int = 0, zero_init: bool = False):
        self.n_x = int(n_x)
        self.n_u = int(n_u)
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        if self.low.shape != (self.n_u,) or np.any(self.high <= self.low):
            raise ValueError("bad action bounds")
        self.center = 0.5 * (self.low + self.high)
        self.half = 0.5 * (self.high - self.low)
        self.hidden = tuple(int(h) for h in hidden)
        self.sizes = [self.n_x, *self.hidden, 2 * self.n_u]
        rng = np.random.default_rng(seed)
        self.params = nn.init_mlp(self.sizes, rng, out_zero=zero_init)
        self.exploration_scale = 1.0     # annealed toward 0 by the trainer

    def heads(self, X) -> Tuple[np.ndarray, np.ndarray, np.ndarray, tuple]:
        """Pre-squash mean, clamped log-std, its clamp derivative, cache."""
        out, cache = nn.mlp_forward(self.params, X, activation="relu")
        m = out[:, : self.n_u]
        s, ds = nn.soft_clamp(out[:, self.n_u:], LOG_STD_LO, LOG_STD_HI)
        return m, s, ds, cache

    def squash(self, xi) -> np.ndarray:
        return self.center + self.half * np.tanh(xi)


def sample_action(policy: PolicyNetwork, x, rng: Optional[np.random.Generator] = None,
                  deterministic: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    m, s, _, _ = policy.heads(x)
    if deterministic:
        return policy.squash(m[0])
    if rng is None:
        rng = np.random.default_rng()
    eps = rng.standard_normal(policy.n_u)
    sigma = np.exp(s[0]) * policy.exploration_scale
    return policy.squash(m[0] + sigma * eps)


def _log_prob_terms(policy, m, s, eps):
    """Log density of the squashed draw xi = m + exp(s)*eps, per row."""
    xi = m + np.exp(s) * eps
    t = np.tanh(xi)
    # log(1 - tanh(xi)^2) computed stably
    log_jac = 2.0 * (np.log(2.0) - xi - nn.softplus(-2.0 * xi))
    logp = (-0.5 * eps ** 2 - s - 0.5 * np.log(2.0 * np.pi)
            - np.log(policy.half) - log_jac)
    return logp.sum(axis=1), xi, t


class _Critic:
    def __init__(self, n_x, n_u, hidden, seed):
        rng = np.random.default_rng(seed)
        self.sizes = [n_x + n_u, *hidden, 1]
        self.params = nn.init_mlp(self.sizes, rng)

    def value(self, X, A):
        inp = np.hstack([X, A])
        q, cache = nn.mlp_forward(self.params, inp, activation="relu")
        return q[:, 0], cache


class ActorCriticState:
    """Policy, twin critics with target copies, and their optimizers."""

    def __init__(self, n_x: int, n_u: int, low, high, hidden=(100, 100),
                 gamma: float = 0.99, tau: float = 0.005,
                 entropy_weight: float = 0.05, lr: float = 3e-4,
                 batch_size: int = 256, seed: int = 0):
        self.policy = PolicyNetwork(n_x, n_u, low, high, hidden, seed=seed)
        self.q1 = _Critic(n_x, n_u, hidden, seed + 1)
        self.q2 = _Critic(n_x, n_u, hidden, seed + 2)
        self.t1 = _Critic(n_x, n_u, hidden, seed + 1)
        self.t2 = _Critic(n_x, n_u, hidden, seed + 2)
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.alpha = float(entropy_weight)
        self.batch_size = int(batch_size)
        self.opt_pi = nn.Adam(self.policy.params, lr=lr)
        self.opt_q1 = nn.Adam(self.q1.params, lr=lr)
        self.opt_q2 = nn.Adam(self.q2.params, lr=lr)
        self.rng = np.random.default_rng(seed + 3)

    def _polyak(self):
        for tgt, src in ((self.t1, self.q1), (self.t2, self.q2)):
            for (TW, Tb), (W, b) in zip(tgt.params, src.params):
                TW *= 1.0 - self.tau
                TW += self.tau * W
                Tb *= 1.0 - self.tau
                Tb += self.tau * b


def real_rows_per_batch(batch_size: int, real_ratio: float) -> int:
    """Round-half-up share of real rows in a mixed minibatch."""
    return int(np.floor(batch_size * real_ratio + 0.5))


def pretrain(policy: PolicyNetwork, dataset, epochs: int = 50,
             batch_size: int = 256, lr: float = 1e-3,
             seed: int = 0) -> List[float]:
    """Behavior cloning: fit the squashed policy mean to recorded actions."""
    n = dataset.x.shape[0]
    if n < 1000:
        raise ValueError(f"pre-training needs at least 1000 rows, got {n}")
    X = np.asarray(dataset.x, dtype=float)
    U = np.asarray(dataset.u, dtype=float)
    rng = np.random.default_rng(seed)
    opt = nn.Adam(policy.params, lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo: lo + batch_size]
            m, s, ds, cache = policy.heads(X[idx])
            t = np.tanh(m)
            a = policy.center + policy.half * t
            resid = a - U[idx]
            loss = float(np.mean(np.sum(resid ** 2, axis=1)))
            dm = 2.0 * resid * policy.half * (1.0 - t * t) / idx.size
            dout = np.hstack([dm, np.zeros_like(s)])
            grads, _ = nn.mlp_backward(policy.params, cache, dout)
            opt.step(policy.params, grads)
            total += loss * idx.size
        history.append(total / n)
    return history


def generate_model_rollouts(ensemble, policy: PolicyNetwork, real_dataset,
                            rollout_len: int, count: int,
                            reward_fn: Callable, rng: np.random.Generator,
                            capacity: Optional[int] = None) -> TransitionDataset:
    """Short policy rollouts through sampled ensemble members.

    Starts from uniformly drawn real states; each step draws one member per
    row and samples its Gaussian prediction.  Rewards come from the
    environment's reward function evaluated on the predicted states.
    """
    n = real_dataset.x.shape[0]
    if n == 0:
        raise ValueError("real dataset is empty")
    out = TransitionDataset(policy.n_x, policy.n_u, capacity=capacity)
    starts = rng.integers(0, n, size=count)
    X = np.asarray(real_dataset.x, dtype=float)[starts]
    for step in range(rollout_len):
        m, s, _, _ = policy.heads(X)
        sigma = np.exp(s) * policy.exploration_scale
        A = policy.squash(m + sigma * rng.standard_normal(m.shape))
        midx = rng.integers(0, len(ensemble.members), size=X.shape[0])
        Xn = ensemble.sample_next(X, A, midx, rng)
        for i in range(count):
            r = float(reward_fn(Xn[i], A[i]))
            out.append(X[i], A[i], Xn[i], r, feasible=True, done=False,
                       t=step, episode=int(starts[i]))
        X = Xn
    return out


def _critic_step(critic, opt, X, A, y):
    q, cache = critic.value(X, A)
    resid = q - y
    loss = float(np.mean(resid ** 2))
    dq = (2.0 * resid / y.size)[:, None]
    grads, _ = nn.mlp_backward(critic.params, cache, dq)
    opt.step(critic.params, grads)
    return loss


def update(acs: ActorCriticState, real_dataset, synthetic_dataset,
           updates: int = 1, real_ratio: float = 0.1,
           critic_steps: int = CRITIC_STEPS) -> dict:
    """Mixed-batch soft actor-critic updates; returns mean losses.

    Each update round refines the critics `critic_steps` times (fresh
    minibatch, target exponential averaging after every refinement) and
    steps the actor once; the high critic-to-actor ratio is what lets
    bootstrapped values propagate through the slow target copies at the
    data efficiency model-based training expects.
    """
    n_real_store = real_dataset.x.shape[0]
    if n_real_store == 0:
        raise ValueError("real dataset is empty")
    n_syn_store = 0 if synthetic_dataset is None else synthetic_dataset.x.shape[0]
    batch = acs.batch_size
    n_real = batch if n_syn_store == 0 else min(
        batch, real_rows_per_batch(batch, real_ratio))
    n_syn = batch - n_real
    pol = acs.policy

    def draw():
        ri = acs.rng.integers(0, n_real_store, size=n_real)
        X = np.asarray(real_dataset.x, dtype=float)[ri]
        A = np.asarray(real_dataset.u, dtype=float)[ri]
        Xn = np.asarray(real_dataset.x_next, dtype=float)[ri]
        R = np.asarray(real_dataset.r, dtype=float)[ri]
        D = np.asarray(real_dataset.done)[ri].astype(float)
        if n_syn:
            si = acs.rng.integers(0, n_syn_store, size=n_syn)
            X = np.vstack([X, np.asarray(synthetic_dataset.x, dtype=float)[si]])
            A = np.vstack([A, np.asarray(synthetic_dataset.u, dtype=float)[si]])
            Xn = np.vstack([Xn, np.asarray(synthetic_dataset.x_next, dtype=float)[si]])
            R = np.concatenate([R, np.asarray(synthetic_dataset.r, dtype=float)[si]])
            D = np.concatenate([D, np.asarray(synthetic_dataset.done)[si].astype(float)])
        return X, A, Xn, R, D

    q_losses, a_losses, ent = [], [], []
    for _ in range(updates):
        for _ in range(critic_steps):
            X, A, Xn, R, D = draw()
            # critic targets from the slow copies and a fresh policy draw
            m2, s2, _, _ = pol.heads(Xn)
            eps2 = acs.rng.standard_normal(m2.shape)
            logp2, xi2, _ = _log_prob_terms(pol, m2, s2, eps2)
            A2 = pol.squash(xi2)
            tq1, _ = acs.t1.value(Xn, A2)
            tq2, _ = acs.t2.value(Xn, A2)
            y = R + acs.gamma * (1.0 - D) * (np.minimum(tq1, tq2) - acs.alpha * logp2)
            q_losses.append(_critic_step(acs.q1, acs.opt_q1, X, A, y))
            q_losses.append(_critic_step(acs.q2, acs.opt_q2, X, A, y))
            acs._polyak()

        # reparametrized actor step through the smaller critic
        X, A, Xn, R, D = draw()
        m, s, ds, cache = pol.heads(X)
        eps = acs.rng.standard_normal(m.shape)
        logp, xi, t = _log_prob_terms(pol, m, s, eps)
        Anew = pol.squash(xi)
        q1v, c1 = acs.q1.value(X, Anew)
        q2v, c2 = acs.q2.value(X, Anew)
        use1 = q1v <= q2v
        a_losses.append(float(np.mean(acs.alpha * logp - np.minimum(q1v, q2v))))
        ent.append(float(-np.mean(logp)))
        B = X.shape[0]
        dq = np.where(use1, -1.0, 0.0)[:, None] / B
        _, dX1 = nn.mlp_backward(acs.q1.params, c1, dq)
        dq = np.where(use1, 0.0, -1.0)[:, None] / B
        _, dX2 = nn.mlp_backward(acs.q2.params, c2, dq)
        dA = (dX1 + dX2)[:, pol.n_x:]    # d(-minQ)/d(action)
        sigma_eps = np.exp(s) * eps
        da_dxi = pol.half * (1.0 - t * t)
        dlogp_dxi = 2.0 * t
        dm = (acs.alpha / B) * dlogp_dxi + dA * da_dxi
        dsig = ((acs.alpha / B) * (-1.0 + dlogp_dxi * sigma_eps)
                + dA * da_dxi * sigma_eps)
        dout = np.hstack([dm, dsig * ds])
        grads, _ = nn.mlp_backward(pol.params, cache, dout)
        acs.opt_pi.step(pol.params, grads)
    return {
        "critic_loss": float(np.mean(q_losses)),
        "actor_loss": float(np.mean(a_losses)),
        "entropy": float(np.mean(ent)),
        "real_rows_per_batch": n_real,
    }


def save_policy(path, policy: PolicyNetwork) -> None:
    meta = {
        "version": _CKPT_VERSION,
        "n_x": policy.n_x,
        "n_u": policy.n_u,
        "hidden": list(policy.hidden),
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "low": policy.low,
        "high": policy.high,
    }
    for i, (W, b) in enumerate(policy.params):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_policy(path) -> PolicyNetwork:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != _CKPT_VERSION:
            raise ValueError(f"unsupported policy checkpoint version {meta.get('version')}")
        pol = PolicyNetwork(meta["n_x"], meta["n_u"], data["low"], data["high"],
                            hidden=tuple(meta["hidden"]))
        pol.params = [[data[f"W{i}"].copy(), data[f"b{i}"].copy()]
                      for i in range(len(pol.sizes) - 1)]
    return pol
