"""Minimal numpy MLP core: forward, analytic backprop, exact input Jacobians.

Parameters are lists of [W, b] arrays (float64).  All gradients here are
analytic; finite differences only ever appear in tests and in the physics
prior Jacobian, never in this module.
"""

import numpy as np


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_clamp(x, lo, hi):
    """Differentiable clamp of x into (lo, hi); returns (value, dvalue/dx).

    Applies a softplus bend at both ends, so the map is smooth, strictly
    increasing and saturates at the bounds.
    """
    y1 = hi - softplus(hi - x)
    d1 = sigmoid(hi - x)
    y2 = lo + softplus(y1 - lo)
    d2 = sigmoid(y1 - lo)
    # The far bend adds ~exp(lo - hi) of overshoot at saturation; pin the
    # result to the closed interval (derivative there is of the same order).
    return np.clip(y2, lo, hi), d1 * d2


def _act(name, z):
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if name == "relu":
        a = np.maximum(z, 0.0)
        return a, (z > 0.0).astype(z.dtype)
    raise ValueError(f"unknown activation {name!r}")


def init_mlp(sizes, rng, out_zero=False):
    """Glorot-uniform init for layer sizes [n_in, h1, ..., n_out]."""
    params = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        if out_zero and i == len(sizes) - 2:
            W = np.zeros_like(W)
        params.append([W, np.zeros(fan_out)])
    return params


def mlp_forward(params, X, activation="tanh"):
    """Batched forward pass.  X is (B, n_in); returns (Y, cache)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    acts = [X]
    dacts = []
    h = X
    for i, (W, b) in enumerate(params):
        z = h @ W.T + b
        if i < len(params) - 1:
            h, dz = _act(activation, z)
            dacts.append(dz)
        else:
            h = z
        acts.append(h)
    return h, (acts, dacts)


def mlp_backward(params, cache, dY):
    """Backprop dY (B, n_out) through the cached forward pass.

    Returns (grads, dX) with grads a list of [dW, db] matching params and dX
    the gradient with respect to the input batch.
    """
    acts, dacts = cache
    grads = [None] * len(params)
    delta = np.atleast_2d(dY)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = [delta.T @ acts[i], delta.sum(axis=0)]
        delta = delta @ W
        if i > 0:
            delta = delta * dacts[i - 1]
    return grads, delta


def mlp_io_jacobian(params, x, activation="tanh"):
    """Exact Jacobian d(out)/d(in) at a single input point (n_out, n_in)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    _, (acts, dacts) = mlp_forward(params, x, activation)
    J = params[0][0]
    for i in range(1, len(params)):
        J = params[i][0] @ (dacts[i - 1][0][:, None] * J)
    return J


def pack(params):
    return np.concatenate([a.ravel() for layer in params for a in layer])


def unpack(flat, sizes):
    params = []
    off = 0
    for i in range(len(sizes) - 1):
        n_out, n_in = sizes[i + 1], sizes[i]
        W = flat[off : off + n_out * n_in].reshape(n_out, n_in).copy()
        off += n_out * n_in
        b = flat[off : off + n_out].copy()
        off += n_out
        params.append([W, b])
    if off != flat.size:
        raise ValueError("flat vector length does not match layer sizes")
    return params


def zeros_like_params(params):
    return [[np.zeros_like(W), np.zeros_like(b)] for W, b in params]


def add_scaled(params, grads, scale):
    for (W, b), (gW, gb) in zip(params, grads):
        W += scale * gW
        b += scale * gb


class Adam:
    """Adaptive-moment first-order optimizer over a params list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for layer, g, m, v in zip(params, grads, self.m, self.v):
            for j in range(2):
                m[j] *= self.beta1
                m[j] += (1.0 - self.beta1) * g[j]
                v[j] *= self.beta2
                v[j] += (1.0 - self.beta2) * g[j] ** 2
                layer[j] -= self.lr * (m[j] / b1c) / (np.sqrt(v[j] / b2c) + self.eps)
