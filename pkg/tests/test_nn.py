import numpy as np

from tubecert import nn

from oracle_utils import central_diff_grad, central_diff_jac


def _loss_of_flat(flat, sizes, X, T, activation):
    params = nn.unpack(flat, sizes)
    Y, _ = nn.mlp_forward(params, X, activation)
    return 0.5 * np.sum((Y - T) ** 2)


def test_backprop_matches_finite_differences():
    rng = np.random.default_rng(0)
    sizes = [3, 8, 8, 2]
    for activation in ("tanh", "relu"):
        params = nn.init_mlp(sizes, rng)
        X = rng.normal(size=(5, 3))
        T = rng.normal(size=(5, 2))
        Y, cache = nn.mlp_forward(params, X, activation)
        grads, _ = nn.mlp_backward(params, cache, Y - T)
        flat_g = nn.pack(grads)
        fd = central_diff_grad(
            lambda f: _loss_of_flat(f, sizes, X, T, activation), nn.pack(params)
        )
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(flat_g - fd) / denom) < 1e-5


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    sizes = [4, 10, 3]
    params = nn.init_mlp(sizes, rng)
    x = rng.normal(size=4)
    w = rng.normal(size=3)

    def f(xv):
        Y, _ = nn.mlp_forward(params, xv.reshape(1, -1))
        return float(Y[0] @ w)

    Y, cache = nn.mlp_forward(params, x.reshape(1, -1))
    _, dX = nn.mlp_backward(params, cache, w.reshape(1, -1))
    fd = central_diff_grad(f, x)
    assert np.max(np.abs(dX[0] - fd)) < 1e-7


def test_io_jacobian_exact():
    rng = np.random.default_rng(2)
    sizes = [3, 7, 5, 2]
    params = nn.init_mlp(sizes, rng)
    x = rng.normal(size=3)
    J = nn.mlp_io_jacobian(params, x)
    fd = central_diff_jac(lambda v: nn.mlp_forward(params, v.reshape(1, -1))[0][0], x)
    assert np.max(np.abs(J - fd)) < 1e-8


def test_soft_clamp_bounds_and_derivative():
    lo, hi = np.log(1e-8), np.log(1e2)
    x = np.linspace(-60.0, 60.0, 201)
    y, dy = nn.soft_clamp(x, lo, hi)
    assert np.all(y >= lo) and np.all(y <= hi)
    assert np.all(np.diff(y) >= 0.0)
    interior = (x > lo + 2.0) & (x < hi - 2.0)
    assert np.all(np.diff(y[interior]) > 0.0)
    fd = np.array(
        [
            (nn.soft_clamp(np.array([v + 1e-6]), lo, hi)[0][0]
             - nn.soft_clamp(np.array([v - 1e-6]), lo, hi)[0][0]) / 2e-6
            for v in x[::20]
        ]
    )
    assert np.max(np.abs(dy[::20] - fd)) < 1e-6


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(3)
    sizes = [2, 5, 4]
    params = nn.init_mlp(sizes, rng)
    flat = nn.pack(params)
    back = nn.unpack(flat, sizes)
    for (W, b), (W2, b2) in zip(params, back):
        assert np.array_equal(W, W2)
        assert np.array_equal(b, b2)


def test_adam_descends_quadratic():
    rng = np.random.default_rng(4)
    params = [[rng.normal(size=(3, 3)), rng.normal(size=3)]]
    opt = nn.Adam(params, lr=0.05)
    for _ in range(400):
        grads = [[2.0 * params[0][0], 2.0 * params[0][1]]]
        opt.step(params, grads)
    assert np.linalg.norm(params[0][0]) < 1e-2
    assert np.linalg.norm(params[0][1]) < 1e-2
