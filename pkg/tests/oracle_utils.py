"""Shared helpers for oracle-style tests (independent of library internals)."""

import numpy as np


def rand_psd(n, rng, degenerate=False):
    """Random PSD matrix; optionally with an exactly-zeroed eigenvalue block."""
    A = rng.normal(size=(n, n))
    S = A @ A.T
    if degenerate and n >= 2:
        w, V = np.linalg.eigh(S)
        w[: int(rng.integers(1, n))] = 0.0
        S = (V * w) @ V.T
    return 0.5 * (S + S.T)


def clean_root(S):
    """PSD square root that zeroes sub-roundoff eigenvalues.

    Sampling with this root keeps boundary points of (numerically) degenerate
    ellipsoids inside the true range subspace instead of sticking out by
    sqrt(eps) artifacts of the test construction.
    """
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.where(w < max(w[-1], 0.0) * 1e-12, 0.0, w)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def unit_directions(n, count, rng):
    D = rng.normal(size=(n, count))
    return D / np.linalg.norm(D, axis=0)


def boundary_sample(e, count, rng):
    """Points on the boundary sphere image of an ellipsoid."""
    return (e.center[:, None] + clean_root(e.shape) @ unit_directions(e.dim, count, rng)).T


def central_diff_grad(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def central_diff_jac(f, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J
