"""Ellipsoid and polytope primitives used by the tube machinery.

Ellipsoids are parameterized as E(c, S) = {c + S^(1/2) d : ||d|| <= 1} with a
symmetric positive semidefinite shape matrix S.  Degenerate (flat) ellipsoids
with singular S are allowed everywhere; a zero shape is a point.
"""

from typing import Optional

import numpy as np

# Traces at or below this threshold are treated as zero when combining
# ellipsoids, so sums with point-ellipsoids stay exact.
EPS_TRACE = 1e-12

# Eigenvalues no lower than this (relative to the largest magnitude) count as
# numerical roundoff and are repaired to zero; anything below is rejected.
_EIG_REJECT = -1e-10


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, V = np.linalg.eigh(_symmetrize(S))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


class Ellipsoid:
    """Ellipsoid E(c, S) with center ``c`` and PSD shape matrix ``S``.

    The constructor symmetrizes the shape and clamps tiny negative
    eigenvalues (roundoff) to zero.  Genuinely indefinite shapes raise
    ``ValueError``.
    """

    def __init__(self, center, shape):
        center = np.asarray(center, dtype=float).reshape(-1)
        shape = np.asarray(shape, dtype=float)
        if shape.shape != (center.size, center.size):
            raise ValueError(
                f"shape matrix {shape.shape} does not match center dim {center.size}"
            )
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(shape))):
            raise ValueError("non-finite ellipsoid data")
        shape = _symmetrize(shape)
        w = np.linalg.eigvalsh(shape)
        lo = w[0]
        if lo < 0.0:
            scale = max(1.0, abs(w[-1]))
            if lo < _EIG_REJECT * scale:
                raise ValueError(f"shape matrix is not PSD (min eigenvalue {lo:g})")
            wc, V = np.linalg.eigh(shape)
            shape = (V * np.clip(wc, 0.0, None)) @ V.T
            shape = _symmetrize(shape)
        self.center = center
        self.shape = shape

    @property
    def dim(self) -> int:
        return self.center.size

    def __repr__(self):
        return f"Ellipsoid(center={self.center!r}, trace={np.trace(self.shape):g})"


class Polytope:
    """Convex polytope {x : H x <= d} in half-space representation.

    Emptiness is not checked at construction.
    """

    def __init__(self, H, d):
        H = np.asarray(H, dtype=float)
        d = np.asarray(d, dtype=float).reshape(-1)
        if H.ndim != 2 or H.shape[0] != d.size:
            raise ValueError(f"H rows {H.shape} must match d size {d.size}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(d))):
            raise ValueError("non-finite polytope data")
        row_norms = np.linalg.norm(H, axis=1)
        if np.any(row_norms == 0.0):
            raise ValueError("polytope has an all-zero constraint row")
        self.H = H
        self.d = d

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def num_rows(self) -> int:
        return self.H.shape[0]

    def margins(self, x: np.ndarray) -> np.ndarray:
        r"""Per-row slack H x - d (non-positive iff x is a member)."""
        return self.H @ np.asarray(x, dtype=float) - self.d

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(self.margins(x) <= tol))

    def __repr__(self):
        return f"Polytope(rows={self.num_rows}, dim={self.dim})"


def affine_transform(e: Ellipsoid, A: np.ndarray, b: Optional[np.ndarray] = None) -> Ellipsoid:
    """Exact image of an ellipsoid under the affine map x -> A x + b.

    Parameters
    ----------
    e: input ellipsoid E(c, S).
    A: matrix (m, n); rank-deficient maps are fine and yield flat images.
    b: optional offset (m,), defaults to zero.

    Returns
    -------
    Ellipsoid E(A c + b, A S A^T).
    """
    A = np.asarray(A, dtype=float)
    center = A @ e.center
    if b is not None:
        center = center + np.asarray(b, dtype=float).reshape(-1)
    return Ellipsoid(center, _symmetrize(A @ e.shape @ A.T))


def outer_sum(e1: Ellipsoid, e2: Ellipsoid) -> Ellipsoid:
    """Trace-ratio outer approximation of the Minkowski sum of two ellipsoids.

    Uses the minimal-trace parameter a = sqrt(tr(S1)/tr(S2)) and returns
    E(c1 + c2, (1 + 1/a) S1 + (1 + a) S2).  If either trace is at or below
    ``EPS_TRACE`` the other operand passes through exactly, which keeps sums
    with point-ellipsoids tight.
    """
    if e1.dim != e2.dim:
        raise ValueError("dimension mismatch")
    center = e1.center + e2.center
    t1 = float(np.trace(e1.shape))
    t2 = float(np.trace(e2.shape))
    if t1 <= EPS_TRACE:
        return Ellipsoid(center, e2.shape)
    if t2 <= EPS_TRACE:
        return Ellipsoid(center, e1.shape)
    a = np.sqrt(t1 / t2)
    shape = (1.0 + 1.0 / a) * e1.shape + (1.0 + a) * e2.shape
    return Ellipsoid(center, _symmetrize(shape))


def contains_point(e: Ellipsoid, x: np.ndarray, tol: float = 1e-9) -> bool:
    """Membership test x in E(c, S), degenerate shapes handled exactly.

    The quadratic form is evaluated through the eigendecomposition
    (pseudoinverse); components of x - c outside the range of S must vanish
    up to a relative tolerance, and the in-range quadratic form must not
    exceed 1 + tol.
    """
    v = np.asarray(x, dtype=float).reshape(-1) - e.center
    w, V = np.linalg.eigh(e.shape)
    scale = max(w[-1], 0.0)
    cutoff = max(scale, 1.0) * 1e-14
    coords = V.T @ v
    null = w <= cutoff
    resid = np.linalg.norm(coords[null])
    if resid > tol * (1.0 + np.linalg.norm(v)):
        return False
    pos = ~null
    if not np.any(pos):
        return True
    q = float(np.sum(coords[pos] ** 2 / w[pos]))
    return q <= 1.0 + tol


def inscribed_in_polytope(e: Ellipsoid, poly: Polytope) -> np.ndarray:
    """Inscription margins of an ellipsoid against each polytope row.

    Row j evaluates h_j . c - d_j + sqrt(h_j . S h_j); the ellipsoid is
    contained in the polytope iff every margin is <= 0.  Margins are exact
    (no smoothing) and well defined for degenerate shapes.
    """
    Hc = poly.H @ e.center
    # h^T S h >= 0 up to roundoff; clamp before the square root.
    quad = np.einsum("ij,jk,ik->i", poly.H, e.shape, poly.H)
    return Hc - poly.d + np.sqrt(np.clip(quad, 0.0, None))


def tighten_action_polytope(action_poly: Polytope, K: np.ndarray, S: np.ndarray) -> Polytope:
    """Shrink an action polytope by the feedback correction K applied over E(., S).

    Each offset becomes d_j - sqrt(h_j . K S K^T h_j), the worst-case
    contribution of the feedback term over the state ellipsoid.  The result
    may be empty; emptiness is the caller's concern.
    """
    K = np.asarray(K, dtype=float)
    M = _symmetrize(K @ _symmetrize(np.asarray(S, dtype=float)) @ K.T)
    quad = np.einsum("ij,jk,ik->i", action_poly.H, M, action_poly.H)
    return Polytope(action_poly.H, action_poly.d - np.sqrt(np.clip(quad, 0.0, None)))


def boundary_points_2d(e: Ellipsoid, count: int) -> np.ndarray:
    """Deterministic sample of a 2-D ellipsoid boundary (uniform angles)."""
    if e.dim != 2:
        raise ValueError("boundary_points_2d needs a 2-D ellipsoid")
    root = psd_sqrt(e.shape)
    ang = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    circle = np.stack([np.cos(ang), np.sin(ang)])
    return (e.center[:, None] + root @ circle).T


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull of 2-D points by the monotone chain, vertices CCW.

    Collinear boundary points are dropped; degenerate inputs return the
    surviving extreme points (2 for a segment, 1 for a point).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected an array of 2-D points")
    pts = np.unique(pts, axis=0)
    if pts.shape[0] <= 2:
        return pts

    def turn(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and turn(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and turn(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        # all input points collinear
        return np.unique(hull, axis=0)
    return hull


def point_in_hull_2d(hull: np.ndarray, q: np.ndarray, tol: float = 1e-9) -> bool:
    """Membership of q in the convex hull given as CCW vertices."""
    hull = np.asarray(hull, dtype=float)
    q = np.asarray(q, dtype=float).reshape(2)
    m = hull.shape[0]
    if m == 0:
        return False
    if m == 1:
        return bool(np.linalg.norm(q - hull[0]) <= tol)
    if m == 2:
        a, b = hull
        ab = b - a
        t = np.clip(np.dot(q - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        return bool(np.linalg.norm(q - (a + t * ab)) <= tol)
    nxt = np.roll(hull, -1, axis=0)
    cross = (nxt[:, 0] - hull[:, 0]) * (q[1] - hull[:, 1]) \
        - (nxt[:, 1] - hull[:, 1]) * (q[0] - hull[:, 0])
    edge = np.linalg.norm(nxt - hull, axis=1)
    return bool(np.all(cross >= -tol * np.maximum(edge, 1.0)))
