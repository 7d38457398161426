"""Safe-set estimation: convex hulls of feasibly-certified states.

The estimate lives in the 2-D constrained coordinate plane, clipped to the
state polytope rows that act on those coordinates, and is lifted back to an
H-representation over the full state so the certifier can use it as a
terminal constraint.  A selector keeps the per-epoch history and serves the
delay-shifted terminal set.
"""

from typing import List, Sequence

import numpy as np

from tubecert import geometry
from tubecert.geometry import Polytope

DEGENERATE_HALF_WIDTH = 1e-3


def convex_hull_2d(points) -> np.ndarray:
    """Monotone-chain hull, CCW, collinear boundary points dropped."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("need at least one point")
    return geometry.convex_hull_2d(pts)


def polygon_area(vertices) -> float:
    """Shoelace area of a CCW polygon (0 for degenerate hulls)."""
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _edges_2d(vertices) -> tuple:
    """H-representation rows (outward normals) of a CCW polygon."""
    v = np.asarray(vertices, dtype=float)
    nxt = np.roll(v, -1, axis=0)
    normals = np.stack([nxt[:, 1] - v[:, 1], -(nxt[:, 0] - v[:, 0])], axis=1)
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / norms[:, None]
    offsets = np.sum(normals * v, axis=1)
    return normals, offsets


def _degenerate_box(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = pts.min(axis=0) - DEGENERATE_HALF_WIDTH
    hi = pts.max(axis=0) + DEGENERATE_HALF_WIDTH
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


def hull_to_polytope(vertices, coords, n_x: int) -> Polytope:
    """Lift a 2-D hull to an n_x-dim polytope acting on the coordinate pair.

    Degenerate hulls (under 3 vertices) are inflated to a box of half-width
    1e-3 so the terminal set always has interior.
    """
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] == 0:
        raise ValueError("need at least one vertex")
    if v.shape[0] < 3:
        v = _degenerate_box(v)
    normals, offsets = _edges_2d(v)
    H = np.zeros((normals.shape[0], n_x))
    H[:, coords[0]] = normals[:, 0]
    H[:, coords[1]] = normals[:, 1]
    return Polytope(H, offsets)


def _clip_polygon(vertices: np.ndarray, h: np.ndarray, d: float) -> np.ndarray:
    """Keep the part of a polygon with h.x <= d (Sutherland-Hodgman step)."""
    out = []
    n = vertices.shape[0]
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        fa = float(h @ a - d)
        fb = float(h @ b - d)
        if fa <= 0.0:
            out.append(a)
        if (fa < 0.0 < fb) or (fb < 0.0 < fa):
            out.append(a + (fa / (fa - fb)) * (b - a))
    return np.array(out) if out else np.zeros((0, 2))


def clip_to_state_rows(vertices, spec) -> np.ndarray:
    """Intersect a hull with the state-polytope rows on the coordinate pair."""
    v = np.asarray(vertices, dtype=float)
    if v.shape[0] < 3:
        v = _degenerate_box(v)
    i, j = spec.constrained_coords
    H, d = spec.state_polytope.H, spec.state_polytope.d
    for row in range(H.shape[0]):
        support = np.nonzero(H[row])[0]
        if not set(support) <= {i, j}:
            continue
        v = _clip_polygon(v, np.array([H[row, i], H[row, j]]), d[row])
        if v.shape[0] == 0:
            break
    if v.shape[0] == 0:
        return v
    return geometry.convex_hull_2d(v)


class SafeSetEstimate:
    """Hull of feasible states in the constrained plane plus its lift."""

    def __init__(self, epoch: int, vertices, coords, n_x: int):
        self.epoch = int(epoch)
        self.coords = tuple(int(c) for c in coords)
        self.n_x = int(n_x)
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if self.vertices.shape[0] >= 3:
            nxt = np.roll(self.vertices, -1, axis=0)
            nnx = np.roll(self.vertices, -2, axis=0)
            cross = (nxt[:, 0] - self.vertices[:, 0]) * (nnx[:, 1] - nxt[:, 1]) \
                - (nxt[:, 1] - self.vertices[:, 1]) * (nnx[:, 0] - nxt[:, 0])
            if np.any(cross < 0.0):
                raise ValueError("vertices must trace a convex CCW polygon")
        self.polytope = hull_to_polytope(self.vertices, self.coords, self.n_x)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def contains_2d(self, point, tol: float = 1e-9) -> bool:
        H2 = self.polytope.H[:, list(self.coords)]
        return bool(np.all(H2 @ np.asarray(point, dtype=float) - self.polytope.d <= tol))

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "coords": list(self.coords),
            "n_x": self.n_x,
            "vertices": self.vertices.tolist(),
            "H": self.polytope.H.tolist(),
            "d": self.polytope.d.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SafeSetEstimate":
        est = cls(data["epoch"], np.array(data["vertices"]), data["coords"], data["n_x"])
        est.polytope = Polytope(np.array(data["H"]), np.array(data["d"]))
        return est


def estimate_from_states(states, epoch: int, spec) -> SafeSetEstimate:
    """Safe-set estimate from explicit state rows (already deemed feasible)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("no states to estimate from")
    i, j = spec.constrained_coords
    hull = convex_hull_2d(states[:, [i, j]])
    clipped = clip_to_state_rows(hull, spec)
    est = SafeSetEstimate(epoch, clipped, (i, j), spec.n_x)
    # clipping may only shave points that violate the state set themselves
    margins = est.polytope.H[:, [i, j]] @ states[:, [i, j]].T - est.polytope.d[:, None]
    dropped = margins.max(axis=0) > 1e-9
    if np.any(dropped):
        sp = spec.state_polytope
        in_bounds = np.all(sp.H @ states.T - sp.d[:, None] <= 1e-12, axis=0)
        if np.any(dropped & in_bounds):
            raise AssertionError("estimate dropped a contributing in-bounds state")
    return est


def estimate_safe_set(dataset, epoch: int, spec) -> SafeSetEstimate:
    """Hull over the feasible-flagged states of a transition dataset."""
    flags = np.asarray(dataset.feasible, dtype=bool)
    if not np.any(flags):
        raise ValueError("dataset holds no feasible-flagged states")
    return estimate_from_states(np.asarray(dataset.x)[flags], epoch, spec)


class TerminalSetSelector:
    """Per-epoch estimate history serving the delay-shifted terminal set."""

    def __init__(self, delay: int):
        if delay < 0:
            raise ValueError("delay must be nonnegative")
        self.delay = int(delay)
        self.history: List[SafeSetEstimate] = []

    def record(self, estimate: SafeSetEstimate):
        if estimate.epoch != len(self.history):
            raise ValueError(
                f"expected estimate for epoch {len(self.history)}, got {estimate.epoch}")
        self.history.append(estimate)

    def select(self, epoch: int) -> SafeSetEstimate:
        idx = max(0, epoch - self.delay)
        if idx >= len(self.history):
            raise ValueError(f"epoch {idx} not recorded yet")
        return self.history[idx]

    def to_json_list(self) -> list:
        return [est.to_dict() for est in self.history]
