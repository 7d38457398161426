"""Ellipsoidal tube rollouts under learned probabilistic dynamics.

A tube is the sequence of outer ellipsoids obtained by pushing the current
state through one model's linearized closed loop (state feedback K on the
deviation from the nominal center) and absorbing the model's predicted
process variance with the trace-ratio outer sum each step.  A bundle holds
one tube per ensemble member over a shared action sequence.
"""

from typing import List, Sequence

import numpy as np

from tubecert import geometry
from tubecert.geometry import Ellipsoid

HULL_SAMPLES = 200


class TubeBlowup(RuntimeError):
    """Model produced non-finite values during propagation."""


class Tube:
    """Ellipsoid chain E_0..E_N with the actions and feedback that made it."""

    def __init__(self, ellipsoids: Sequence[Ellipsoid], actions, K):
        self.ellipsoids = list(ellipsoids)
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))
        self.K = np.asarray(K, dtype=float)
        if len(self.ellipsoids) != self.actions.shape[0] + 1:
            raise ValueError("need one more ellipsoid than actions")
        if np.any(self.ellipsoids[0].shape != 0.0):
            raise ValueError("tube must start from a zero-shape ellipsoid")

    @property
    def horizon(self) -> int:
        return len(self.ellipsoids) - 1

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center for e in self.ellipsoids])


class TubeBundle:
    """One tube per ensemble member, sharing actions, feedback, and start."""

    def __init__(self, tubes: Sequence[Tube]):
        self.tubes = list(tubes)
        if not self.tubes:
            raise ValueError("empty bundle")
        horizon = self.tubes[0].horizon
        x0 = self.tubes[0].ellipsoids[0].center
        for t in self.tubes[1:]:
            if t.horizon != horizon:
                raise ValueError("tubes disagree on horizon")
            if not np.array_equal(t.ellipsoids[0].center, x0):
                raise ValueError("tubes disagree on the initial state")

    @property
    def size(self) -> int:
        return len(self.tubes)

    @property
    def horizon(self) -> int:
        return self.tubes[0].horizon


def propagate_one(model, e_k: Ellipsoid, v_k, K) -> Ellipsoid:
    """One tube step: affine image of e_k under the closed loop, plus noise.

    The model is linearized at the tube center; the deviation dynamics use
    F = A + B K and the predicted diagonal variance enters as a second
    ellipsoid through the trace-ratio outer sum.
    """
    v_k = np.asarray(v_k, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float)
    mean, var, A, B, _, _ = model.linearize(e_k.center, v_k)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))
            and np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise TubeBlowup("non-finite model output during tube propagation")
    F = A + B @ K
    moved = Ellipsoid(mean, F @ e_k.shape @ F.T)
    noise = Ellipsoid(np.zeros(mean.shape[0]), np.diag(var))
    return geometry.outer_sum(moved, noise)


def rollout_bundle(ensemble, x_t, v_seq, K) -> TubeBundle:
    """Propagate every member over the action sequence from E(x_t, 0)."""
    members = ensemble.members if hasattr(ensemble, "members") else list(ensemble)
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    v_seq = np.atleast_2d(np.asarray(v_seq, dtype=float))
    if v_seq.shape[0] < 1:
        raise ValueError("need at least one action")
    tubes = []
    for model in members:
        chain = [Ellipsoid(x_t, np.zeros((x_t.shape[0], x_t.shape[0])))]
        for k in range(v_seq.shape[0]):
            chain.append(propagate_one(model, chain[-1], v_seq[k], K))
        tubes.append(Tube(chain, v_seq, K))
    return TubeBundle(tubes)


class CaptureReport:
    """Per-step capture flags for one actual trajectory against a bundle."""

    def __init__(self, in_ellipsoid, captured):
        self.in_ellipsoid = np.asarray(in_ellipsoid, dtype=bool)
        self.captured = np.asarray(captured, dtype=bool)

    @property
    def overall(self) -> bool:
        return bool(np.all(self.captured))


def _hull_points(bundle: TubeBundle, k: int, coords) -> np.ndarray:
    pts = []
    idx = np.asarray(coords, dtype=int)
    for tube in bundle.tubes:
        e = tube.ellipsoids[k]
        flat = Ellipsoid(e.center[idx], e.shape[np.ix_(idx, idx)])
        pts.append(geometry.boundary_points_2d(flat, HULL_SAMPLES))
        pts.append(flat.center[None, :])
    return np.vstack(pts)


def captures(bundle: TubeBundle, states, coords=(0, 1), tol: float = 1e-9) -> CaptureReport:
    """Check Assumption-4 style capture of an actual trajectory.

    A step counts as captured when the state lies in some member's ellipsoid
    (exact membership) or, failing that, in the convex hull of the union of
    the member ellipsoids sampled in the constrained 2-D coordinates.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] != bundle.horizon + 1:
        raise ValueError("trajectory length must be horizon + 1")
    idx = np.asarray(coords, dtype=int)
    in_ell = np.zeros(states.shape[0], dtype=bool)
    captured = np.zeros(states.shape[0], dtype=bool)
    for k in range(states.shape[0]):
        x = states[k]
        in_ell[k] = any(
            geometry.contains_point(t.ellipsoids[k], x, tol=tol) for t in bundle.tubes)
        if in_ell[k]:
            captured[k] = True
            continue
        hull = geometry.convex_hull_2d(_hull_points(bundle, k, idx))
        captured[k] = geometry.point_in_hull_2d(hull, x[idx], tol=max(tol, 1e-9))
    return CaptureReport(in_ell, captured)
