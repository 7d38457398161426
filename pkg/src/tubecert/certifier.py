"""Per-step action certification by minimal correction over ensemble tubes.

Each control step solves: minimize ||u_t - v_0||^2 over an action sequence
v_0..v_{N-1}, subject to every ensemble member's ellipsoidal tube staying
inscribed in the state set, ending inscribed in the terminal set, and every
planned action lying in the member-tightened action set.  The solver is a
penalty method: outer loop raises the penalty weight, inner loop is L-BFGS-B
on the penalized objective with analytic gradients obtained by forward
sensitivity propagation through the tube recursion (Jacobians held constant
within an inner solve, Gauss-Newton style).  Feasibility is always decided
by re-checking the exact, unsmoothed inscription margins.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from tubecert.geometry import Polytope

EPS_TRACE = 1e-12          # outer-sum passthrough threshold, matches geometry
_SMOOTH = 1e-12            # inside sqrt during solving only
_SHIFT = 1e-5              # penalized margins aim this far inside the boundary
_OBJ_STATIONARY = 1e-8


class CertifierConfig:
    """Solver knobs; defaults follow the documented tolerances."""

    def __init__(self, horizon: int = 5, feedback: Optional[np.ndarray] = None,
                 max_iterations: int = 200, tol: float = 1e-6,
                 penalty_init: float = 10.0, penalty_growth: float = 10.0,
                 penalty_cap: float = 1e6, soft_penalty: float = 1e4,
                 warm_start: bool = True, infeasible_threshold: Optional[int] = None,
                 rollout_budget: int = 5000):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(penalty_init, penalty_growth, penalty_cap, soft_penalty) <= 0:
            raise ValueError("penalties must be positive")
        self.horizon = int(horizon)
        self.feedback = None if feedback is None else np.asarray(feedback, dtype=float)
        self.max_iterations = int(max_iterations)
        self.tol = float(tol)
        self.penalty_init = float(penalty_init)
        self.penalty_growth = float(penalty_growth)
        self.penalty_cap = float(penalty_cap)
        self.soft_penalty = float(soft_penalty)
        self.warm_start = bool(warm_start)
        # consecutive infeasible steps before the orchestrator goes soft
        self.infeasible_threshold = int(infeasible_threshold) if infeasible_threshold \
            else self.horizon
        self.rollout_budget = int(rollout_budget)

    def feedback_for(self, n_x: int, n_u: int, fill: float = 0.5) -> np.ndarray:
        if self.feedback is not None:
            return self.feedback
        return np.full((n_u, n_x), fill)


def _action_bounds(poly: Polytope) -> Tuple[np.ndarray, np.ndarray]:
    """Per-coordinate box bounds recovered from single-coordinate rows."""
    n = poly.H.shape[1]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for row, d in zip(poly.H, poly.d):
        nz = np.nonzero(row)[0]
        if nz.size != 1:
            raise ValueError("action set must be a coordinate box")
        j = nz[0]
        if row[j] > 0:
            hi[j] = min(hi[j], d / row[j])
        else:
            lo[j] = max(lo[j], d / row[j])
    return lo, hi


class FeedbackPolicySequence:
    """Planned stages (v_k, z_k) with shared feedback gain, clipped to U."""

    def __init__(self, actions, centers, K, action_polytope: Polytope, origin_t: int = 0):
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if self.actions.shape[0] != self.centers.shape[0]:
            raise ValueError("stage count mismatch between actions and centers")
        self.K = np.asarray(K, dtype=float)
        self.action_polytope = action_polytope
        self.origin_t = int(origin_t)
        self._lo, self._hi = _action_bounds(action_polytope)
        self.clip_events = 0

    @property
    def remaining(self) -> int:
        return self.actions.shape[0]

    def stage_action(self, k: int, x) -> np.ndarray:
        raw = self.actions[k] + self.K @ (np.asarray(x, dtype=float) - self.centers[k])
        clipped = np.clip(raw, self._lo, self._hi)
        if np.any(clipped != raw):
            self.clip_events += 1
        return clipped

    def advance(self) -> "FeedbackPolicySequence":
        """Shift one stage forward; the final stage is kept once reached."""
        if self.remaining > 1:
            nxt = FeedbackPolicySequence(self.actions[1:], self.centers[1:], self.K,
                                         self.action_polytope, self.origin_t + 1)
        else:
            nxt = FeedbackPolicySequence(self.actions, self.centers, self.K,
                                         self.action_polytope, self.origin_t + 1)
        nxt.clip_events = self.clip_events
        return nxt


def fallback_action(prev: FeedbackPolicySequence, x_t) -> Tuple[np.ndarray, FeedbackPolicySequence]:
    """Evaluate the next stage of the previous plan at the current state."""
    shifted = prev.advance()
    return shifted.stage_action(0, x_t), shifted


class CertificationResult:
    def __init__(self, feasible: bool, action, v_seq, policy_sequence, mode: str,
                 objective: float, max_violation: float, iterations: int,
                 rollouts: int, diagnostics: Optional[dict] = None):
        self.feasible = feasible
        self.action = None if action is None else np.asarray(action, dtype=float)
        self.v_seq = None if v_seq is None else np.asarray(v_seq, dtype=float)
        self.policy_sequence = policy_sequence
        self.mode = mode
        self.objective = objective
        self.max_violation = max_violation
        self.iterations = iterations
        self.rollouts = rollouts
        self.diagnostics = diagnostics or {}


class _Blowup(Exception):
    pass


class _BudgetExhausted(Exception):
    pass


class _TubeEngine:
    """Raw-array tube rollouts with forward sensitivities and margin stacks."""

    def __init__(self, members, x_t, K, state_poly: Polytope, action_poly: Polytope,
                 terminal_poly: Polytope, horizon: int, budget: int):
        self.members = members
        self.x_t = np.asarray(x_t, dtype=float)
        self.K = np.asarray(K, dtype=float)
        self.sp = state_poly
        self.ap = action_poly
        self.tp = terminal_poly
        self.N = horizon
        self.n_x = self.x_t.shape[0]
        self.n_u = self.K.shape[0]
        self.n_dec = self.N * self.n_u
        self.rollouts = 0
        self.budget = budget

    def _charge(self):
        self.rollouts += 1
        if self.rollouts > self.budget:
            raise _BudgetExhausted

    def rollout(self, v_seq, need_grad: bool):
        """Tube chains (and sensitivities) for every member.

        Returns per-member lists of centers c_k, shapes S_k, and when asked,
        center sensitivities G_k (n_x, n_dec) and shape sensitivities
        T_k (n_dec, n_x, n_x).
        """
        self._charge()
        v_seq = v_seq.reshape(self.N, self.n_u)
        out = []
        for model in self.members:
            c = [self.x_t]
            S = [np.zeros((self.n_x, self.n_x))]
            G = [np.zeros((self.n_x, self.n_dec))] if need_grad else None
            T = [np.zeros((self.n_dec, self.n_x, self.n_x))] if need_grad else None
            for k in range(self.N):
                mean, var, A, B, Vx, Vu = model.linearize(c[k], v_seq[k])
                if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))
                        and np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
                    raise _Blowup
                F = A + B @ self.K
                S1 = F @ S[k] @ F.T
                S1 = 0.5 * (S1 + S1.T)
                t1 = float(np.trace(S1))
                t2 = float(np.sum(var))
                if need_grad:
                    Gk = G[k]
                    Dv = Vx @ Gk
                    Dv[:, k * self.n_u:(k + 1) * self.n_u] += Vu
                    FT = np.einsum("ab,jbc,dc->jad", F, T[k], F)
                if t1 <= EPS_TRACE:
                    Sn = np.diag(var)
                    if need_grad:
                        Tn = np.zeros_like(T[k])
                        rows = np.arange(self.n_x)
                        Tn[:, rows, rows] = Dv.T
                elif t2 <= EPS_TRACE:
                    Sn = S1
                    if need_grad:
                        Tn = FT
                else:
                    alpha = np.sqrt(t1 / t2)
                    w1 = 1.0 + 1.0 / alpha
                    w2 = 1.0 + alpha
                    Sn = w1 * S1 + w2 * np.diag(var)
                    if need_grad:
                        dt1 = np.einsum("jaa->j", FT)
                        dt2 = np.sum(Dv, axis=0)
                        dalpha = (dt1 / t2 - t1 * dt2 / t2 ** 2) / (2.0 * alpha)
                        Tn = w1 * FT
                        rows = np.arange(self.n_x)
                        Tn[:, rows, rows] += w2 * Dv.T
                        # d w1 = -dalpha / alpha^2 on S1, d w2 = dalpha on diag var
                        Tn += dalpha[:, None, None] * (
                            -S1[None] / alpha ** 2 + np.diag(var)[None])
                c.append(mean)
                S.append(Sn)
                if need_grad:
                    Gn = A @ Gk
                    Gn[:, k * self.n_u:(k + 1) * self.n_u] += B
                    G.append(Gn)
                    T.append(Tn)
            out.append((c, S, G, T))
        return out, v_seq

    # -- margin stacks ----------------------------------------------------

    def margins(self, v_seq, need_grad: bool, smoothed: bool):
        """Stacked constraint margins g (feasible iff g <= 0) and gradients.

        Rows: per member, state rows for k=1..N, terminal rows at k=N,
        tightened action rows for k=0..N-1.  The k=0 state rows are constant
        in the decision and are exposed separately via `initial_margins`.
        """
        chains, v = self.rollout(v_seq, need_grad)
        eps = _SMOOTH if smoothed else 0.0
        g_all: List[np.ndarray] = []
        J_all: List[np.ndarray] = []
        KT = self.K.T
        for (c, S, G, T) in chains:
            for k in range(1, self.N + 1):
                polys = [(self.sp, False)]
                if k == self.N:
                    polys.append((self.tp, False))
                for poly, _ in polys:
                    H, d = poly.H, poly.d
                    q = np.einsum("ri,ij,rj->r", H, S[k], H)
                    q = np.clip(q, 0.0, None)
                    root = np.sqrt(q + eps)
                    g_all.append(H @ c[k] - d + root)
                    if need_grad:
                        HT = np.einsum("ri,jik,rk->rj", H, T[k], H)
                        J = H @ G[k] + HT / (2.0 * root[:, None])
                        J_all.append(J)
            for k in range(self.N):
                H, d = self.ap.H, self.ap.d
                M = KT @ H.T            # columns are K^T h_r
                q = np.einsum("ir,ij,jr->r", M, S[k], M)
                q = np.clip(q, 0.0, None)
                root = np.sqrt(q + eps)
                g_all.append(H @ v[k] - d + root)
                if need_grad:
                    J = np.zeros((H.shape[0], self.n_dec))
                    J[:, k * self.n_u:(k + 1) * self.n_u] = H
                    HT = np.einsum("ir,jik,kr->rj", M, T[k], M)
                    J += HT / (2.0 * root[:, None])
                    J_all.append(J)
        g = np.concatenate(g_all)
        if need_grad:
            return g, np.vstack(J_all), chains
        return g, None, chains

    def initial_margins(self) -> np.ndarray:
        return self.sp.margins(self.x_t)

    def action_set_empty(self, chains) -> bool:
        """Is some stage's simultaneous member-tightened action box empty?"""
        lo, hi = _action_bounds(self.ap)
        KT = self.K.T
        for k in range(self.N):
            lo_k = lo.copy()
            hi_k = hi.copy()
            for (c, S, _, _) in chains:
                for row, d in zip(self.ap.H, self.ap.d):
                    j = np.nonzero(row)[0][0]
                    h = KT @ row
                    shrink = np.sqrt(max(float(h @ S[k] @ h), 0.0))
                    if row[j] > 0:
                        hi_k[j] = min(hi_k[j], (d - shrink) / row[j])
                    else:
                        lo_k[j] = max(lo_k[j], -(d - shrink) / (-row[j]))
            if np.any(lo_k > hi_k):
                return True
        return False

    def exact_max_violation(self, v_seq) -> float:
        g, _, chains = self.margins(np.asarray(v_seq, dtype=float).ravel(),
                                    need_grad=False, smoothed=False)
        return max(float(g.max()), float(self.initial_margins().max()))


def _mean_centers(chains, N: int) -> np.ndarray:
    """Nominal stage references: member-averaged tube centers z_0..z_{N-1}."""
    stacks = np.array([[c[k] for k in range(N)] for (c, _, _, _) in chains])
    return stacks.mean(axis=0)


def _penalized(engine: _TubeEngine, u_t, mu: float, shift: float, pin_first: bool):
    """Objective/gradient closure over the (possibly tail-only) decision."""
    n_u = engine.n_u

    def fg(z):
        v = np.concatenate([u_t, z]) if pin_first else z
        g, J, _ = engine.margins(v, need_grad=True, smoothed=True)
        act = np.clip(g + shift, 0.0, None)
        if pin_first:
            obj = float(mu * np.sum(act ** 2))
            grad = 2.0 * mu * (act @ J)
            return obj, grad[n_u:]
        d0 = v[:n_u] - u_t
        obj = float(d0 @ d0 + mu * np.sum(act ** 2))
        grad = 2.0 * mu * (act @ J)
        grad[:n_u] += 2.0 * d0
        return obj, grad

    return fg


def _minimize(fg, z0, iter_cap: int):
    res = optimize.minimize(fg, z0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max(iter_cap, 1), "ftol": 1e-12,
                                     "gtol": 1e-10})
    return res.x, int(res.nit)


def _feasible_result(engine: _TubeEngine, u_t, v_seq, action_poly, K, iters: int,
                     mode: str = "hard") -> CertificationResult:
    v = np.asarray(v_seq, dtype=float).reshape(engine.N, engine.n_u)
    viol = engine.exact_max_violation(v)
    _, _, chains = engine.margins(v.ravel(), need_grad=False, smoothed=False)
    seq = FeedbackPolicySequence(v, _mean_centers(chains, engine.N), K, action_poly)
    obj = float(np.sum((v[0] - u_t) ** 2))
    return CertificationResult(True, v[0].copy(), v, seq, mode, obj, viol,
                               iters, engine.rollouts)


def certify(ensemble, x_t, u_t, state_polytope: Polytope, action_polytope: Polytope,
            terminal_polytope: Polytope, cfg: CertifierConfig,
            warm_start=None, trace: Optional[list] = None) -> CertificationResult:
    """Minimal-correction certification of a proposed action.

    Tries, in order: the proposal with a warm/replicated tail verified
    exactly (no optimization); a penalty solve over the tail with the first
    action pinned to the proposal (zero correction if it lands feasible);
    a full penalty solve over the whole sequence.  A feasible return always
    re-verifies the exact margins to the configured tolerance.
    """
    members = ensemble.members if hasattr(ensemble, "members") else list(ensemble)
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(u_t))):
        raise ValueError("non-finite certify input")
    N = cfg.horizon
    n_u = u_t.shape[0]
    K = cfg.feedback_for(x_t.shape[0], n_u)
    engine = _TubeEngine(members, x_t, K, state_polytope, action_polytope,
                         terminal_polytope, N, cfg.rollout_budget)

    def infeasible(best_viol, iters, reason):
        return CertificationResult(False, None, None, None, "hard", float("nan"),
                                   best_viol, iters, engine.rollouts,
                                   {"reason": reason})

    warm = None
    if warm_start is not None and cfg.warm_start:
        warm = np.atleast_2d(np.asarray(
            warm_start.actions if isinstance(warm_start, FeedbackPolicySequence)
            else warm_start, dtype=float))
        if warm.shape != (N, n_u):
            warm = None

    best_viol = np.inf
    iters_left = cfg.max_iterations
    try:
        # fast path: proposal plus a cheap tail, verified exactly
        candidates = []
        if warm is not None:
            candidates.append(np.vstack([u_t[None, :], warm[1:], warm[-1:]])[:N])
        candidates.append(np.tile(u_t, (N, 1)))
        for cand in candidates:
            viol = engine.exact_max_violation(cand)
            best_viol = min(best_viol, viol)
            if viol <= cfg.tol:
                return _feasible_result(engine, u_t, cand, action_polytope, K, 0)

        # pinned phase: keep v_0 = u_t, search the tail (horizon > 1 only)
        if N > 1:
            z = (candidates[0][1:] if warm is not None else np.tile(u_t, (N - 1, 1))).ravel()
            shift = _SHIFT
            pinned_prev = np.inf
            for mu in (1e2, 1e4, cfg.penalty_cap):
                if iters_left <= 0:
                    break
                z, nit = _minimize(_penalized(engine, u_t, mu, shift, True), z, iters_left)
                iters_left -= max(nit, 1)
                v_try = np.concatenate([u_t, z])
                viol = engine.exact_max_violation(v_try)
                best_viol = min(best_viol, viol)
                if trace is not None:
                    trace.append((len(trace) + 1, 0.0, viol, mu))
                if viol <= cfg.tol:
                    return _feasible_result(engine, u_t, v_try, action_polytope, K, 1)
                # deep violation that barely moved: the pin itself is the
                # problem, hand over to the full phase instead of escalating
                if viol > 0.1 and viol > 0.7 * pinned_prev:
                    break
                pinned_prev = viol
                # a small stationary residual means the penalty gradient is
                # being balanced by dt-scaled constraint rows; aim the
                # penalized margins deeper inside instead of growing mu
                if viol < 1e-2:
                    shift = max(shift, 4.0 * viol)

        # full phase over the whole sequence; keep the best exact-feasible
        # iterate ever seen so a warm re-solve can never come back worse
        v = (warm if warm is not None else np.tile(u_t, (N, 1))).ravel().copy()
        best_v = None
        best_obj = np.inf
        if engine.exact_max_violation(v) <= cfg.tol:
            best_v = v.copy()
            best_obj = float(np.sum((v[:n_u] - u_t) ** 2))
        mu = cfg.penalty_cap / 10.0 if best_v is not None else cfg.penalty_init
        shift = _SHIFT
        outer = 0
        polish = 0
        full_prev = np.inf
        while iters_left > 0:
            outer += 1
            v, nit = _minimize(_penalized(engine, u_t, mu, shift, False), v, iters_left)
            iters_left -= max(nit, 1)
            viol = engine.exact_max_violation(v)
            best_viol = min(best_viol, viol)
            if trace is not None:
                trace.append((len(trace) + 1, float(np.sum((v[:n_u] - u_t) ** 2)), viol, mu))
            g, _, chains = engine.margins(v, need_grad=False, smoothed=True)
            if engine.action_set_empty(chains):
                return infeasible(best_viol, outer, "empty_action_set")
            if viol <= cfg.tol:
                obj = float(np.sum((v[:n_u] - u_t) ** 2))
                improved = obj < best_obj - _OBJ_STATIONARY
                if improved:
                    best_v = v.copy()
                    best_obj = obj
                if np.max(g + shift) <= 0.0 or not improved:
                    return _feasible_result(engine, u_t, best_v, action_polytope, K, outer)
            elif best_v is None and outer >= 3 and viol > 0.1 and viol > 0.7 * full_prev:
                # deep violation stalled across penalty stages: growing mu
                # further only burns budget, declare infeasible now
                break
            full_prev = viol
            if mu < cfg.penalty_cap:
                mu = min(mu * cfg.penalty_growth, cfg.penalty_cap)
            elif viol > cfg.tol and viol < 1e-2 and polish < 3:
                # stationary residual at the penalty cap: push the penalized
                # margins deeper inside rather than growing mu further
                shift = max(shift, 4.0 * viol)
                polish += 1
            elif best_v is not None:
                return _feasible_result(engine, u_t, best_v, action_polytope, K, outer)
            else:
                break
        if best_v is not None:
            return _feasible_result(engine, u_t, best_v, action_polytope, K, outer)
        return infeasible(best_viol, outer, "max_iterations")
    except _Blowup:
        return infeasible(best_viol, 0, "model_blowup")
    except _BudgetExhausted:
        try:
            fresh = _TubeEngine(members, x_t, K, state_polytope, action_polytope,
                                terminal_polytope, N, 10)
            if "v" in locals() and fresh.exact_max_violation(v) <= cfg.tol:
                return _feasible_result(fresh, u_t, v, action_polytope, K, -1)
        except (_Blowup, _BudgetExhausted):
            pass
        return infeasible(best_viol, -1, "rollout_budget")


def soft_certify(ensemble, x_t, u_t, state_polytope: Polytope, action_polytope: Polytope,
                 terminal_polytope: Polytope, cfg: CertifierConfig,
                 warm_start=None) -> CertificationResult:
    """Best-effort correction with violations as a fixed quadratic penalty."""
    members = ensemble.members if hasattr(ensemble, "members") else list(ensemble)
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    u_t = np.asarray(u_t, dtype=float).reshape(-1)
    N = cfg.horizon
    n_u = u_t.shape[0]
    K = cfg.feedback_for(x_t.shape[0], n_u)
    engine = _TubeEngine(members, x_t, K, state_polytope, action_polytope,
                         terminal_polytope, N, cfg.rollout_budget)
    warm = None
    if warm_start is not None:
        warm = np.atleast_2d(np.asarray(
            warm_start.actions if isinstance(warm_start, FeedbackPolicySequence)
            else warm_start, dtype=float))
        if warm.shape != (N, n_u):
            warm = None
    v0 = (warm if warm is not None else np.tile(u_t, (N, 1))).ravel().copy()
    try:
        v, nit = _minimize(_penalized(engine, u_t, cfg.soft_penalty, 0.0, False),
                           v0, cfg.max_iterations)
        viol = engine.exact_max_violation(v)
        _, _, chains = engine.margins(v, need_grad=False, smoothed=False)
    except (_Blowup, _BudgetExhausted):
        v = v0
        viol = float("inf")
        chains = None
    v = v.reshape(N, n_u)
    lo, hi = _action_bounds(action_polytope)
    v = np.clip(v, lo, hi)      # soft plans are executed, so stay inside U
    if chains is not None:
        centers = _mean_centers(chains, N)
    else:
        centers = np.tile(x_t, (N, 1))
    seq = FeedbackPolicySequence(v, centers, K, action_polytope)
    obj = float(np.sum((v[0] - u_t) ** 2))
    return CertificationResult(viol <= cfg.tol, v[0].copy(), v, seq, "soft", obj,
                               viol, 1, engine.rollouts,
                               {"residual_violation": max(viol, 0.0)})
