"""Probabilistic dynamics models: Gaussian-head MLPs and bootstrap ensembles.

Each model predicts the next state as the denormalized network output plus,
when a physics prior is attached, the prior's next-state map; the network
then only has to learn the residual.  The second head emits log-variances,
soft-clamped into [1e-8, 1e2] in physical units.  All gradients and input
Jacobians are analytic; only the prior term uses central finite differences
(step 1e-5).
"""

from typing import Callable, List, Optional, Tuple

import numpy as np

from tubecert import envs, nn

VAR_MIN = 1e-8
VAR_MAX = 1e2
_LV_LO = np.log(VAR_MIN)
_LV_HI = np.log(VAR_MAX)
_PRIOR_FD_STEP = 1e-5
_STD_FLOOR = 1e-8


class TransitionBatch:
    """Plain transition arrays: x (B,n_x), u (B,n_u), x_next (B,n_x).

    ``weights`` are per-row loss weights, all ones unless given.
    """

    def __init__(self, x, u, x_next, weights=None):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.u = np.atleast_2d(np.asarray(u, dtype=float))
        self.x_next = np.atleast_2d(np.asarray(x_next, dtype=float))
        if not (self.x.shape[0] == self.u.shape[0] == self.x_next.shape[0]):
            raise ValueError("row mismatch in transition arrays")
        if self.x.shape != self.x_next.shape:
            raise ValueError("x and x_next must have matching shape")
        if weights is None:
            self.weights = np.ones(self.x.shape[0])
        else:
            self.weights = np.asarray(weights, dtype=float).reshape(-1)
            if self.weights.shape[0] != self.x.shape[0]:
                raise ValueError("weights row count mismatch")
        for arr in (self.x, self.u, self.x_next, self.weights):
            if not np.all(np.isfinite(arr)):
                raise ValueError("transition arrays must be finite")

    def __len__(self):
        return self.x.shape[0]


class Prior:
    """Deterministic next-state map used as an additive model base."""

    def __init__(self, env_kind: str, offset: float):
        self.env_kind = env_kind
        self.offset = float(offset)
        self._fn = envs.mean_step_fn(env_kind, param_scale=1.0 + self.offset)

    def __call__(self, x, u):
        return self._fn(x, u)


def make_prior(env_kind: str, offset: float = 0.0) -> Prior:
    """Physics prior from an environment's mean dynamics.

    Every scalable physical parameter is multiplied by (1 + offset), so
    offset = 0 reproduces the environment's own deterministic step exactly.
    """
    return Prior(env_kind, offset)


def nll_from_stats(residuals, variances) -> float:
    """Gaussian negative log-likelihood core: mean_row(r' S^-1 r + logdet S).

    ``residuals`` and ``variances`` are (B, n) arrays with diagonal
    covariance entries; constant terms are dropped.
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    per_row = np.sum(residuals ** 2 / variances + np.log(variances), axis=1)
    return float(np.mean(per_row))


class GaussianDynamicsModel:
    """Single probabilistic model with mean and diagonal-variance heads."""

    def __init__(self, n_x: int, n_u: int, hidden=(10, 10), activation: str = "tanh",
                 rng: Optional[np.random.Generator] = None, prior: Optional[Prior] = None):
        self.n_x = n_x
        self.n_u = n_u
        self.hidden = tuple(hidden)
        self.activation = activation
        self.sizes = [n_x + n_u, *self.hidden, 2 * n_x]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = nn.init_mlp(self.sizes, rng)
        self.prior = prior
        # identity normalization until the first training round
        self.in_mean = np.zeros(n_x + n_u)
        self.in_std = np.ones(n_x + n_u)
        self.t_mean = np.zeros(n_x)
        self.t_std = np.ones(n_x)

    # -- bases -----------------------------------------------------------

    def base(self, x, u):
        if self.prior is not None:
            return self.prior(x, u)
        return np.zeros(self.n_x)

    def _base_batch(self, X, U):
        if self.prior is None:
            return np.zeros_like(X)
        return np.stack([self.prior(x, u) for x, u in zip(X, U)])

    def _base_jacobians(self, x, u):
        if self.prior is None:
            return np.zeros((self.n_x, self.n_x)), np.zeros((self.n_x, self.n_u))
        h = _PRIOR_FD_STEP
        A = np.zeros((self.n_x, self.n_x))
        B = np.zeros((self.n_x, self.n_u))
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        for i in range(self.n_x):
            e = np.zeros(self.n_x)
            e[i] = h
            A[:, i] = (self.prior(x + e, u) - self.prior(x - e, u)) / (2.0 * h)
        for j in range(self.n_u):
            e = np.zeros(self.n_u)
            e[j] = h
            B[:, j] = (self.prior(x, u + e) - self.prior(x, u - e)) / (2.0 * h)
        return A, B

    # -- heads -----------------------------------------------------------

    def _head(self, X, U):
        Z = (np.column_stack([X, U]) - self.in_mean) / self.in_std
        out, cache = nn.mlp_forward(self.params, Z, self.activation)
        delta_norm = out[:, : self.n_x]
        lv_raw = out[:, self.n_x :]
        lv_phys, lv_dclamp = nn.soft_clamp(lv_raw + 2.0 * np.log(self.t_std), _LV_LO, _LV_HI)
        return delta_norm, lv_phys, lv_dclamp, cache

    def nn_delta(self, x, u):
        r"""Denormalized network delta alone (no base term)."""
        delta_norm, _, _, _ = self._head(np.atleast_2d(x), np.atleast_2d(u))
        return self.t_mean + self.t_std * delta_norm[0]

    def predict(self, x, u) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and per-coordinate variance of the next state."""
        mean, var = self.predict_batch(np.atleast_2d(x), np.atleast_2d(u))
        return mean[0], var[0]

    def predict_batch(self, X, U):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if X.shape[1] != self.n_x or U.shape[1] != self.n_u:
            raise ValueError("state/action dimension mismatch")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
            raise ValueError("non-finite model input")
        delta_norm, lv_phys, _, _ = self._head(X, U)
        mean = self._base_batch(X, U) + self.t_mean + self.t_std * delta_norm
        # exp(log v) can undershoot the bound by an ulp; keep the interval closed
        return mean, np.clip(np.exp(lv_phys), VAR_MIN, VAR_MAX)

    def jacobians(self, x, u):
        """Analytic mean-head Jacobians (A, B) w.r.t. state and action."""
        mean, var, A, B, _, _ = self.linearize(x, u)
        return A, B

    def linearize(self, x, u):
        """One-pass evaluation for tube rollouts.

        Returns (mean, var, A, B, dvar_dx, dvar_du); the mean Jacobians are
        analytic through the network, with the prior term (when attached)
        differenced centrally at step 1e-5.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        delta_norm, lv_phys, lv_dclamp, _ = self._head(x[None, :], u[None, :])
        var = np.clip(np.exp(lv_phys[0]), VAR_MIN, VAR_MAX)
        mean = self.base(x, u) + self.t_mean + self.t_std * delta_norm[0]

        z = (np.concatenate([x, u]) - self.in_mean) / self.in_std
        J = nn.mlp_io_jacobian(self.params, z, self.activation) / self.in_std
        Jd = self.t_std[:, None] * J[: self.n_x]
        Jv = (var * lv_dclamp[0])[:, None] * J[self.n_x :]
        Abase, Bbase = self._base_jacobians(x, u)
        A = Abase + Jd[:, : self.n_x]
        B = Bbase + Jd[:, self.n_x :]
        return mean, var, A, B, Jv[:, : self.n_x], Jv[:, self.n_x :]

    # -- loss ------------------------------------------------------------

    def _norm_targets(self, batch: TransitionBatch):
        base = self._base_batch(batch.x, batch.u)
        return (batch.x_next - base - self.t_mean) / self.t_std

    def nll_loss(self, batch: TransitionBatch) -> float:
        """Weighted mean Gaussian NLL of a batch in normalized target space."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        delta_norm, lv_phys, _, _ = self._head(batch.x, batch.u)
        lv_norm = lv_phys - 2.0 * np.log(self.t_std)
        resid = delta_norm - self._norm_targets(batch)
        w = batch.weights / batch.weights.sum()
        per_row = np.sum(resid ** 2 * np.exp(-lv_norm) + lv_norm, axis=1)
        return float(np.sum(w * per_row))

    def nll_grad(self, batch: TransitionBatch):
        """Loss and analytic parameter gradient (list matching params)."""
        delta_norm, lv_phys, lv_dclamp, cache = self._head(batch.x, batch.u)
        lv_norm = lv_phys - 2.0 * np.log(self.t_std)
        resid = delta_norm - self._norm_targets(batch)
        inv_var = np.exp(-lv_norm)
        w = (batch.weights / batch.weights.sum())[:, None]
        loss = float(np.sum(w[:, 0] * np.sum(resid ** 2 * inv_var + lv_norm, axis=1)))
        d_mean = 2.0 * resid * inv_var * w
        d_lv = (1.0 - resid ** 2 * inv_var) * lv_dclamp * w
        grads, _ = nn.mlp_backward(self.params, cache, np.column_stack([d_mean, d_lv]))
        return loss, grads

    def refresh_normalization(self, batch: TransitionBatch):
        Z = np.column_stack([batch.x, batch.u])
        self.in_mean = Z.mean(axis=0)
        self.in_std = np.maximum(Z.std(axis=0), _STD_FLOOR)
        targets = batch.x_next - self._base_batch(batch.x, batch.u)
        self.t_mean = targets.mean(axis=0)
        self.t_std = np.maximum(targets.std(axis=0), _STD_FLOOR)


class Ensemble:
    """Bootstrap ensemble of Gaussian dynamics models with a shared prior."""

    def __init__(self, n_x, n_u, size=3, hidden=(10, 10), activation="tanh",
                 seed=0, prior: Optional[Prior] = None):
        self.n_x = n_x
        self.n_u = n_u
        self.prior = prior
        root = np.random.default_rng(seed)
        self.members: List[GaussianDynamicsModel] = [
            GaussianDynamicsModel(
                n_x, n_u, hidden=hidden, activation=activation,
                rng=np.random.default_rng(root.integers(2 ** 63)), prior=prior,
            )
            for _ in range(size)
        ]

    @property
    def size(self):
        return len(self.members)

    def predict(self, x, u, member: int):
        return self.members[member].predict(x, u)

    def sample_next(self, X, U, member_idx, rng):
        """Gaussian next-state samples, one ensemble member per row."""
        X = np.atleast_2d(X)
        U = np.atleast_2d(U)
        out = np.empty_like(X)
        for m in np.unique(member_idx):
            rows = np.nonzero(member_idx == m)[0]
            mean, var = self.members[int(m)].predict_batch(X[rows], U[rows])
            out[rows] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return out


class TrainConfig:
    def __init__(self, epochs=20, batch_size=256, learning_rate=1e-3,
                 holdout_fraction=0.1, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.holdout_fraction = holdout_fraction
        self.seed = seed


def train(ensemble: Ensemble, batch: TransitionBatch, config: Optional[TrainConfig] = None,
          optimizers: Optional[list] = None):
    """Train every member on its own bootstrap resample of the data.

    Normalization statistics are refreshed from the full batch before
    descending and stay frozen until the next call.  Returns a history dict
    with per-member train/holdout loss trajectories; pass back ``optimizers``
    to continue a previous round with warm optimizer state.
    """
    if config is None:
        config = TrainConfig()
    rng = np.random.default_rng(config.seed)
    n = len(batch)
    if n < 2 * config.batch_size:
        raise ValueError(f"need at least {2 * config.batch_size} rows, got {n}")
    n_hold = min(max(int(round(config.holdout_fraction * n)), 1), n - 1) \
        if n >= 2 and config.holdout_fraction > 0 else 0
    perm = rng.permutation(n)
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]

    for member in ensemble.members:
        member.refresh_normalization(batch)

    hold = TransitionBatch(batch.x[hold_idx], batch.u[hold_idx], batch.x_next[hold_idx]) \
        if n_hold else None
    history = {"train": [], "holdout": []}
    if optimizers is None:
        optimizers = [nn.Adam(m.params, lr=config.learning_rate) for m in ensemble.members]
    for member, opt in zip(ensemble.members, optimizers):
        boot = rng.integers(0, train_idx.size, size=train_idx.size)
        idx = train_idx[boot]
        mx, mu, mxn = batch.x[idx], batch.u[idx], batch.x_next[idx]
        tr_hist, ho_hist = [], []
        for _ in range(config.epochs):
            order = rng.permutation(idx.size)
            losses = []
            for start in range(0, idx.size, config.batch_size):
                rows = order[start : start + config.batch_size]
                mini = TransitionBatch(mx[rows], mu[rows], mxn[rows])
                loss, grads = member.nll_grad(mini)
                opt.step(member.params, grads)
                losses.append(loss)
            tr_hist.append(float(np.mean(losses)))
            if hold is not None:
                ho_hist.append(member.nll_loss(hold))
        history["train"].append(tr_hist)
        history["holdout"].append(ho_hist)
    history["optimizers"] = optimizers
    return history


# --- checkpoints ---------------------------------------------------------------

_CKPT_VERSION = 1


def save_ensemble(path, ensemble: Ensemble, extra: Optional[dict] = None):
    """Write a versioned binary checkpoint; parameters round-trip bit-exactly."""
    arrays = {}
    m0 = ensemble.members[0]
    meta = {
        "version": _CKPT_VERSION,
        "n_x": ensemble.n_x,
        "n_u": ensemble.n_u,
        "size": ensemble.size,
        "hidden": list(m0.hidden),
        "activation": m0.activation,
        "var_bounds": [VAR_MIN, VAR_MAX],
        "prior_kind": ensemble.prior.env_kind if ensemble.prior else "",
        "prior_offset": ensemble.prior.offset if ensemble.prior else 0.0,
    }
    if extra:
        meta.update(extra)
    import json

    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    for i, m in enumerate(ensemble.members):
        arrays[f"params_{i}"] = nn.pack(m.params)
        arrays[f"stats_{i}"] = np.concatenate([m.in_mean, m.in_std, m.t_mean, m.t_std])
    np.savez(path, **arrays)


def load_ensemble(path) -> Ensemble:
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"].tobytes()).decode())
        if meta["version"] != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        prior = make_prior(meta["prior_kind"], meta["prior_offset"]) if meta["prior_kind"] else None
        ens = Ensemble(
            meta["n_x"], meta["n_u"], size=meta["size"], hidden=tuple(meta["hidden"]),
            activation=meta["activation"], prior=prior,
        )
        n_x, n_u = meta["n_x"], meta["n_u"]
        for i, m in enumerate(ens.members):
            m.params = nn.unpack(data[f"params_{i}"], m.sizes)
            stats = data[f"stats_{i}"]
            k = n_x + n_u
            m.in_mean = stats[:k].copy()
            m.in_std = stats[k : 2 * k].copy()
            m.t_mean = stats[2 * k : 2 * k + n_x].copy()
            m.t_std = stats[2 * k + n_x :].copy()
        ens.meta = meta
    return ens
