"""Training orchestration: offline collection, the epoch loop, persistence.

The loop alternates model and policy training with certified environment
episodes.  Every proposed action passes through the hard certifier; on
infeasibility the previous plan's next stage is executed, and after a full
horizon of consecutive failures the soft solver takes over until a hard
solve succeeds again.  Step and epoch metrics are flushed to disk as the
run progresses, so a crash loses at most the current epoch.
"""

import csv
import hashlib
import json
import math
import os
import time
import traceback
from typing import Callable, Optional

import numpy as np

from tubecert import certifier, envs, learner, models, safe_set, tubes
from tubecert.datasets import TransitionDataset


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class CollectionError(RuntimeError):
    """The backup controller violated constraints while collecting data."""


class TrainingAbort(RuntimeError):
    """Non-recoverable failure; a crash report was written (exit code 3)."""

    def __init__(self, message: str, report_path: str):
        super().__init__(message)
        self.report_path = report_path


# per-environment hyperparameters; everything else shares one default
_KIND_DEFAULTS = {
    "pendulum": dict(ensemble_hidden=(10, 10), batch_size=256, policy_updates=10,
                     model_rollouts=400, rollout_len=5, real_ratio=0.1),
    "cartpole": dict(ensemble_hidden=(10, 10), batch_size=256, policy_updates=5,
                     model_rollouts=400, rollout_len=1, real_ratio=0.1),
    "twolink": dict(ensemble_hidden=(20, 20), batch_size=512, policy_updates=20,
                    model_rollouts=200, rollout_len=3, real_ratio=0.1),
    "drone": dict(ensemble_hidden=(20, 20), batch_size=512, policy_updates=20,
                  model_rollouts=400, rollout_len=1, real_ratio=1.0),
}

_SHARED_DEFAULTS = dict(
    seed=0,
    epochs=30,
    steps_per_epoch=400,
    ensemble_size=5,
    horizon=5,
    delay=10,
    use_prior=False,
    prior_offset=0.0,
    k_fill=0.5,
    noise_scale=1e-3,
    certify=True,
    init_steps=8000,
    pretrain_epochs=50,
    model_train_epochs=20,
    model_refit_epochs=5,
    model_batch_size=256,
    model_lr=1e-3,
    actor_hidden=(100, 100),
    learner_lr=3e-4,
    gamma=0.99,
    tau=0.005,
    entropy_weight=0.05,
    exploration_noise=0.5,
    synthetic_capacity=100000,
    tol=1e-6,
    max_iterations=200,
    rollout_budget=5000,
    penalty_init=10.0,
    penalty_cap=1e6,
    soft_penalty=1e4,
    out_dir="",
)

_INT_FIELDS = {"seed", "epochs", "steps_per_epoch", "ensemble_size", "horizon",
               "delay", "init_steps", "pretrain_epochs", "model_train_epochs",
               "model_refit_epochs", "model_batch_size", "batch_size",
               "policy_updates", "model_rollouts", "rollout_len",
               "synthetic_capacity", "max_iterations", "rollout_budget"}
_FLOAT_FIELDS = {"prior_offset", "k_fill", "noise_scale", "model_lr",
                 "learner_lr", "gamma", "tau", "entropy_weight",
                 "exploration_noise", "real_ratio", "tol", "penalty_init",
                 "penalty_cap", "soft_penalty"}
_BOOL_FIELDS = {"use_prior", "certify"}
_TUPLE_FIELDS = {"ensemble_hidden", "actor_hidden"}
_STR_FIELDS = {"env_kind", "out_dir"}

FIELDS = _INT_FIELDS | _FLOAT_FIELDS | _BOOL_FIELDS | _TUPLE_FIELDS | _STR_FIELDS


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_FIELDS:
        return raw
    if key in _BOOL_FIELDS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key in _TUPLE_FIELDS:
        try:
            return tuple(int(part) for part in raw.split(",") if part.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}")
    try:
        if key in _INT_FIELDS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: could not parse {raw!r}")


class RunConfig:
    """Validated knobs for one training or benchmark run."""

    def __init__(self, env_kind: str, **overrides):
        if env_kind not in envs.ENV_KINDS:
            raise ConfigError(f"unknown environment kind {env_kind!r}")
        self.env_kind = env_kind
        values = dict(_SHARED_DEFAULTS)
        values.update(_KIND_DEFAULTS[env_kind])
        for key, val in overrides.items():
            if key not in FIELDS or key == "env_kind":
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
        for key, val in values.items():
            setattr(self, key, val)
        self.validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        data = dict(mapping)
        kind = data.pop("env_kind", None)
        if kind is None:
            raise ConfigError("config must set env_kind")
        return cls(kind, **data)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        """Flat key=value lines; '#' starts a comment, blank lines ignored."""
        data = {}
        try:
            fh = open(path)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        with fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, raw = line.split("=", 1)
                key = key.strip()
                if key not in FIELDS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                data[key] = _parse_value(key, raw)
        return cls.from_mapping(data)

    # -- validation and identity -------------------------------------------

    def validate(self):
        def check(cond, msg):
            if not cond:
                raise ConfigError(msg)

        check(self.seed >= 0, "seed must be nonnegative")
        check(self.epochs >= 1, "epochs must be at least 1")
        check(self.steps_per_epoch >= 1, "steps_per_epoch must be at least 1")
        check(1 <= self.ensemble_size <= 10, "ensemble_size must be in [1, 10]")
        check(1 <= self.horizon <= 12, "horizon must be in [1, 12]")
        check(self.delay >= 0, "delay must be nonnegative")
        check(-0.9 <= self.prior_offset <= 1.0, "prior_offset must be in [-0.9, 1.0]")
        check(abs(self.k_fill) <= 10.0, "k_fill magnitude must be at most 10")
        check(self.noise_scale >= 0.0, "noise_scale must be nonnegative")
        check(self.init_steps >= 1000, "init_steps must be at least 1000")
        check(self.pretrain_epochs >= 1, "pretrain_epochs must be at least 1")
        check(self.model_train_epochs >= 1 and self.model_refit_epochs >= 0,
              "model training epochs must be positive (refit may be 0)")
        check(self.model_batch_size >= 1 and self.batch_size >= 1,
              "batch sizes must be positive")
        check(self.model_lr > 0 and self.learner_lr > 0, "learning rates must be positive")
        check(0.0 < self.gamma < 1.0, "gamma must be in (0, 1)")
        check(0.0 < self.tau <= 1.0, "tau must be in (0, 1]")
        check(self.entropy_weight >= 0.0, "entropy_weight must be nonnegative")
        check(self.exploration_noise >= 0.0,
              "exploration_noise must be nonnegative")
        check(self.policy_updates >= 0, "policy_updates must be nonnegative")
        check(self.model_rollouts >= 0, "model_rollouts must be nonnegative")
        check(self.rollout_len >= 1, "rollout_len must be at least 1")
        check(0.0 < self.real_ratio <= 1.0, "real_ratio must be in (0, 1]")
        check(self.synthetic_capacity >= 1, "synthetic_capacity must be positive")
        check(self.tol > 0, "tol must be positive")
        check(self.max_iterations >= 1, "max_iterations must be at least 1")
        check(self.rollout_budget >= 1, "rollout_budget must be at least 1")
        check(self.penalty_init > 0 and self.penalty_cap >= self.penalty_init,
              "penalty schedule must satisfy 0 < init <= cap")
        check(self.soft_penalty > 0, "soft_penalty must be positive")
        for field in _TUPLE_FIELDS:
            sizes = getattr(self, field)
            check(len(sizes) >= 1 and all(int(s) >= 1 for s in sizes),
                  f"{field} must list positive layer widths")

    def to_dict(self) -> dict:
        out = {"env_kind": self.env_kind}
        for key in sorted(FIELDS - {"env_kind"}):
            val = getattr(self, key)
            out[key] = list(val) if isinstance(val, tuple) else val
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


STEP_COLUMNS = ("epoch", "t", "reward", "violated", "feasible", "mode",
                "solve_ms", "objective")
EPOCH_COLUMNS = ("epoch", "episode_return", "cum_violations", "infeasible_rate",
                 "safe_set_area", "capture_fraction")


class RunMetrics:
    """Per-step rows plus per-epoch aggregates, flushable to CSV."""

    def __init__(self):
        self.step_rows = []
        self.epoch_rows = []
        self._steps_flushed = 0

    def add_step(self, epoch, t, reward, violated, feasible, mode, solve_ms,
                 objective):
        self.step_rows.append((int(epoch), int(t), float(reward), bool(violated),
                               bool(feasible), str(mode), float(solve_ms),
                               float(objective)))

    def add_epoch(self, epoch, episode_return, cum_violations, infeasible_rate,
                  safe_set_area, capture_fraction):
        if self.epoch_rows and cum_violations < self.epoch_rows[-1][2]:
            raise AssertionError("cumulative violation count decreased")
        if not 0.0 <= infeasible_rate <= 1.0:
            raise AssertionError("infeasibility rate outside [0, 1]")
        self.epoch_rows.append((int(epoch), float(episode_return),
                                int(cum_violations), float(infeasible_rate),
                                float(safe_set_area), float(capture_fraction)))

    @property
    def total_violations(self) -> int:
        return sum(1 for row in self.step_rows if row[3])

    def flush_steps(self, path):
        new = self.step_rows[self._steps_flushed:]
        mode = "a" if self._steps_flushed else "w"
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh)
            if not self._steps_flushed:
                w.writerow(STEP_COLUMNS)
            for row in new:
                w.writerow(row)
        self._steps_flushed = len(self.step_rows)

    def write_epochs(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPOCH_COLUMNS)
            for row in self.epoch_rows:
                w.writerow(row)


def collect_initial(env, backup_policy: Callable, steps: int = 8000,
                    rng: Optional[np.random.Generator] = None) -> TransitionDataset:
    """Roll the backup controller for `steps` transitions, all violation-free.

    Any constraint violation aborts: the backup controller is the safety
    anchor of the whole run, so a single excursion means it is misconfigured
    for this environment.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    spec = env.spec
    ds = TransitionDataset(spec.n_x, spec.n_u)
    episode = 0
    x = env.reset()
    for i in range(steps):
        u = backup_policy(x, rng)
        t_before = env.t
        xn, r, violated, terminated = env.step(u)
        if violated:
            raise CollectionError(
                f"backup policy violated state constraints at step {i} of "
                f"{spec.kind} (state {np.round(xn, 4).tolist()}, action "
                f"{np.round(u, 4).tolist()})")
        ds.append(x, u, xn, r, feasible=True, done=terminated, t=t_before,
                  episode=episode)
        if terminated:
            x = env.reset()
            episode += 1
        else:
            x = xn
    return ds


def _episode_returns(ds: TransitionDataset, episodes: int) -> np.ndarray:
    """Per-episode reward sums over the first `episodes` complete episodes."""
    out = []
    for e in range(episodes):
        rows = np.asarray(ds.episode)[: len(ds)] == e
        if not np.any(rows):
            break
        out.append(float(np.sum(np.asarray(ds.r)[rows])))
    return np.asarray(out)


def _write_crash_report(out_dir, exc, context) -> str:
    path = os.path.join(out_dir, "crash_report.json")
    report = {
        "error": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exc(),
    }
    report.update(context)
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    return path


def run_training(config: RunConfig) -> RunMetrics:
    """Full training run; writes metrics, safe sets, and checkpoints."""
    config.validate()
    if not config.out_dir:
        raise ConfigError("out_dir must be set for training runs")
    os.makedirs(config.out_dir, exist_ok=True)
    stale = os.path.join(config.out_dir, "crash_report.json")
    if os.path.exists(stale):
        os.remove(stale)
    payload = config.to_dict()
    payload["hash"] = config.config_hash()
    with open(os.path.join(config.out_dir, "config.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
    context = {"epoch": 0, "step": 0, "config_hash": payload["hash"]}
    try:
        return _train(config, context)
    except ConfigError:
        raise
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        path = _write_crash_report(config.out_dir, exc, context)
        raise TrainingAbort(f"training aborted: {exc}", path) from exc


def _train(config: RunConfig, context: dict) -> RunMetrics:
    t_start = time.perf_counter()
    env = envs.make_env(config.env_kind, config.noise_scale, config.seed)
    spec = env.spec
    rng = np.random.default_rng(config.seed + 1)
    backup = envs.backup_policy(env)
    real = collect_initial(env, backup, config.init_steps, rng)
    backup_episodes = int(np.asarray(real.episode)[-1]) + 1
    backup_returns = _episode_returns(real, backup_episodes)
    # drop the trailing partial episode from the baseline if one exists
    if config.init_steps % spec.episode_len != 0 and backup_returns.size > 1:
        backup_returns = backup_returns[:-1]

    lo, hi = envs.action_box(spec)
    acs = learner.ActorCriticState(
        spec.n_x, spec.n_u, lo, hi, hidden=config.actor_hidden,
        gamma=config.gamma, tau=config.tau, entropy_weight=config.entropy_weight,
        lr=config.learner_lr, batch_size=config.batch_size, seed=config.seed + 2)
    learner.pretrain(acs.policy, real, epochs=config.pretrain_epochs,
                     batch_size=config.batch_size, seed=config.seed + 3)

    prior = models.make_prior(config.env_kind, config.prior_offset) \
        if config.use_prior else None
    ensemble = models.Ensemble(
        spec.n_x, spec.n_u, size=config.ensemble_size,
        hidden=config.ensemble_hidden, seed=config.seed + 4, prior=prior)
    synthetic = TransitionDataset(spec.n_x, spec.n_u,
                                  capacity=config.synthetic_capacity) \
        if config.model_rollouts > 0 else None

    K = np.full((spec.n_u, spec.n_x), config.k_fill)
    ccfg = certifier.CertifierConfig(
        horizon=config.horizon, feedback=K,
        max_iterations=config.max_iterations, tol=config.tol,
        penalty_init=config.penalty_init, penalty_cap=config.penalty_cap,
        soft_penalty=config.soft_penalty, rollout_budget=config.rollout_budget)
    # recovery probes during an infeasible streak get a smaller budget; any
    # feasible result is still verified exactly, so this only trades solve
    # time against how soon the streak ends
    ccfg_probe = certifier.CertifierConfig(
        horizon=config.horizon, feedback=K,
        max_iterations=max(40, config.max_iterations // 4), tol=config.tol,
        penalty_init=config.penalty_init, penalty_cap=config.penalty_cap,
        soft_penalty=config.soft_penalty, rollout_budget=config.rollout_budget)

    selector = safe_set.TerminalSetSelector(config.delay)
    if config.certify:
        init_states = np.asarray(real.x)[np.asarray(real.t) == 0]
        selector.record(safe_set.estimate_from_states(init_states, 0, spec))

    metrics = RunMetrics()
    steps_path = os.path.join(config.out_dir, "steps.csv")
    epochs_path = os.path.join(config.out_dir, "epochs.csv")
    sets_path = os.path.join(config.out_dir, "safe_sets.json")

    # policy_updates counts per environment step; one update round performs
    # CRITIC_STEPS critic updates, so the round count divides by it
    rounds_per_epoch = max(1, config.policy_updates * config.steps_per_epoch
                           // learner.CRITIC_STEPS) if config.policy_updates else 0

    model_opts = None
    cum_viol = 0
    episode = backup_episodes
    episode_return = 0.0
    x = env.reset()
    prev_seq = None
    streak = 0
    terminal = None
    # multi-epoch runs end on an evaluation pass: exploration has annealed to
    # zero there, policy updates pause, and the best-return weights from the
    # earlier epochs are restored so the closing episode reflects the best
    # policy found rather than the last optimizer wobble
    eval_epoch = config.epochs if config.epochs > 1 else None
    best_return = -np.inf
    best_params = None

    for j in range(1, config.epochs + 1):
        context["epoch"] = j
        tcfg = models.TrainConfig(
            epochs=config.model_train_epochs if j == 1 else config.model_refit_epochs,
            batch_size=config.model_batch_size, learning_rate=config.model_lr,
            seed=config.seed + 100 + j)
        if tcfg.epochs > 0:
            hist = models.train(ensemble, real.to_batch(), tcfg, optimizers=model_opts)
            model_opts = hist["optimizers"]

        if j == eval_epoch:
            if best_params is not None:
                acs.policy.params = [[W.copy(), b.copy()] for W, b in best_params]
        else:
            if synthetic is not None:
                fresh = learner.generate_model_rollouts(
                    ensemble, acs.policy, real, config.rollout_len,
                    config.model_rollouts, env.reward, rng)
                for i in range(len(fresh)):
                    synthetic.append(fresh.x[i], fresh.u[i], fresh.x_next[i],
                                     fresh.r[i], True, False, fresh.t[i],
                                     fresh.episode[i])
            if rounds_per_epoch:
                learner.update(acs, real,
                               synthetic if synthetic is not None and len(synthetic) else None,
                               updates=rounds_per_epoch, real_ratio=config.real_ratio)

        if config.certify:
            est = safe_set.estimate_safe_set(real, j, spec)
            selector.record(est)
            terminal = selector.select(j).polytope
            area = est.area
        else:
            area = float("nan")

        # behavior actions are the policy mean plus annealed Gaussian noise;
        # the variance starts at exploration_noise and reaches zero in the
        # final epoch, so the closing episode runs the deterministic policy
        progress = (j - 1) / (config.epochs - 1) if config.epochs > 1 else 1.0
        explore_std = math.sqrt(config.exploration_noise * (1.0 - progress))

        infeasible_count = 0
        captured = 0
        capture_total = 0
        finished_returns = []
        for s in range(config.steps_per_epoch):
            context["step"] = s
            u_prop = learner.sample_action(acs.policy, x, rng,
                                           deterministic=True)
            if explore_std > 0.0:
                u_prop = np.clip(u_prop + explore_std * rng.standard_normal(len(lo)),
                                 lo, hi)
            res = None
            objective = float("nan")
            t0 = time.perf_counter()
            if not config.certify:
                action, mode, feasible_flag = u_prop, "uncertified", True
            else:
                res = certifier.certify(ensemble, x, u_prop, spec.state_polytope,
                                        spec.action_polytope, terminal,
                                        ccfg if streak == 0 else ccfg_probe,
                                        warm_start=prev_seq)
                feasible_flag = res.feasible
                if res.feasible:
                    action, prev_seq, streak = res.action, res.policy_sequence, 0
                    mode, objective = "hard", res.objective
                else:
                    streak += 1
                    infeasible_count += 1
                    if streak >= config.horizon:
                        soft = certifier.soft_certify(
                            ensemble, x, u_prop, spec.state_polytope,
                            spec.action_polytope, terminal, ccfg,
                            warm_start=prev_seq)
                        action, mode = soft.action, "soft"
                        objective = soft.objective
                        prev_seq = soft.policy_sequence
                    elif prev_seq is not None:
                        action, prev_seq = certifier.fallback_action(prev_seq, x)
                        mode = "fallback"
                    else:
                        action = np.clip(backup(x, rng), lo, hi)
                        mode = "fallback"
            solve_ms = (time.perf_counter() - t0) * 1000.0
            t_before = env.t
            xn, r, violated, terminated = env.step(action)
            if res is not None and res.feasible:
                capture_total += 1
                bundle = tubes.rollout_bundle(ensemble, x, res.v_seq[:1], K)
                report = tubes.captures(bundle, np.vstack([x, xn]),
                                        spec.constrained_coords)
                captured += int(bool(np.all(report.captured)))
            real.append(x, action, xn, r, feasible=feasible_flag,
                        done=terminated, t=t_before, episode=episode)
            metrics.add_step(j, t_before, r, violated, feasible_flag, mode,
                             solve_ms, objective)
            episode_return += r
            cum_viol += int(violated)
            if terminated:
                finished_returns.append(episode_return)
                episode_return = 0.0
                episode += 1
                x = env.reset()
                prev_seq = None
                streak = 0
            else:
                x = xn

        rate = infeasible_count / config.steps_per_epoch if config.certify else 0.0
        ep_return = float(np.mean(finished_returns)) if finished_returns \
            else float("nan")
        cap_frac = captured / capture_total if capture_total else float("nan")
        if j != eval_epoch and np.isfinite(ep_return) and ep_return > best_return:
            best_return = ep_return
            best_params = [[W.copy(), b.copy()] for W, b in acs.policy.params]
        metrics.add_epoch(j, ep_return, cum_viol, rate, area, cap_frac)
        metrics.flush_steps(steps_path)
        metrics.write_epochs(epochs_path)
        with open(sets_path, "w") as fh:
            json.dump(selector.to_json_list(), fh)

    learner.save_policy(os.path.join(config.out_dir, "policy.npz"), acs.policy)
    models.save_ensemble(os.path.join(config.out_dir, "ensemble.npz"), ensemble,
                         extra={"config_hash": context["config_hash"]})
    final_return = float("nan")
    for row in reversed(metrics.epoch_rows):
        if not math.isnan(row[1]):
            final_return = row[1]
            break
    summary = {
        "config_hash": context["config_hash"],
        "env_kind": config.env_kind,
        "seed": config.seed,
        "total_violations": cum_viol,
        "final_episode_return": final_return,
        "backup_return_mean": float(np.mean(backup_returns)),
        "episodes": episode,
        "wall_time_s": time.perf_counter() - t_start,
    }
    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    metrics.summary = summary
    return metrics


# --- complexity benchmark -------------------------------------------------------


def _bench_setup(config: RunConfig, rng):
    """Shared warmup data and solve instances for all benchmark sweeps."""
    env = envs.make_env(config.env_kind, config.noise_scale, config.seed)
    spec = env.spec
    backup = envs.backup_policy(env)
    warm = collect_initial(env, backup, max(512, 4 * 128), rng)
    terminal = safe_set.estimate_from_states(np.asarray(warm.x), 0, spec).polytope
    lo, hi = envs.action_box(spec)
    return spec, warm, terminal, lo, hi


def bench_complexity(config: RunConfig, horizons=None, widths=None,
                     ensemble_sizes=None, trials: int = 30) -> list:
    """Cold-start certification timing swept over one knob at a time.

    Baseline setup: horizon 5, ensemble size 5, hidden layers (20, 20);
    each sweep varies a single dimension.  Returns a list of result rows
    {"sweep", "value", "median_ms", "mean_ms", "trials"}.
    """
    rng = np.random.default_rng(config.seed + 9)
    spec, warm, terminal, lo, hi = _bench_setup(config, rng)
    states = np.asarray(warm.x)
    sweeps = []
    for name, values in (("horizon", horizons), ("width", widths),
                         ("ensemble_size", ensemble_sizes)):
        for value in values or ():
            sweeps.append((name, int(value)))

    rows = []
    for name, value in sweeps:
        horizon = value if name == "horizon" else 5
        size = value if name == "ensemble_size" else 5
        hidden = (value, value) if name == "width" else (20, 20)
        ensemble = models.Ensemble(spec.n_x, spec.n_u, size=size, hidden=hidden,
                                   seed=config.seed + 5)
        models.train(ensemble, warm.to_batch(),
                     models.TrainConfig(epochs=3, batch_size=128,
                                        seed=config.seed + 6))
        ccfg = certifier.CertifierConfig(
            horizon=horizon,
            feedback=np.full((spec.n_u, spec.n_x), config.k_fill),
            max_iterations=config.max_iterations, tol=config.tol,
            rollout_budget=config.rollout_budget)
        times = []
        for _ in range(trials):
            x_t = states[rng.integers(0, states.shape[0])]
            u_t = rng.uniform(lo, hi)
            t0 = time.perf_counter()
            certifier.certify(ensemble, x_t, u_t, spec.state_polytope,
                              spec.action_polytope, terminal, ccfg)
            times.append((time.perf_counter() - t0) * 1000.0)
        rows.append({"sweep": name, "value": value,
                     "median_ms": float(np.median(times)),
                     "mean_ms": float(np.mean(times)), "trials": trials})
    return rows


def write_bench_csv(rows: list, path: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("sweep", "value", "median_ms", "mean_ms", "trials"))
        for row in rows:
            w.writerow((row["sweep"], row["value"], row["median_ms"],
                        row["mean_ms"], row["trials"]))
