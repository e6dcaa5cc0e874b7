"""Multi-objective PPO with per-objective GAE and PCGrad surgery on the actor gradients.

One parameter-shared actor acts for every agent from its own 8-feature
observation; a centralised critic sees the concatenated observations of
one environment and predicts one value per objective.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .env import OBJECTIVES, EnvConfig, SwarmEnv, VectorEnv
from .exceptions import NonFiniteGradient, ValidationError
from .logs import (EPISODE_COLUMNS, REWARD_COLUMNS, UPDATE_COLUMNS, CSVLog, EpisodeTracker)
from .neural import (Adam, backward, entropy, forward, head_backward, init_actor, init_critic,
                     load_checkpoint, log_prob, log_prob_grads, sample_action, save_checkpoint,
                     split_head, MLPParams, Architecture, ACTOR_SIZES, CRITIC_SIZES)

K = len(OBJECTIVES)
PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.95
    lam: float = 0.95
    lr: float = 1e-3
    epochs: int = 4
    rollout_length: int = 16
    minibatch_size: int = 4
    n_envs: int = 4
    total_steps: int = 27000
    pcgrad_enabled: bool = True
    checkpoint_every: int = 50
    adv_std_floor: float = 1e-8

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValidationError("lam must lie in [0, 1]")
        if not self.clip > 0:
            raise ValidationError("clip must be positive")
        for name in ("epochs", "rollout_length", "minibatch_size", "n_envs", "total_steps"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.checkpoint_every < 0:
            raise ValidationError("checkpoint_every must be non-negative")
        return self

    @property
    def steps_per_update(self):
        return self.rollout_length * self.n_envs

    @property
    def n_updates(self):
        return math.ceil(self.total_steps / self.rollout_length)


# ---------------------------------------------------------------------------
# advantage estimation

@dataclass
class AdvantageSet:
    advantages: np.ndarray
    targets: np.ndarray


def compute_gae(rewards, values, dones, truncateds=None, final_values=None, gamma=0.95, lam=0.95):
    """Per-objective GAE by backward recursion.

    ``rewards`` is (T, ..., K) and ``values`` (T+1, ..., K), broadcastable
    against it. ``dones`` marks true terminations (no bootstrap);
    ``truncateds`` marks cut-off episodes, which bootstrap with
    ``final_values`` (or ``values[t+1]`` when that is not given). Either
    kind of ending stops the recursion.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    T = rewards.shape[0]
    if values.shape[0] != T + 1:
        raise ValueError("values need one bootstrap entry past the rollout end")
    done = np.asarray(dones, dtype=bool)[..., None]
    trunc = np.zeros_like(done) if truncateds is None else np.asarray(truncateds, dtype=bool)[..., None]
    next_v = values[1:]
    if final_values is not None:
        next_v = np.where(trunc, final_values, next_v)
    next_v = np.where(done, 0.0, next_v)
    delta = rewards + gamma * next_v - values[:-1]
    cut = done | trunc
    adv = np.zeros(delta.shape)
    last = np.zeros(delta.shape[1:])
    for t in range(T - 1, -1, -1):
        last = delta[t] + gamma * lam * np.where(cut[t], 0.0, last)
        adv[t] = last
    return AdvantageSet(adv, adv + values[:-1])


def normalize_advantages(adv, floor=1e-8):
    """Zero-mean, unit-std per column."""
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean(0)) / np.maximum(adv.std(0), floor)


# ---------------------------------------------------------------------------
# losses

def ppo_actor_loss_k(new_log_probs, old_log_probs, advantages_k, eps=0.2):
    """Negative clipped surrogate for one objective."""
    ratio = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    a = np.asarray(advantages_k, dtype=float)
    return float(-np.mean(np.minimum(ratio * a, np.clip(ratio, 1 - eps, 1 + eps) * a)))


def critic_loss(value_preds, targets):
    """Sum over heads of the mean squared error."""
    d = np.asarray(value_preds, dtype=float) - np.asarray(targets, dtype=float)
    return float((d * d).mean(0).sum())


def actor_gradients(actor: MLPParams, obs, raw_actions, old_log_probs, adv, clip, entropy_coef):
    """Per-objective surrogate losses and gradients plus the entropy-bonus gradient.

    ``adv`` is (n, K), already normalised. Returns a dict with ``losses``
    (K,), ``grads`` (K, P), ``entropy_grad`` (P,), ``entropy`` and
    ``clip_fraction``.
    """
    out, cache = forward(actor, obs)
    mean, log_std = split_head(out)
    lp = log_prob(mean, log_std, raw_actions)
    ratio = np.exp(lp - old_log_probs)
    g_mean, g_std = log_prob_grads(mean, log_std, raw_actions)
    n = len(lp)
    lo, hi = 1.0 - clip, 1.0 + clip
    losses = np.zeros(adv.shape[1])
    grads = np.zeros((adv.shape[1], actor.flat.size))
    for k in range(adv.shape[1]):
        a = adv[:, k]
        unclipped = ratio * a
        clipped = np.clip(ratio, lo, hi) * a
        losses[k] = -np.mean(np.minimum(unclipped, clipped))
        d_lp = np.where(unclipped <= clipped, -a * ratio / n, 0.0)[:, None]
        grads[k] = backward(actor, cache, head_backward(out, d_lp * g_mean, d_lp * g_std))
    h = entropy(log_std)
    ent_grad = backward(actor, cache, head_backward(out, np.zeros_like(mean),
                                                    np.full_like(log_std, -entropy_coef / n)))
    return {"losses": losses, "grads": grads, "entropy_grad": ent_grad, "entropy": float(h.mean()),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip))}


def critic_gradient(critic: MLPParams, joint_obs, targets):
    out, cache = forward(critic, joint_obs)
    d = out - targets
    return float((d * d).mean(0).sum()), backward(critic, cache, 2.0 * d / len(d))


# ---------------------------------------------------------------------------
# gradient surgery

def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def pcgrad_project(grads, rng=None, orders=None):
    """Surgically modified copies of each objective gradient.

    For objective i the other objectives are visited in random order (or
    ``orders[i]``); whenever the working copy conflicts with the original
    g_j it is projected onto g_j's normal plane. Zero-norm g_j are skipped.
    """
    g = np.asarray(grads, dtype=float)
    sq = np.einsum("ij,ij->i", g, g)
    out = g.copy()
    for i in range(len(g)):
        if orders is not None:
            others = list(orders[i])
        else:
            others = [j for j in range(len(g)) if j != i]
            if rng is not None:
                others = [others[k] for k in rng.permutation(len(others))]
        for j in others:
            if sq[j] == 0.0:
                continue
            d = out[i] @ g[j]
            if d < 0.0:
                out[i] -= (d / sq[j]) * g[j]
    return out


def pcgrad_merge(grads, rng=None, orders=None):
    return pcgrad_project(grads, rng, orders).sum(0)


# ---------------------------------------------------------------------------
# policies

def policy_act(actor, obs, rng=None, deterministic=False):
    """Actions for a batch of observations; returns ``(clamped, raw, log_prob)``."""
    mean, log_std = split_head(forward(actor, obs)[0])
    if deterministic:
        return np.clip(mean, -1.0, 1.0), mean, log_prob(mean, log_std, mean)
    return sample_action(mean, log_std, rng)


def baseline_policy(kind, obs):
    """Hand-written strategies acting on observations (N, 8); column 1 is y / D."""
    obs = np.atleast_2d(obs)
    n = len(obs)
    if kind == "upstream_max":
        return np.tile([-1.0, 0.0], (n, 1))
    if kind == "wall_hug":
        s = 1.0 / math.sqrt(2.0)
        up = obs[:, 1] >= 0.5
        return np.stack([np.full(n, -s), np.where(up, s, -s)], axis=1)
    raise ValueError(f"unknown baseline {kind!r}; expected upstream_max or wall_hug")


def run_episode(env: SwarmEnv, policy, max_steps=None):
    """Roll one episode; returns ``(length-normalised reward triple, length, status)``."""
    obs = env.reset()
    total = np.zeros(K)
    limit = env.config.max_steps if max_steps is None else min(max_steps, env.config.max_steps)
    n = 0
    status = None
    while n < limit:
        obs, r, status, _ = env.step(policy(obs))
        total += r.mean(0)
        n += 1
        if status.ended:
            break
    return total / n, n, status


def evaluate(policy, n_episodes, env_config: EnvConfig | None = None, deterministic=True, seed=0,
             max_steps=None):
    """Per-episode normalised reward triples plus their mean and std.

    ``policy`` is a baseline name, an actor :class:`MLPParams`, or a callable
    mapping observations (N, 8) to actions.
    """
    env = SwarmEnv(env_config)
    rng = np.random.default_rng(seed)
    if isinstance(policy, str):
        kind = policy
        act = lambda obs: baseline_policy(kind, obs)  # noqa: E731
    elif isinstance(policy, MLPParams):
        actor = policy
        act = lambda obs: policy_act(actor, obs, rng, deterministic)[0]  # noqa: E731
    else:
        act = policy
    rows = []
    for _ in range(n_episodes):
        norm, n, status = run_episode(env, act, max_steps)
        rows.append((norm, n, status))
    scores = np.array([r[0] for r in rows])
    return {"episodes": rows, "scores": scores, "mean": scores.mean(0), "std": scores.std(0)}


# ---------------------------------------------------------------------------
# training

class Trainer:
    """Rollout collection, updates, logging and checkpointing for one run directory."""

    def __init__(self, env_config: EnvConfig, ppo: PPOConfig, run_dir, seed=0, snapshot_every=0,
                 config_dict=None, fresh_logs=True):
        self.env_config = env_config.validate()
        self.ppo = ppo.validate()
        self.run_dir = Path(run_dir)
        self.seed = seed
        self.snapshot_every = snapshot_every
        self.config_dict = config_dict or {}
        self.rng = np.random.default_rng(seed)
        self.actor = init_actor(self.rng)
        self.critic = init_critic(self.rng)
        self.opt_actor = Adam(self.actor.flat.size, ppo.lr)
        self.opt_critic = Adam(self.critic.flat.size, ppo.lr)
        self.venv = VectorEnv([env_config] * ppo.n_envs)
        self.obs = self.venv.reset()
        self.tracker = EpisodeTracker(ppo.n_envs)
        self.update = 0
        self.global_step = 0
        self.failed = False
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._logs_fresh = fresh_logs
        self._logs = None

    # -- logging ----------------------------------------------------------
    def _open_logs(self):
        if self._logs is None:
            append = not self._logs_fresh
            self._logs = {
                "rewards": CSVLog(self.run_dir / "rewards.csv", REWARD_COLUMNS, append),
                "episodes": CSVLog(self.run_dir / "episodes.csv", EPISODE_COLUMNS, append),
                "updates": CSVLog(self.run_dir / "update_stats.csv", UPDATE_COLUMNS, append),
            }
        return self._logs

    def close(self):
        for log in (self._logs or {}).values():
            log.close()
        self._logs = None

    # -- rollout ----------------------------------------------------------
    def collect(self):
        """Run ``rollout_length`` steps in every environment and return the buffer."""
        T, E = self.ppo.rollout_length, self.ppo.n_envs
        N = self.venv.n_agents
        logs = self._open_logs()
        buf = {
            "obs": np.zeros((T, E, N, 8)), "raw": np.zeros((T, E, N, 2)), "logp": np.zeros((T, E, N)),
            "rewards": np.zeros((T, E, N, K)), "joint": np.zeros((T, E, N * 8)),
            "dones": np.zeros((T, E), dtype=bool), "truncs": np.zeros((T, E), dtype=bool),
            "final_joint": np.zeros((T, E, N * 8)),
        }
        for t in range(T):
            obs = self.obs
            act, raw, lp = policy_act(self.actor, obs.reshape(E * N, 8), self.rng)
            buf["obs"][t] = obs
            buf["joint"][t] = obs.reshape(E, N * 8)
            buf["raw"][t] = raw.reshape(E, N, 2)
            buf["logp"][t] = lp.reshape(E, N)
            self.obs, rewards, statuses, infos = self.venv.step(act.reshape(E, N, 2))
            buf["rewards"][t] = rewards
            for e in range(E):
                st, info = statuses[e], infos[e]
                mean_r = rewards[e].mean(0)
                logs["rewards"].write((self.global_step, e, info["episode_id"], info["step_in_episode"],
                                       *mean_r, str(st)))
                self.tracker.add(e, mean_r)
                if st.ended:
                    buf["dones"][t, e] = st.done
                    buf["truncs"][t, e] = st.truncated
                    buf["final_joint"][t, e] = info["final_joint_observation"]
                    logs["episodes"].write(self.tracker.close(e, info["episode_id"], st, self.global_step))
                if self.snapshot_every and e == 0 and self.global_step % self.snapshot_every == 0:
                    self._snapshot()
                self.global_step += 1
        return buf

    def _snapshot(self):
        from .io import write_snapshot
        env = self.venv.envs[0]
        write_snapshot(env.state, env.swarm, env.grid, self.global_step, self.run_dir / "snapshots")

    # -- update -----------------------------------------------------------
    def advantages(self, buf):
        T, E = buf["dones"].shape
        values = np.zeros((T + 1, E, K))
        values[:T] = forward(self.critic, buf["joint"].reshape(T * E, -1))[0].reshape(T, E, K)
        values[T] = forward(self.critic, self.obs.reshape(E, -1))[0]
        final = np.zeros((T, E, K))
        if buf["truncs"].any():
            idx = np.nonzero(buf["truncs"])
            final[idx] = forward(self.critic, buf["final_joint"][idx])[0]
        adv = compute_gae(buf["rewards"], values[:, :, None, :], buf["dones"][..., None],
                          buf["truncs"][..., None], final[:, :, None, :], self.ppo.gamma, self.ppo.lam)
        return adv, values

    def train_update(self, buf):
        """Four epochs of minibatch PPO over one buffer; returns averaged statistics."""
        cfg = self.ppo
        adv, _ = self.advantages(buf)
        T, E, N = buf["logp"].shape
        S = T * E
        obs = buf["obs"].reshape(S, N, 8)
        raw = buf["raw"].reshape(S, N, 2)
        logp = buf["logp"].reshape(S, N)
        advs = adv.advantages.reshape(S, N, K)
        critic_targets = adv.targets.reshape(S, N, K).mean(1)
        joint = buf["joint"].reshape(S, -1)
        acc = {k: [] for k in ("losses", "value", "entropy", "clip", "cos")}
        conflicts = 0
        for _ in range(cfg.epochs):
            perm = self.rng.permutation(S)
            for start in range(0, S, cfg.minibatch_size):
                idx = perm[start:start + cfg.minibatch_size]
                a_n = normalize_advantages(advs[idx].reshape(-1, K), cfg.adv_std_floor)
                res = actor_gradients(self.actor, obs[idx].reshape(-1, 8), raw[idx].reshape(-1, 2),
                                      logp[idx].reshape(-1), a_n, cfg.clip, cfg.entropy_coef)
                g = res["grads"]
                if not (np.isfinite(g).all() and np.isfinite(res["entropy_grad"]).all()):
                    self.failed = True
                    raise NonFiniteGradient(f"non-finite actor gradient at update {self.update}")
                cos = [cosine(g[i], g[j]) for i, j in PAIRS]
                conflicts += sum(c < 0 for c in cos)
                merged = pcgrad_merge(g, self.rng) if cfg.pcgrad_enabled else g.sum(0)
                self.opt_actor.step(self.actor.flat, merged + res["entropy_grad"])
                v_loss, v_grad = critic_gradient(self.critic, joint[idx], critic_targets[idx])
                if not np.isfinite(v_grad).all():
                    self.failed = True
                    raise NonFiniteGradient(f"non-finite critic gradient at update {self.update}")
                self.opt_critic.step(self.critic.flat, v_grad)
                acc["losses"].append(res["losses"])
                acc["value"].append(v_loss)
                acc["entropy"].append(res["entropy"])
                acc["clip"].append(res["clip_fraction"])
                acc["cos"].append(cos)
        self.update += 1
        losses = np.mean(acc["losses"], axis=0)
        cos = np.mean(acc["cos"], axis=0)
        return {"update": self.update, "global_step": self.global_step,
                "loss_progress": losses[0], "loss_energy": losses[1], "loss_smooth": losses[2],
                "loss_value": float(np.mean(acc["value"])), "entropy": float(np.mean(acc["entropy"])),
                "clip_fraction": float(np.mean(acc["clip"])), "cos_progress_energy": cos[0],
                "cos_progress_smooth": cos[1], "cos_energy_smooth": cos[2], "n_conflicts": int(conflicts),
                "pcgrad": bool(cfg.pcgrad_enabled)}

    def step(self):
        buf = self.collect()
        stats = self.train_update(buf)
        logs = self._open_logs()
        logs["updates"].write(stats)
        for log in logs.values():
            log.flush()
        if self.ppo.checkpoint_every and self.update % self.ppo.checkpoint_every == 0:
            self.save(self.checkpoint_path(self.update))
        return stats

    def run(self, n_updates=None, callback=None):
        """Train until ``n_updates`` (default: the configured total) have been performed."""
        target = self.ppo.n_updates if n_updates is None else n_updates
        try:
            while self.update < target:
                stats = self.step()
                if callback is not None:
                    callback(stats)
            self.save(self.checkpoint_path("final"))
        finally:
            self.close()
        return self

    # -- checkpoints -----------------------------------------------------
    def checkpoint_path(self, tag):
        name = f"ckpt_{tag:06d}" if isinstance(tag, int) else f"ckpt_{tag}"
        return self.run_dir / "checkpoints" / name

    def save(self, path):
        vectors = {"actor": self.actor.flat, "critic": self.critic.flat,
                   "actor_m": self.opt_actor.m, "actor_v": self.opt_actor.v,
                   "critic_m": self.opt_critic.m, "critic_v": self.opt_critic.v,
                   "episode_sums": self.tracker.sums.ravel()}
        envs = []
        for k, env in enumerate(self.venv.envs):
            arrays, scalars = env.get_state()
            for name, arr in arrays.items():
                vectors[f"env{k}/{name}"] = arr
            envs.append(dict(scalars, episode_id=self.venv.episode_ids[k]))
        header = {
            "format": "fluxswarm-checkpoint/1",
            "actor_sizes": list(self.actor.arch.sizes), "critic_sizes": list(self.critic.arch.sizes),
            "update": self.update, "global_step": self.global_step,
            "adam_t": [self.opt_actor.t, self.opt_critic.t], "lr": self.ppo.lr,
            "rng_state": self.rng.bit_generator.state, "seed": self.seed,
            "episode_lengths": self.tracker.lengths.tolist(), "envs": envs,
            "ppo": asdict(self.ppo), "config": self.config_dict, "failed": self.failed,
        }
        save_checkpoint(path, vectors, header)

    def restore(self, path):
        """Load parameters, optimiser moments, RNG and environment state from ``path``."""
        vectors, header = load_checkpoint(path)
        self.actor = MLPParams(Architecture(tuple(header["actor_sizes"])), vectors["actor"])
        self.critic = MLPParams(Architecture(tuple(header["critic_sizes"])), vectors["critic"])
        self.opt_actor.m[...] = vectors["actor_m"]
        self.opt_actor.v[...] = vectors["actor_v"]
        self.opt_critic.m[...] = vectors["critic_m"]
        self.opt_critic.v[...] = vectors["critic_v"]
        self.opt_actor.t, self.opt_critic.t = header["adam_t"]
        self.rng.bit_generator.state = header["rng_state"]
        self.update = header["update"]
        self.global_step = header["global_step"]
        self.tracker.sums[...] = vectors["episode_sums"].reshape(self.tracker.sums.shape)
        self.tracker.lengths[...] = header["episode_lengths"]
        for k, env in enumerate(self.venv.envs):
            scalars = dict(header["envs"][k])
            self.venv.episode_ids[k] = scalars.pop("episode_id")
            prefix = f"env{k}/"
            arrays = {name[len(prefix):]: v for name, v in vectors.items() if name.startswith(prefix)}
            env.set_state(arrays, scalars)
        self.obs = np.stack([env.observe() for env in self.venv.envs])
        self._logs_fresh = False
        return header


def load_actor(path):
    """Actor parameters and header from a checkpoint."""
    vectors, header = load_checkpoint(path)
    return MLPParams(Architecture(tuple(header.get("actor_sizes", ACTOR_SIZES))), vectors["actor"]), header


def load_critic(path):
    vectors, header = load_checkpoint(path)
    return MLPParams(Architecture(tuple(header.get("critic_sizes", CRITIC_SIZES))), vectors["critic"]), header
