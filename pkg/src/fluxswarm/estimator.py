"""scikit-learn style wrappers: policies map observation rows (n, 8) to actions (n, 2)."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .env import EnvConfig, FlowConfig
from .ppo import PPOConfig, Trainer, baseline_policy, evaluate, load_actor, policy_act

N_FEATURES = 8


class _PolicyMixin:
    def _check_obs(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} observation features, got {X.shape[1]}")
        return X

    def score(self, X=None, y=None, n_episodes=1, env_config=None):
        """Mean length-normalised progress reward over ``n_episodes`` episodes."""
        check_is_fitted(self)
        result = evaluate(lambda obs: self.predict(obs), n_episodes, env_config or self._env_config())
        return float(result["mean"][0])


class SwarmPPO(_PolicyMixin, BaseEstimator):
    """Multi-objective PPO swarm controller.

    ``fit`` trains in ``run_dir``; ``predict`` returns the clamped policy
    mean for each observation row.
    """

    def __init__(self, dx=1e-4, n_envs=4, total_steps=27000, pcgrad=True, lr=1e-3, gamma=0.95,
                 lam=0.95, clip=0.2, entropy_coef=0.01, epochs=4, rollout_length=16,
                 minibatch_size=4, checkpoint_every=50, run_dir="runs/estimator", random_state=0):
        self.dx = dx
        self.n_envs = n_envs
        self.total_steps = total_steps
        self.pcgrad = pcgrad
        self.lr = lr
        self.gamma = gamma
        self.lam = lam
        self.clip = clip
        self.entropy_coef = entropy_coef
        self.epochs = epochs
        self.rollout_length = rollout_length
        self.minibatch_size = minibatch_size
        self.checkpoint_every = checkpoint_every
        self.run_dir = run_dir
        self.random_state = random_state

    def _env_config(self):
        return EnvConfig(flow=FlowConfig(dx=self.dx))

    def _ppo_config(self):
        return PPOConfig(clip=self.clip, entropy_coef=self.entropy_coef, gamma=self.gamma, lam=self.lam,
                         lr=self.lr, epochs=self.epochs, rollout_length=self.rollout_length,
                         minibatch_size=self.minibatch_size, n_envs=self.n_envs,
                         total_steps=self.total_steps, pcgrad_enabled=self.pcgrad,
                         checkpoint_every=self.checkpoint_every)

    def fit(self, X=None, y=None):
        """Train from scratch; ``X`` and ``y`` are ignored (the data come from simulation)."""
        ppo = self._ppo_config()
        trainer = Trainer(self._env_config(), ppo, self.run_dir, seed=self.random_state,
                          config_dict={"ppo": dataclasses.asdict(ppo)})
        history = []
        trainer.run(callback=history.append)
        self.actor_ = trainer.actor
        self.critic_ = trainer.critic
        self.history_ = history
        self.n_features_in_ = N_FEATURES
        return self

    @classmethod
    def from_checkpoint(cls, path, **params):
        actor, header = load_actor(path)
        est = cls(**params)
        est.actor_ = actor
        est.history_ = []
        est.n_features_in_ = N_FEATURES
        return est

    def predict(self, X):
        check_is_fitted(self, "actor_")
        return policy_act(self.actor_, self._check_obs(X), deterministic=True)[0]

    def sample(self, X, random_state=None):
        """Stochastic actions drawn from the policy."""
        check_is_fitted(self, "actor_")
        return policy_act(self.actor_, self._check_obs(X), np.random.default_rng(random_state))[0]


class BaselinePolicy(_PolicyMixin, BaseEstimator):
    """Fixed strategy: ``upstream_max`` or ``wall_hug``."""

    def __init__(self, kind="upstream_max", dx=1e-4):
        self.kind = kind
        self.dx = dx

    def _env_config(self):
        return EnvConfig(flow=FlowConfig(dx=self.dx))

    def fit(self, X=None, y=None):
        baseline_policy(self.kind, np.zeros((1, N_FEATURES)))
        self.n_features_in_ = N_FEATURES
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        return baseline_policy(self.kind, self._check_obs(X))
