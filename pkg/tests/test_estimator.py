import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fluxswarm.estimator import BaselinePolicy, SwarmPPO


def test_baseline_estimator_api():
    est = BaselinePolicy(kind="wall_hug")
    assert est.get_params() == {"kind": "wall_hug", "dx": 1e-4}
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 8)))
    X = np.zeros((3, 8))
    X[:, 1] = [0.1, 0.6, 0.9]
    act = est.fit().predict(X)
    assert act.shape == (3, 2) and act[0, 1] < 0 < act[1, 1]
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        BaselinePolicy(kind="spin").fit()


def test_swarm_ppo_fit_predict(tmp_path):
    est = SwarmPPO(dx=2e-4, n_envs=1, total_steps=16, checkpoint_every=0, run_dir=str(tmp_path / "r"))
    assert clone(est).get_params()["n_envs"] == 1
    est.fit()
    assert len(est.history_) == 1
    X = np.random.default_rng(0).standard_normal((5, 8))
    a = est.predict(X)
    assert a.shape == (5, 2) and np.all(np.abs(a) <= 1)
    np.testing.assert_array_equal(a, est.predict(X))
    assert est.sample(X, random_state=1).shape == (5, 2)
    loaded = SwarmPPO.from_checkpoint(tmp_path / "r" / "checkpoints" / "ckpt_final")
    np.testing.assert_array_equal(loaded.predict(X), a)
