import dataclasses

import numpy as np
import pytest

from fluxswarm.env import (EnvConfig, EpisodeStatus, FlowConfig, Status, SwarmEnv, VectorEnv, observe,
                           reward_energy, reward_progress, reward_smooth)
from fluxswarm.exceptions import ValidationError
from fluxswarm.flow import FlowState, GridSpec, StaggeredVelocityField
from fluxswarm.io import write_trajectory
from fluxswarm.logs import TRAJECTORY_COLUMNS, read_csv
from fluxswarm.swarm import SwarmConfig, SwarmState

F_MAX = 8.5e-7


@pytest.mark.parametrize("x, dx_up, expected", [
    (0.015, 0.0, 10.0),
    (0.085, 0.0, -10.0),
    (0.050, 0.0, -0.01),
    (0.050, 6e-4, 0.99),
    (0.050, -0.06, -100.01),
])
def test_reward_progress_examples(x, dx_up, expected):
    assert reward_progress(x, dx_up) == pytest.approx(expected, abs=1e-12)


def test_reward_progress_vectorised():
    got = reward_progress(np.array([0.015, 0.05]), np.array([0.0, 6e-4]))
    np.testing.assert_allclose(got, [10.0, 0.99])


def test_reward_energy_examples():
    d = np.array([3e-4, -4e-4])
    unit = d / np.linalg.norm(d)
    assert reward_energy(F_MAX * unit, d, F_MAX) == pytest.approx(1.0)
    assert reward_energy(F_MAX * np.array([4.0, 3.0]) / 5, d, F_MAX) == pytest.approx(0.0, abs=1e-15)
    assert reward_energy(-F_MAX * unit, d, F_MAX) == pytest.approx(-1.0)
    assert reward_energy(0.5 * F_MAX * unit, d, F_MAX) == pytest.approx(0.5)
    assert reward_energy(F_MAX * unit, np.zeros(2), F_MAX) == 0.0


def test_reward_smooth_examples():
    a = np.array([0.3, 0.4])
    assert reward_smooth(a, a) == pytest.approx(1.0)
    assert reward_smooth(-a, a) == pytest.approx(-1.0)
    assert reward_smooth(np.array([0.4, -0.3]), a) == pytest.approx(0.0, abs=1e-15)
    assert reward_smooth(np.zeros(2), a) == 0.0


def test_observe_examples():
    g = GridSpec(1000, 20, 1e-4)
    state = FlowState(StaggeredVelocityField.zeros(g), np.zeros((1000, 20)))
    swarm = SwarmState(np.array([[0.05, 1e-3], [0.025, 1e-3]]), np.array([[0.0, 0.0], [0.4, -0.4]]),
                       np.zeros((2, 2)), 2.5e-4, 1e-6)
    obs = observe(swarm, state, g, 1060.0)
    np.testing.assert_allclose(obs[0], [0.5, 0.5, 0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(obs[1, :4], [0.25, 0.5, 1.0, -1.0])


def test_config_validation():
    assert EnvConfig().max_steps == 2000
    assert EnvConfig().dt_sub == pytest.approx(2.5e-4)
    with pytest.raises(ValidationError):
        EnvConfig(x_success=0.09).validate()
    with pytest.raises(ValidationError):
        EnvConfig(flow=FlowConfig(dx=3e-4)).validate()
    with pytest.raises(ValidationError):
        EnvConfig(substeps=1).validate()  # diffusion / Courant bound on a 5 ms substep
    with pytest.raises(ValidationError):
        EnvConfig(swarm=SwarmConfig(rows=3)).validate()


def test_reset_lattice(coarse_config):
    env = SwarmEnv(coarse_config)
    obs = env.reset()
    assert obs.shape == (16, 8)
    x = env.swarm.pos[:, 0]
    np.testing.assert_allclose(np.unique(np.round(x * 1e4, 6)), np.arange(465, 540, 10))
    np.testing.assert_allclose(np.unique(np.round(env.swarm.pos[:, 1], 9)), [0.5e-3, 1.5e-3])
    assert x.mean() == pytest.approx(0.05)
    assert env.status.status is Status.RUNNING and env.t == 0.0
    np.testing.assert_array_equal(env.swarm.prev_action, 0.0)


def test_zero_action_systole_step(coarse_config):
    env = SwarmEnv(coarse_config)
    env.reset()
    x0 = env.swarm.pos[:, 0].copy()
    obs, r, status, info = env.step(np.zeros((16, 2)))
    assert np.all(env.swarm.pos[:, 0] > x0)
    assert np.all(r[:, 0] < 0)
    np.testing.assert_array_equal(r[:, 2], 0.0)
    assert info["t"] == pytest.approx(5e-3)
    assert np.isfinite(obs).all()


def test_episode_bounds_and_determinism(coarse_config):
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, (30, 16, 2))
    runs = []
    for _ in range(2):
        env = SwarmEnv(coarse_config)
        env.reset()
        rows = []
        for a in actions:
            _, r, status, _ = env.step(a)
            rows.append(r)
            if status.ended:
                break
        runs.append(np.array(rows))
    np.testing.assert_array_equal(runs[0], runs[1])
    r = runs[0]
    assert np.all(np.abs(r[..., 1]) <= 1 + 1e-12) and np.all(np.abs(r[..., 2]) <= 1 + 1e-12)
    prog = r[..., 0]
    assert np.all(np.isin(prog, [10.0, -10.0]) | ((prog >= -100.01) & (prog <= 100.0)))
    assert env.status.ended
    with pytest.raises(RuntimeError):
        env.step(actions[0])


def test_status_order(coarse_config):
    env = SwarmEnv(coarse_config)
    env.reset()
    x = np.full(16, 0.019)
    assert env._evaluate_status(x, None).status is Status.SUCCESS
    x[3] = 0.081
    assert env._evaluate_status(x, None).status is Status.FAILURE  # failure dominates
    assert str(env._evaluate_status(np.full(16, 0.05), "boom")) == "truncated:cfd_divergence"
    st = EpisodeStatus(Status.FAILURE)
    assert st.done and not st.truncated and st.ended


def test_timeout_truncation(coarse_config):
    env = SwarmEnv(dataclasses.replace(coarse_config, t_max=0.01))
    env.reset()
    env.step(np.zeros((16, 2)))
    _, _, status, _ = env.step(np.zeros((16, 2)))
    assert status.truncated and status.cause == "timeout"


def test_blowup_truncates(coarse_config):
    cfg = dataclasses.replace(coarse_config, flow=dataclasses.replace(coarse_config.flow, blowup_speed=0.05))
    env = SwarmEnv(cfg)
    env.reset()
    _, _, status, info = env.step(np.zeros((16, 2)))
    assert str(status) == "truncated:cfd_divergence" and "blowup" in info


def test_state_roundtrip(coarse_config):
    a = SwarmEnv(coarse_config)
    a.reset()
    a.step(np.full((16, 2), 0.3))
    arrays, scalars = a.get_state()
    b = SwarmEnv(coarse_config)
    b.set_state({k: v.copy() for k, v in arrays.items()}, scalars)
    act = np.full((16, 2), -0.5)
    ra = a.step(act)[1]
    rb = b.step(act)[1]
    np.testing.assert_array_equal(ra, rb)


def test_trajectory_export(coarse_config, tmp_path):
    env = SwarmEnv(coarse_config, record_trajectory=True)
    env.reset()
    env.step(np.zeros((16, 2)))
    write_trajectory(env.trajectory, tmp_path / "traj.csv")
    rows = read_csv(tmp_path / "traj.csv")
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS and len(rows) == 16


def test_vector_env_autoreset(coarse_config):
    short = dataclasses.replace(coarse_config, t_max=0.01)
    venv = VectorEnv([short, coarse_config])
    obs = venv.reset()
    assert obs.shape == (2, 16, 8)
    np.testing.assert_array_equal(obs[0], obs[1])
    acts = np.zeros((2, 16, 2))
    venv.step(acts)
    obs, rewards, statuses, infos = venv.step(acts)
    assert statuses[0].truncated and "final_observation" in infos[0]
    assert venv.envs[0].steps == 0 and venv.envs[1].steps == 2
    assert venv.episode_ids == [1, 0]
    np.testing.assert_array_equal(obs[0], venv.envs[0].observe())
