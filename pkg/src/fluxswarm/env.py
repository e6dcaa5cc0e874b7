"""Multi-agent, multi-objective swarm environment on top of the flow solver."""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FieldBlowup, ValidationError
from .flow import (FluidProps, FlowSolver, FlowState, GridSpec, InflowWaveform, StaggeredVelocityField,
                   apply_boundary_conditions, diffusion_number, project, sample_pressure)
from .poisson import PressureSolver
from .swarm import (ForceBreakdown, SwarmConfig, SwarmState, build_obstacle_mask, circle_points,
                    compute_forces, integrate, resolve_overlaps)

U_REF = 0.4
ZERO_NORM = 1e-12
OBJECTIVES = ("progress", "energy", "smooth")


class Status(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"
    TRUNCATED = "truncated"

    @property
    def terminal(self):
        return self is not Status.RUNNING


@dataclass(frozen=True)
class EpisodeStatus:
    status: Status = Status.RUNNING
    cause: str | None = None

    @property
    def done(self):
        """True termination (success or failure); no bootstrapping."""
        return self.status in (Status.SUCCESS, Status.FAILURE)

    @property
    def truncated(self):
        return self.status is Status.TRUNCATED

    @property
    def ended(self):
        return self.status.terminal

    def __str__(self):
        return self.status.value if self.cause is None else f"{self.status.value}:{self.cause}"


RUNNING = EpisodeStatus()


@dataclass(frozen=True)
class FlowConfig:
    length: float = 0.1
    width: float = 0.002
    dx: float = 1e-4
    rho: float = 1060.0
    mu: float = 3e-3
    phases: tuple = ((0.150, 0.400), (0.100, -0.015), (0.750, 0.008))
    ramp_time: float = 0.010
    courant_limit: float = 1.1
    strict_courant: bool = False
    blowup_speed: float = 10.0
    preconditioner: str = "cholesky"
    solver_tol: float = 1e-8

    def grid(self):
        return GridSpec.from_extent(self.length, self.width, self.dx)

    def fluid(self):
        return FluidProps(self.rho, self.mu)

    def waveform(self):
        return InflowWaveform(self.phases, self.ramp_time)

    def peak_speed(self):
        return max(abs(v) for _, v in self.phases)


@dataclass(frozen=True)
class EnvConfig:
    x_success: float = 0.020
    x_failure: float = 0.080
    dt: float = 5e-3
    substeps: int = 20
    t_max: float = 10.0
    seed: int = 0
    metric_margin: float = 0.020
    flow: FlowConfig = field(default_factory=FlowConfig)
    swarm: SwarmConfig = field(default_factory=SwarmConfig)

    @property
    def dt_sub(self):
        return self.dt / self.substeps

    @property
    def max_steps(self):
        return int(round(self.t_max / self.dt))

    def validate(self):
        """Raise :class:`ValidationError` naming the first violated invariant."""
        if not self.x_success < self.x_failure:
            raise ValidationError("x_success must be below x_failure")
        if not self.t_max > 0:
            raise ValidationError("t_max must be positive")
        if self.substeps < 1 or not self.dt > 0:
            raise ValidationError("dt and substeps must be positive")
        try:
            grid = self.flow.grid()
            fluid = self.flow.fluid()
            self.flow.waveform()
        except ValueError as exc:
            raise ValidationError(f"flow: {exc}") from None
        k = diffusion_number(fluid.nu, self.dt_sub, grid.dx)
        if k > 0.25:
            raise ValidationError(f"diffusion number {k:.4f} exceeds 0.25")
        cfl = self.flow.peak_speed() * self.dt_sub / grid.dx
        if cfl > self.flow.courant_limit:
            raise ValidationError(f"inflow Courant number {cfl:.3f} exceeds {self.flow.courant_limit}")
        try:
            self.swarm.check_fits(grid.length, grid.width)
        except ValueError as exc:
            raise ValidationError(f"swarm: {exc}") from None
        if not (0 < self.x_success < grid.length and 0 < self.x_failure < grid.length):
            raise ValidationError("success/failure lines must lie inside the channel")
        return self


# ---------------------------------------------------------------------------
# rewards

def reward_progress(x_t, dx_up, x_success=0.020, x_failure=0.080):
    """Per-agent progress reward; ``dx_up`` is upstream displacement (x_prev - x_t)."""
    x_t = np.asarray(x_t, dtype=float)
    frac = np.asarray(dx_up, dtype=float) / (x_failure - x_success)
    mid = np.where(frac >= 0, 100.0 * frac, 100.0 * np.tanh(3.0 * frac) / np.tanh(3.0)) - 0.01
    out = np.where(x_t < x_success, 10.0, np.where(x_t > x_failure, -10.0, mid))
    return float(out) if out.ndim == 0 else out


def reward_energy(force, dx, f_max):
    """Work done by the propulsion force relative to ``f_max * |dx|``."""
    force = np.asarray(force, dtype=float)
    dx = np.asarray(dx, dtype=float)
    dist = np.linalg.norm(dx, axis=-1)
    ok = dist >= ZERO_NORM
    out = np.where(ok, (force * dx).sum(-1) / (f_max * np.where(ok, dist, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def reward_smooth(a_t, a_prev):
    """Cosine similarity of consecutive actions, 0 when either is (near) zero."""
    a_t = np.asarray(a_t, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    na = np.linalg.norm(a_t, axis=-1)
    nb = np.linalg.norm(a_prev, axis=-1)
    ok = (na >= ZERO_NORM) & (nb >= ZERO_NORM)
    den = np.where(ok, na * nb, 1.0)
    out = np.where(ok, np.clip((a_t * a_prev).sum(-1) / den, -1.0, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def observe(swarm: SwarmState, flow_state: FlowState, grid: GridSpec, rho, u_ref=U_REF):
    """Normalised 8-feature observation for every agent, shape (N, 8).

    Features: x / L, y / D, vx / U, vy / U and pressure at angles 0, pi/2,
    pi, 3 pi/2 on the circumference divided by ``rho U**2``.
    """
    pts, _ = circle_points(swarm.pos, swarm.radius, 4)
    pk = sample_pressure(flow_state.p, pts, grid)
    return np.concatenate([
        swarm.pos / np.array([grid.length, grid.width]),
        swarm.vel / u_ref,
        pk / (rho * u_ref**2),
    ], axis=1)


class SwarmEnv:
    """One channel with one swarm; ``reset`` then ``step`` until a terminal status.

    ``step`` returns ``(obs (N, 8), rewards (N, 3), EpisodeStatus, info)``.
    """

    obs_dim = 8
    act_dim = 2

    def __init__(self, config: EnvConfig | None = None, record_trajectory=False):
        self.config = (config or EnvConfig()).validate()
        fc = self.config.flow
        self.grid = fc.grid()
        self.fluid = fc.fluid()
        self.flow = FlowSolver(self.grid, self.fluid, fc.waveform(), courant_limit=fc.courant_limit,
                               strict_courant=fc.strict_courant, blowup_speed=fc.blowup_speed,
                               solver=PressureSolver(fc.preconditioner, fc.solver_tol))
        self.n_agents = self.config.swarm.n_agents
        self.record_trajectory = record_trajectory
        self.trajectory = []
        self.status = RUNNING
        self.steps = 0
        self.rng = None
        self.swarm = None
        self.state = None
        self.mask = None
        self.last_forces = None

    @property
    def t(self):
        return self.state.t

    def reset(self, seed=None):
        cfg = self.config
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.swarm = SwarmState.from_config(cfg.swarm, self.grid.width)
        self.mask = build_obstacle_mask(self.swarm.pos, self.swarm.vel, self.swarm.radius, self.grid)
        state = self.flow.initial_state(0.0)
        vel = apply_boundary_conditions(state.vel, self.flow.waveform, 0.0, self.grid, self.mask)
        # the start-up projection pressure is an impulse, not a physical pressure
        vel, _ = project(vel, self.mask, self.grid, self.fluid.rho, cfg.dt_sub, self.flow.solver)
        self.state = FlowState(vel, np.zeros_like(state.p), 0.0)
        self.flow.max_courant_seen = 0.0
        self.status = RUNNING
        self.steps = 0
        self.last_forces = None
        self.trajectory = []
        return self.observe()

    def observe(self):
        return observe(self.swarm, self.state, self.grid, self.fluid.rho)

    def joint_observation(self):
        return self.observe().ravel()

    def step(self, actions):
        if self.status.ended:
            raise RuntimeError("episode has ended; call reset()")
        cfg = self.config
        actions = np.clip(np.asarray(actions, dtype=float).reshape(self.n_agents, 2), -1.0, 1.0)
        pos0 = self.swarm.pos.copy()
        blowup = None
        parts = []
        for _ in range(cfg.substeps):
            forces = compute_forces(self.state, self.swarm, actions, cfg.swarm, self.fluid, self.grid)
            parts.append(forces)
            pos, vel = integrate(self.swarm.pos, self.swarm.vel, forces.total(), self.swarm.mass, cfg.dt_sub)
            pos, vel = resolve_overlaps(pos, vel, self.swarm.radius, self.grid.length, self.grid.width)
            self.swarm.pos, self.swarm.vel = pos, vel
            self.mask = build_obstacle_mask(pos, vel, self.swarm.radius, self.grid)
            try:
                self.state = self.flow.step(self.state, self.mask, cfg.dt_sub)
            except FieldBlowup as exc:
                blowup = str(exc)
                break
        forces = ForceBreakdown.mean(parts)
        self.steps += 1
        disp = self.swarm.pos - pos0
        x = self.swarm.pos[:, 0]
        rewards = np.stack([
            reward_progress(x, -disp[:, 0], cfg.x_success, cfg.x_failure),
            reward_energy(forces.internal, disp, cfg.swarm.f_max),
            reward_smooth(actions, self.swarm.prev_action),
        ], axis=1)
        self.status = self._evaluate_status(x, blowup)
        self.swarm.prev_action = actions.copy()
        self.last_forces = forces
        if self.record_trajectory:
            self._record(actions, forces)
        info = {"t": self.state.t, "step": self.steps, "forces": forces,
                "max_courant": self.flow.max_courant_seen, "mean_x": float(x.mean())}
        if blowup is not None:
            info["blowup"] = blowup
        return self.observe(), rewards, self.status, info

    def get_state(self):
        """Dynamic state as ``(arrays, scalars)``, enough to resume bit-identically."""
        arrays = {"u": self.state.vel.u, "v": self.state.vel.v, "p": self.state.p,
                  "pos": self.swarm.pos, "vel": self.swarm.vel, "prev_action": self.swarm.prev_action}
        scalars = {"t": self.state.t, "steps": self.steps, "status": self.status.status.value,
                   "cause": self.status.cause, "max_courant": self.flow.max_courant_seen}
        return arrays, scalars

    def set_state(self, arrays, scalars):
        if self.swarm is None:
            self.reset()
        n = self.n_agents
        self.swarm.pos = np.array(arrays["pos"], dtype=float).reshape(n, 2)
        self.swarm.vel = np.array(arrays["vel"], dtype=float).reshape(n, 2)
        self.swarm.prev_action = np.array(arrays["prev_action"], dtype=float).reshape(n, 2)
        nx, ny = self.grid.nx, self.grid.ny
        vel = StaggeredVelocityField(np.array(arrays["u"], dtype=float).reshape(nx + 1, ny),
                                     np.array(arrays["v"], dtype=float).reshape(nx, ny + 1))
        self.state = FlowState(vel, np.array(arrays["p"], dtype=float).reshape(nx, ny), float(scalars["t"]))
        self.mask = build_obstacle_mask(self.swarm.pos, self.swarm.vel, self.swarm.radius, self.grid)
        self.steps = int(scalars["steps"])
        self.status = EpisodeStatus(Status(scalars["status"]), scalars.get("cause"))
        self.flow.max_courant_seen = float(scalars.get("max_courant", 0.0))

    def _evaluate_status(self, x, blowup):
        cfg = self.config
        if (x >= cfg.x_failure).any():
            return EpisodeStatus(Status.FAILURE)
        if x.mean() <= cfg.x_success:
            return EpisodeStatus(Status.SUCCESS)
        if blowup is not None:
            return EpisodeStatus(Status.TRUNCATED, "cfd_divergence")
        if self.steps >= cfg.max_steps:
            return EpisodeStatus(Status.TRUNCATED, "timeout")
        return RUNNING

    def _record(self, actions, forces: ForceBreakdown):
        for i in range(self.n_agents):
            self.trajectory.append((
                self.steps, self.state.t, i, *self.swarm.pos[i], *self.swarm.vel[i], *actions[i],
                *forces.hydro[i], *forces.drag[i]))


def worker_count():
    """Worker cap from ``FLUXSWARM_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FLUXSWARM_THREADS", "1")))
    except ValueError:
        return 1


class VectorEnv:
    """Steps several independent environments in lock-step, auto-resetting ended ones.

    Results are gathered in environment order. When an episode ends, the
    returned observation is the first observation of the next episode and
    ``infos[k]`` carries ``final_observation``, ``final_joint_observation``
    and ``final_status``.
    """

    def __init__(self, configs, record_trajectory=False):
        configs = list(configs)
        self.envs = [SwarmEnv(c, record_trajectory=record_trajectory) for c in configs]
        self.n_envs = len(self.envs)
        self.episode_ids = [0] * self.n_envs
        self.workers = min(worker_count(), self.n_envs)

    @property
    def n_agents(self):
        return self.envs[0].n_agents

    def reset(self):
        self.episode_ids = [0] * self.n_envs
        return np.stack([env.reset() for env in self.envs])

    def _map(self, fn, items):
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def step(self, actions):
        actions = np.asarray(actions, dtype=float)
        results = self._map(lambda k: self.envs[k].step(actions[k]), range(self.n_envs))
        obs, rewards, statuses, infos = [], [], [], []
        for k, (o, r, st, info) in enumerate(results):
            info = dict(info, episode_id=self.episode_ids[k], step_in_episode=self.envs[k].steps)
            if st.ended:
                info["final_observation"] = o
                info["final_joint_observation"] = o.ravel()
                info["final_status"] = st
                self.episode_ids[k] += 1
                o = self.envs[k].reset()
            obs.append(o)
            rewards.append(r)
            statuses.append(st)
            infos.append(info)
        return np.stack(obs), np.stack(rewards), statuses, infos
