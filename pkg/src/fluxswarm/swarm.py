"""Rigid disk agents immersed in the channel flow.

Agent state is held as arrays over the swarm (positions ``(N, 2)`` and
so on) because every force law is applied to all members at once.
Fluid forces from the 2-D solver are per unit depth; :class:`SwarmConfig`
carries the out-of-plane depth that converts them to newtons before they
are combined with the propulsion force and the 3-D agent mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import GridSpec, ObstacleMask, sample_pressure, sample_velocity

CONTACT_SLOP = 0.05
ZERO_SPEED = 1e-12


def agent_mass(radius, rho_solid):
    """Mass of a solid sphere, ``4/3 pi r^3 rho``."""
    return 4.0 / 3.0 * math.pi * radius**3 * rho_solid


@dataclass(frozen=True)
class SwarmConfig:
    rows: int = 2
    cols: int = 8
    spacing: float = 1e-3
    radius: float = 2.5e-4
    rho_solid: float = 15120.0
    f_max: float = 8.5e-7
    center_x: float = 0.05
    depth: float | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice needs at least one row and column")
        if not (self.radius > 0 and self.rho_solid > 0 and self.f_max > 0 and self.spacing > 0):
            raise ValueError("radius, density, f_max and spacing must be positive")
        if self.depth is not None and not self.depth > 0:
            raise ValueError("depth must be positive")

    @property
    def n_agents(self):
        return self.rows * self.cols

    @property
    def mass(self):
        return agent_mass(self.radius, self.rho_solid)

    @property
    def force_depth(self):
        """Out-of-plane extent multiplying the per-depth fluid forces (m)."""
        return 2.0 * self.radius if self.depth is None else self.depth

    def lattice(self, width):
        """Initial centres, ordered row by row from the lower wall (id = row * cols + col)."""
        xs = self.center_x + (np.arange(self.cols) - (self.cols - 1) / 2) * self.spacing
        ys = width / 2 + (np.arange(self.rows) - (self.rows - 1) / 2) * self.spacing
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def check_fits(self, length, width):
        pos = self.lattice(width)
        r = self.radius
        if (pos[:, 1].min() - r < r or pos[:, 1].max() + r > width - r
                or pos[:, 0].min() - r < 0 or pos[:, 0].max() + r > length):
            raise ValueError("initial lattice does not fit inside the channel with wall clearance")
        if self.n_agents > 1:
            d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() < 2 * r:
                raise ValueError("initial lattice has overlapping agents")


@dataclass
class SwarmState:
    pos: np.ndarray
    vel: np.ndarray
    prev_action: np.ndarray
    radius: float
    mass: float

    @classmethod
    def from_config(cls, cfg: SwarmConfig, width):
        pos = cfg.lattice(width)
        n = len(pos)
        return cls(pos, np.zeros((n, 2)), np.zeros((n, 2)), cfg.radius, cfg.mass)

    @property
    def n(self):
        return len(self.pos)

    def copy(self):
        return SwarmState(self.pos.copy(), self.vel.copy(), self.prev_action.copy(),
                          self.radius, self.mass)

    def agent(self, i):
        return AgentState(i, tuple(self.pos[i]), tuple(self.vel[i]), self.radius, self.mass,
                          tuple(self.prev_action[i]))


@dataclass(frozen=True)
class AgentState:
    """Read-only view of one swarm member."""

    id: int
    pos: tuple
    vel: tuple
    radius: float
    mass: float
    prev_action: tuple = (0.0, 0.0)


@dataclass
class ForceBreakdown:
    """Per-agent force components, each ``(N, 2)``.

    ``hydro`` and ``drag`` are per unit depth (N/m); ``internal`` and
    ``contact`` are in newtons.
    """

    hydro: np.ndarray
    drag: np.ndarray
    internal: np.ndarray
    contact: np.ndarray
    depth: float = 1.0

    def total(self):
        return self.depth * (self.hydro + self.drag) + self.internal + self.contact

    @classmethod
    def mean(cls, parts):
        return cls(*(np.mean([getattr(f, name) for f in parts], axis=0)
                     for name in ("hydro", "drag", "internal", "contact")), depth=parts[0].depth)


def circle_points(pos, radius, n):
    """``n`` equispaced points on each agent's circumference, starting at angle 0."""
    theta = 2.0 * np.pi * np.arange(n) / n
    offs = radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return np.asarray(pos, dtype=float)[..., None, :] + offs, theta


def hydrodynamic_force(p, pos, radius, grid: GridSpec, n_samples=8):
    """Pressure force per unit depth from ``n_samples`` circumference samples.

    Each sample carries an arc length ``2 pi r / n``, so with 8 samples the
    weight is ``pi r / 4``.
    """
    pts, theta = circle_points(pos, radius, n_samples)
    pk = sample_pressure(p, pts, grid)
    w = 2.0 * np.pi * radius / n_samples
    return -w * np.stack([(pk * np.cos(theta)).sum(-1), (pk * np.sin(theta)).sum(-1)], axis=-1)


def drag_coefficient(re):
    """Piecewise sphere drag law (Stokes, Schiller-Naumann, Newton regimes)."""
    re = np.asarray(re, dtype=float)
    with np.errstate(divide="ignore"):
        stokes = 24.0 / re
    cd = np.where(re < 0.1, stokes, stokes * (1.0 + 0.15 * re**0.687))
    cd = np.where(re >= 1000.0, 0.44, cd)
    return float(cd) if cd.ndim == 0 else cd


def relative_velocity(vel_field, pos, agent_vel, radius, grid: GridSpec, n_samples=8):
    """Mean fluid velocity on the circumference minus the agent velocity."""
    pts, _ = circle_points(pos, radius, n_samples)
    fluid = sample_velocity(vel_field, pts, grid).mean(axis=-2)
    return fluid - np.asarray(agent_vel, dtype=float)


def drag_force(vel_field, pos, agent_vel, radius, fluid, grid: GridSpec):
    """Quadratic drag per unit depth, reference length ``2 r``."""
    v_rel = np.atleast_2d(relative_velocity(vel_field, pos, agent_vel, radius, grid))
    return drag_from_relative(v_rel, radius, fluid).reshape(np.shape(pos))


def drag_from_relative(v_rel, radius, fluid):
    v_rel = np.asarray(v_rel, dtype=float)
    speed = np.linalg.norm(v_rel, axis=-1)
    moving = speed >= ZERO_SPEED
    safe = np.where(moving, speed, 1.0)
    re = fluid.rho * safe * 2.0 * radius / fluid.mu
    cd = np.asarray(drag_coefficient(re))
    mag = 0.5 * fluid.rho * (2.0 * radius) * cd * safe**2
    out = (mag / safe)[..., None] * v_rel
    return np.where(moving[..., None], out, 0.0)


def internal_force(action, f_max):
    """Propulsion force: actions clamped to [-1, 1] per component, times ``f_max``."""
    return np.clip(np.asarray(action, dtype=float), -1.0, 1.0) * f_max


def contact_pairs(pos, radius, slop=CONTACT_SLOP):
    """Index pairs ``(i, j)``, i < j, with centre distance at most ``2 r + slop r``."""
    pos = np.asarray(pos, dtype=float)
    if len(pos) < 2:
        return []
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    i, j = np.nonzero(np.triu(d <= 2 * radius + slop * radius, k=1))
    return list(zip(i.tolist(), j.tolist()))


def contact_forces(pos, radius, internal, slop=CONTACT_SLOP):
    """Compressive transmission of neighbours' propulsion along contact normals.

    For each contacting pair the normal ``n_ij`` points from j to i; j's
    internal force contributes ``(F_j . n_ij) n_ij`` to i only when that
    projection is non-negative (pushing, never pulling).
    """
    pos = np.asarray(pos, dtype=float)
    internal = np.asarray(internal, dtype=float)
    out = np.zeros_like(pos)
    for i, j in contact_pairs(pos, radius, slop):
        d = pos[i] - pos[j]
        dist = np.linalg.norm(d)
        if dist == 0.0:
            continue
        n = d / dist
        push_i = internal[j] @ n
        if push_i >= 0.0:
            out[i] += push_i * n
        push_j = internal[i] @ -n
        if push_j >= 0.0:
            out[j] -= push_j * n
    return out


def contact_force(i, pos, radius, internal, slop=CONTACT_SLOP):
    return contact_forces(pos, radius, internal, slop)[i]


def resolve_overlaps(pos, vel, radius, length, width):
    """Separate interpenetrating agents and keep centres inside the walls.

    Penetration is split equally along the centre line and the pair's
    normal relative velocity is removed. Centres are then clamped to
    ``[r, L - r] x [r, D - r]`` with the wall-normal velocity made
    non-penetrating. Returns new ``(pos, vel)`` arrays.
    """
    pos = np.array(pos, dtype=float)
    vel = np.array(vel, dtype=float)
    n = len(pos)
    for i in range(n):
        for j in range(i + 1, n):
            d = pos[i] - pos[j]
            dist = math.hypot(d[0], d[1])
            overlap = 2.0 * radius - dist
            if overlap <= 0.0:
                continue
            nrm = d / dist if dist > 0 else np.array([0.0, 1.0])
            pos[i] += 0.5 * overlap * nrm
            pos[j] -= 0.5 * overlap * nrm
            closing = (vel[i] - vel[j]) @ nrm
            if closing < 0.0:
                vel[i] -= 0.5 * closing * nrm
                vel[j] += 0.5 * closing * nrm
    lo = np.array([radius, radius])
    hi = np.array([length - radius, width - radius])
    below = pos < lo
    above = pos > hi
    pos = np.clip(pos, lo, hi)
    vel = np.where(below, np.maximum(vel, 0.0), vel)
    vel = np.where(above, np.minimum(vel, 0.0), vel)
    return pos, vel


def integrate(pos, vel, force, mass, dt):
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    vel = np.asarray(vel, dtype=float) + np.asarray(force, dtype=float) / mass * dt
    pos = np.asarray(pos, dtype=float) + vel * dt
    return pos, vel


def build_obstacle_mask(pos, vel, radius, grid: GridSpec):
    """Cells whose centres lie inside any agent disk.

    Overlapping disks give the cell to the nearest centre. The inflow and
    outlet cell columns are never masked.
    """
    mask = ObstacleMask.empty(grid)
    pos = np.asarray(pos, dtype=float)
    vel = np.asarray(vel, dtype=float)
    if len(pos) == 0:
        return mask
    h = grid.dx
    best = np.full((grid.nx, grid.ny), np.inf)
    reach = int(math.ceil(radius / h)) + 1
    for k, (px, py) in enumerate(pos):
        ci = int(px // h)
        cj = int(py // h)
        i0, i1 = max(ci - reach, 1), min(ci + reach + 1, grid.nx - 1)
        j0, j1 = max(cj - reach, 0), min(cj + reach + 1, grid.ny)
        if i0 >= i1 or j0 >= j1:
            continue
        xc = (np.arange(i0, i1) + 0.5) * h
        yc = (np.arange(j0, j1) + 0.5) * h
        d2 = (xc[:, None] - px) ** 2 + (yc[None, :] - py) ** 2
        window = best[i0:i1, j0:j1]
        take = (d2 <= radius * radius) & (d2 < window)
        window[take] = d2[take]
        mask.owner[i0:i1, j0:j1][take] = k
    mask.solid = mask.owner >= 0
    mask.solid_velocity[mask.solid] = vel[mask.owner[mask.solid]]
    return mask


def compute_forces(flow_state, swarm: SwarmState, actions, cfg: SwarmConfig, fluid, grid) -> ForceBreakdown:
    """All four force components for every agent at the current fields."""
    internal = internal_force(actions, cfg.f_max)
    return ForceBreakdown(
        hydro=hydrodynamic_force(flow_state.p, swarm.pos, swarm.radius, grid),
        drag=drag_force(flow_state.vel, swarm.pos, swarm.vel, swarm.radius, fluid, grid),
        internal=internal,
        contact=contact_forces(swarm.pos, swarm.radius, internal),
        depth=cfg.force_depth,
    )
