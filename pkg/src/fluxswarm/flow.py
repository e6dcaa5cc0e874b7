"""Incompressible channel flow on a staggered (MAC) grid.

Layout: ``u`` lives on x-faces with shape (nx+1, ny), ``v`` on y-faces
with shape (nx, ny+1) and ``p`` at cell centres with shape (nx, ny). The
first index runs along the channel (x), the second across it (y). The
left column of x-faces is the inflow, the right column the outlet, and
the y-faces j = 0 and j = ny are the no-slip walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .exceptions import CourantViolation, FieldBlowup, StabilityViolation
from .poisson import PressureSolver

DIFFUSION_LIMIT = 0.25
BLOWUP_SPEED = 10.0


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4x4 cells, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError("dx must be positive")

    @classmethod
    def from_extent(cls, length, width, dx):
        nx = int(round(length / dx))
        ny = int(round(width / dx))
        if not (math.isclose(nx * dx, length, rel_tol=1e-9) and math.isclose(ny * dx, width, rel_tol=1e-9)):
            raise ValueError(f"extent {length} x {width} is not a multiple of dx={dx}")
        return cls(nx, ny, dx)

    @property
    def dy(self):
        return self.dx

    @property
    def length(self):
        return self.nx * self.dx

    @property
    def width(self):
        return self.ny * self.dx

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dx
        return x, y


@dataclass(frozen=True)
class FluidProps:
    rho: float = 1060.0
    mu: float = 3e-3

    def __post_init__(self):
        if not (self.rho > 0 and self.mu > 0):
            raise ValueError("density and viscosity must be positive")

    @property
    def nu(self):
        return self.mu / self.rho


@dataclass(frozen=True)
class InflowWaveform:
    """Piecewise-constant plateaus joined by linear ramps centred on each switch.

    ``phases`` is a sequence of ``(duration, plateau_velocity)``. The cycle
    wraps, so a ramp is also centred on t = 0 between the last and first
    plateau.
    """

    phases: tuple = ((0.150, 0.400), (0.100, -0.015), (0.750, 0.008))
    ramp_time: float = 0.010

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple((float(d), float(v)) for d, v in self.phases))
        if not self.phases:
            raise ValueError("waveform needs at least one phase")
        durations = [d for d, _ in self.phases]
        if min(durations) <= 0:
            raise ValueError("phase durations must be positive")
        if not (0 <= self.ramp_time < min(durations) / 2):
            raise ValueError("ramp_time must be below half the shortest phase")

    @property
    def period(self):
        return sum(d for d, _ in self.phases)

    @classmethod
    def constant(cls, velocity, period=1.0):
        return cls(phases=((period, velocity),), ramp_time=0.0)

    def __call__(self, t):
        return waveform_velocity(self, t)


def waveform_velocity(waveform: InflowWaveform, t: float) -> float:
    """Centreline inflow velocity at time ``t`` (m/s)."""
    period = waveform.period
    t = math.fmod(t, period)
    if t < 0:
        t += period
    phases = waveform.phases
    half = waveform.ramp_time / 2
    start = 0.0
    n = len(phases)
    for k, (dur, vel) in enumerate(phases):
        end = start + dur
        if t < end or k == n - 1:
            break
        start = end
    if half > 0 and n > 1:
        prev_vel = phases[k - 1][1]
        next_vel = phases[(k + 1) % n][1]
        if t < start + half:
            # ramp centred on the switch at `start` (wraps to the cycle end for k = 0)
            return prev_vel + (vel - prev_vel) * (t - (start - half)) / waveform.ramp_time
        if t > end - half:
            return vel + (next_vel - vel) * (t - (end - half)) / waveform.ramp_time
    return vel


def parabolic_profile(y, peak, width):
    """Developed channel profile ``peak * 4 y (D - y) / D**2``."""
    y = np.asarray(y, dtype=float)
    return peak * 4.0 * y * (width - y) / width**2


@dataclass
class StaggeredVelocityField:
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec):
        return cls(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    def copy(self):
        return StaggeredVelocityField(self.u.copy(), self.v.copy())

    def max_speed(self):
        return max(np.abs(self.u).max(), np.abs(self.v).max())

    def is_finite(self):
        return bool(np.isfinite(self.u).all() and np.isfinite(self.v).all())


@dataclass
class ObstacleMask:
    solid: np.ndarray
    solid_velocity: np.ndarray
    owner: np.ndarray | None = None

    @classmethod
    def empty(cls, grid: GridSpec):
        return cls(np.zeros((grid.nx, grid.ny), dtype=bool),
                   np.zeros((grid.nx, grid.ny, 2)),
                   np.full((grid.nx, grid.ny), -1, dtype=int))

    @property
    def any(self):
        return bool(self.solid.any())


@dataclass
class FlowState:
    vel: StaggeredVelocityField
    p: np.ndarray
    t: float = 0.0

    def copy(self):
        return FlowState(self.vel.copy(), self.p.copy(), self.t)


# ---------------------------------------------------------------------------
# interpolation

@njit(cache=True)
def _bilinear_kernel(arr, x0, y0, h, xs, ys, out):
    n0, n1 = arr.shape
    for k in range(xs.size):
        fx = min(max((xs[k] - x0) / h, 0.0), n0 - 1.0)
        fy = min(max((ys[k] - y0) / h, 0.0), n1 - 1.0)
        i0 = min(int(fx), n0 - 2)
        j0 = min(int(fy), n1 - 2)
        tx = fx - i0
        ty = fy - j0
        a00 = arr[i0, j0]
        a01 = arr[i0, j0 + 1]
        lo = a00 + tx * (arr[i0 + 1, j0] - a00)
        hi = a01 + tx * (arr[i0 + 1, j0 + 1] - a01)
        out[k] = lo + ty * (hi - lo)


def _bilinear(arr, x0, y0, h, xs, ys):
    """Bilinear sample of ``arr`` whose node (i, j) sits at (x0 + i h, y0 + j h).

    Points outside the node range are clamped onto it.
    """
    xs, ys = np.broadcast_arrays(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    out = np.empty(xs.shape)
    _bilinear_kernel(np.ascontiguousarray(arr, dtype=float), float(x0), float(y0), float(h),
                     np.ascontiguousarray(xs).ravel(), np.ascontiguousarray(ys).ravel(), out.reshape(-1))
    return out


def _padded_u(u):
    # no-slip ghosts mirror u across the walls
    nxp1, ny = u.shape
    up = np.empty((nxp1, ny + 2))
    up[:, 1:-1] = u
    up[:, 0] = -u[:, 0]
    up[:, -1] = -u[:, -1]
    return up


def _padded_v(v):
    # inflow: no tangential velocity; outlet: zero gradient
    nx, nyp1 = v.shape
    vp = np.empty((nx + 2, nyp1))
    vp[1:-1] = v
    vp[0] = -v[0]
    vp[-1] = v[-1]
    return vp


def sample_pressure(p, pos, grid: GridSpec):
    """Bilinear pressure at ``pos`` (array (..., 2), metres)."""
    pos = np.asarray(pos, dtype=float)
    h = grid.dx
    return _bilinear(p, h / 2, h / 2, h, pos[..., 0], pos[..., 1])


def sample_velocity(vel: StaggeredVelocityField, pos, grid: GridSpec):
    """Bilinear velocity at ``pos``; returns an array (..., 2)."""
    pos = np.asarray(pos, dtype=float)
    h = grid.dx
    x = np.clip(pos[..., 0], 0.0, grid.length)
    y = np.clip(pos[..., 1], 0.0, grid.width)
    us = _bilinear(_padded_u(vel.u), 0.0, -h / 2, h, x, y)
    vs = _bilinear(_padded_v(vel.v), -h / 2, 0.0, h, x, y)
    return np.stack([us, vs], axis=-1)


# ---------------------------------------------------------------------------
# operators

def divergence(vel: StaggeredVelocityField, grid: GridSpec):
    """Cell-centred divergence (1/s)."""
    return (np.diff(vel.u, axis=0) + np.diff(vel.v, axis=1)) / grid.dx


def diffusion_number(nu, dt, dx):
    return nu * dt / dx**2


def diffuse(vel: StaggeredVelocityField, nu, dt, grid: GridSpec):
    """One explicit viscous update ``u += nu * dt * Lap(u)``.

    The inflow faces and the wall faces of ``v`` are boundary values and are
    left untouched; no-slip enters through mirrored ghost values.
    """
    k = diffusion_number(nu, dt, grid.dx)
    if k > DIFFUSION_LIMIT:
        raise StabilityViolation(f"diffusion number {k:.4f} exceeds {DIFFUSION_LIMIT}")
    u, v = vel.u, vel.v
    up = _padded_u(u)
    lap_u = up[:, 2:] + up[:, :-2] - 2.0 * u
    right = np.empty_like(u[1:])
    right[:-1] = u[2:]
    right[-1] = u[-1]  # outlet zero gradient
    lap_u[1:] += right + u[:-1] - 2.0 * u[1:]
    lap_u[0] = 0.0
    vp = _padded_v(v)
    lap_v = vp[2:] + vp[:-2] - 2.0 * v
    lap_v[:, 1:-1] += v[:, 2:] + v[:, :-2] - 2.0 * v[:, 1:-1]
    lap_v[:, 0] = 0.0
    lap_v[:, -1] = 0.0
    return StaggeredVelocityField(u + k * lap_u, v + k * lap_v)


def _face_points(grid: GridSpec):
    h = grid.dx
    ux = np.arange(grid.nx + 1) * h
    uy = (np.arange(grid.ny) + 0.5) * h
    vx = (np.arange(grid.nx) + 0.5) * h
    vy = np.arange(grid.ny + 1) * h
    return np.meshgrid(ux, uy, indexing="ij"), np.meshgrid(vx, vy, indexing="ij")


def advect_semi_lagrangian(field, vel: StaggeredVelocityField, dt, grid: GridSpec):
    """Semi-Lagrangian transport of ``field`` by ``vel`` over ``dt``.

    ``field`` is either a cell-centred scalar array (nx, ny) or a
    :class:`StaggeredVelocityField` (self-advection when it is ``vel``).
    Each sample point is traced back one explicit Euler step, clamped to the
    domain, and the value is interpolated bilinearly.
    """
    h = grid.dx

    def backtrace(xs, ys):
        w = sample_velocity(vel, np.stack([xs, ys], axis=-1), grid)
        bx = np.clip(xs - dt * w[..., 0], 0.0, grid.length)
        by = np.clip(ys - dt * w[..., 1], 0.0, grid.width)
        return bx, by

    if isinstance(field, StaggeredVelocityField):
        (uxs, uys), (vxs, vys) = _face_points(grid)
        bx, by = backtrace(uxs, uys)
        u_new = _bilinear(_padded_u(field.u), 0.0, -h / 2, h, bx, by)
        bx, by = backtrace(vxs, vys)
        v_new = _bilinear(_padded_v(field.v), -h / 2, 0.0, h, bx, by)
        return StaggeredVelocityField(u_new, v_new)

    q = np.asarray(field, dtype=float)
    xc, yc = grid.cell_centers()
    xs, ys = np.meshgrid(xc, yc, indexing="ij")
    bx, by = backtrace(xs, ys)
    return _bilinear(q, h / 2, h / 2, h, bx, by)


def apply_domain_bcs(vel: StaggeredVelocityField, waveform: InflowWaveform, t, grid: GridSpec):
    """Inflow profile, outlet zero gradient and wall-normal no-penetration (in place)."""
    _, yc = grid.cell_centers()
    vel.u[0] = parabolic_profile(yc, waveform_velocity(waveform, t), grid.width)
    vel.u[-1] = vel.u[-2]
    vel.v[:, 0] = 0.0
    vel.v[:, -1] = 0.0
    return vel


def apply_obstacle_forcing(vel: StaggeredVelocityField, mask: ObstacleMask):
    """Direct forcing: every face of a solid cell takes the solid velocity (in place).

    A face shared by two solid cells takes the mean of both cell velocities.
    """
    if mask is None or not mask.any:
        return vel
    s = mask.solid.astype(float)
    sv = mask.solid_velocity
    count = s[:-1] + s[1:]
    total = s[:-1] * sv[:-1, :, 0] + s[1:] * sv[1:, :, 0]
    hit = count > 0
    vel.u[1:-1][hit] = total[hit] / count[hit]
    count = s[:, :-1] + s[:, 1:]
    total = s[:, :-1] * sv[:, :-1, 1] + s[:, 1:] * sv[:, 1:, 1]
    hit = count > 0
    vel.v[:, 1:-1][hit] = total[hit] / count[hit]
    return vel


def apply_boundary_conditions(vel, waveform, t, grid, mask=None):
    """Domain boundary conditions followed by obstacle direct forcing."""
    apply_domain_bcs(vel, waveform, t, grid)
    apply_obstacle_forcing(vel, mask)
    return vel


def connected_fluid(solid: np.ndarray) -> np.ndarray:
    """Fluid cells connected (4-neighbour) to the outlet column.

    Pockets sealed off by obstacles have no pressure reference and are
    treated as solid by the projection.
    """
    fluid = ~solid
    if fluid[-1].all() and not solid.any():
        return fluid
    labels, _ = ndimage.label(fluid)
    outlet_labels = np.unique(labels[-1][labels[-1] > 0])
    return np.isin(labels, outlet_labels)


def extend_into_solid(p, fluid, passes=3):
    """Fill non-fluid cells with the mean of already-filled neighbours.

    Gives the bilinear pressure samples on an obstacle boundary sensible
    values instead of the zero placeholder held by solid rows.
    """
    p = np.where(fluid, p, 0.0)
    known = fluid.copy()
    for _ in range(passes):
        if known.all():
            break
        total = np.zeros_like(p)
        count = np.zeros_like(p)
        total[1:] += np.where(known[:-1], p[:-1], 0.0)
        count[1:] += known[:-1]
        total[:-1] += np.where(known[1:], p[1:], 0.0)
        count[:-1] += known[1:]
        total[:, 1:] += np.where(known[:, :-1], p[:, :-1], 0.0)
        count[:, 1:] += known[:, :-1]
        total[:, :-1] += np.where(known[:, 1:], p[:, 1:], 0.0)
        count[:, :-1] += known[:, 1:]
        grow = ~known & (count > 0)
        p[grow] = total[grow] / count[grow]
        known |= grow
    return p


_DEFAULT_SOLVER = None


def _default_solver():
    global _DEFAULT_SOLVER
    if _DEFAULT_SOLVER is None:
        _DEFAULT_SOLVER = PressureSolver()
    return _DEFAULT_SOLVER


def project(vel: StaggeredVelocityField, mask: ObstacleMask | None, grid: GridSpec, rho, dt,
            solver: PressureSolver | None = None):
    """Pressure projection; returns ``(divergence-free velocity, pressure)``.

    Solves ``Lap p = (rho/dt) div u`` over fluid cells and subtracts
    ``(dt/rho) grad p`` on open faces. Pressure inside solid cells is
    extrapolated from the surrounding fluid for later sampling.
    """
    solver = solver or _default_solver()
    solid = mask.solid if mask is not None else np.zeros((grid.nx, grid.ny), dtype=bool)
    fluid = connected_fluid(solid)
    h = grid.dx
    # scaled system: (-h^2 Lap) p = -(rho h^2 / dt) div u
    rhs = -(rho * h * h / dt) * divergence(vel, grid)
    p = solver.solve(fluid, rhs)
    faces = solver.faces_for(fluid)
    scale = dt / (rho * h)
    u = vel.u.copy()
    v = vel.v.copy()
    gx = np.zeros_like(u)
    gx[1:-1] = p[1:] - p[:-1]
    gx[-1] = -p[-1]
    u -= scale * np.where(faces.ux, gx, 0.0)
    gy = np.zeros_like(v)
    gy[:, 1:-1] = p[:, 1:] - p[:, :-1]
    v -= scale * np.where(faces.vy, gy, 0.0)
    return StaggeredVelocityField(u, v), extend_into_solid(p, fluid)


def courant_number(vel: StaggeredVelocityField, dt, dx):
    return vel.max_speed() * dt / dx


@dataclass
class FlowSolver:
    """Bundles grid, fluid and inflow settings with a cached pressure solver."""

    grid: GridSpec
    fluid: FluidProps = field(default_factory=FluidProps)
    waveform: InflowWaveform = field(default_factory=InflowWaveform)
    courant_limit: float = 1.1
    strict_courant: bool = False
    blowup_speed: float = BLOWUP_SPEED
    solver: PressureSolver = field(default_factory=PressureSolver)
    max_courant_seen: float = 0.0

    def initial_state(self, t=0.0):
        vel = StaggeredVelocityField.zeros(self.grid)
        _, yc = self.grid.cell_centers()
        vel.u[:] = parabolic_profile(yc, waveform_velocity(self.waveform, t), self.grid.width)[None, :]
        return FlowState(vel, np.zeros((self.grid.nx, self.grid.ny)), t)

    def step(self, state: FlowState, mask: ObstacleMask | None, dt, t=None):
        return step_fluid(state, mask, dt, t, self)


def step_fluid(state: FlowState, mask, dt_sub, t, flow: FlowSolver):
    """Advance the fluid by one substep.

    Order: boundary conditions, explicit diffusion, semi-Lagrangian
    advection, obstacle forcing (with the domain BCs re-imposed), projection.
    Raises :class:`FieldBlowup` on non-finite values or speeds above the
    blowup threshold.
    """
    grid = flow.grid
    t = state.t if t is None else t
    vel = apply_boundary_conditions(state.vel.copy(), flow.waveform, t, grid, mask)
    cfl = courant_number(vel, dt_sub, grid.dx)
    flow.max_courant_seen = max(flow.max_courant_seen, cfl)
    if flow.strict_courant and cfl > flow.courant_limit:
        raise CourantViolation(f"Courant number {cfl:.3f} exceeds {flow.courant_limit}")
    vel = diffuse(vel, flow.fluid.nu, dt_sub, grid)
    vel = advect_semi_lagrangian(vel, vel, dt_sub, grid)
    t_new = t + dt_sub
    apply_boundary_conditions(vel, flow.waveform, t_new, grid, mask)
    vel, p = project(vel, mask, grid, flow.fluid.rho, dt_sub, flow.solver)
    if not vel.is_finite() or not np.isfinite(p).all():
        raise FieldBlowup("non-finite velocity or pressure")
    speed = vel.max_speed()
    if speed > flow.blowup_speed:
        raise FieldBlowup(f"max speed {speed:.3g} m/s exceeds {flow.blowup_speed} m/s")
    return FlowState(vel, p, t_new)
