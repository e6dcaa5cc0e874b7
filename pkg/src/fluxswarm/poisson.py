"""Pressure Poisson solve on the cell-centred MAC grid.

The operator is the negative 5-point Laplacian (scaled by dx**2) restricted
to fluid cells. Faces that touch a solid cell, a wall or the inflow are
closed (homogeneous Neumann); the outlet face is open towards a ghost
pressure of zero (Dirichlet gauge). Solid cells keep identity rows so the
system stays symmetric positive definite.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.lapack import dpbtrf, dpbtrs

from .exceptions import SolverDivergence


class FaceOpenness:
    """Which faces couple neighbouring pressure unknowns.

    ``ux[i, j]`` is True when the x-face between cells (i-1, j) and (i, j)
    is open, for i = 0..nx (i = nx is the outlet face). ``vy[i, j]`` is the
    same for y-faces, j = 0..ny.
    """

    def __init__(self, fluid: np.ndarray):
        fluid = np.asarray(fluid, dtype=bool)
        nx, ny = fluid.shape
        self.fluid = fluid
        self.ux = np.zeros((nx + 1, ny), dtype=bool)
        self.ux[1:nx] = fluid[:-1] & fluid[1:]
        self.ux[nx] = fluid[nx - 1]
        self.vy = np.zeros((nx, ny + 1), dtype=bool)
        self.vy[:, 1:ny] = fluid[:, :-1] & fluid[:, 1:]

    @property
    def shape(self):
        return self.fluid.shape

    def diagonal(self) -> np.ndarray:
        diag = (self.ux[:-1].astype(float) + self.ux[1:]
                + self.vy[:, :-1] + self.vy[:, 1:])
        return np.where(self.fluid, diag, 1.0)

    def matvec(self, p: np.ndarray) -> np.ndarray:
        """Apply the scaled operator ``-dx**2 * Laplacian`` to ``p`` (nx, ny)."""
        p = np.where(self.fluid, p, 0.0)
        out = self.diagonal() * p
        out[:-1] -= self.ux[1:-1] * p[1:]
        out[1:] -= self.ux[1:-1] * p[:-1]
        out[:, :-1] -= self.vy[:, 1:-1] * p[:, 1:]
        out[:, 1:] -= self.vy[:, 1:-1] * p[:, :-1]
        return np.where(self.fluid, out, p)

    def banded_upper(self) -> np.ndarray:
        """LAPACK upper band storage with cell index k = i * ny + j."""
        nx, ny = self.shape
        n = nx * ny
        ab = np.zeros((ny + 1, n))
        ab[ny] = self.diagonal().ravel()
        # A[k, k+1]: y-neighbour inside the same column
        off_y = np.zeros((nx, ny))
        off_y[:, :-1] = -self.vy[:, 1:-1].astype(float)
        ab[ny - 1, 1:] = off_y.ravel()[:-1]
        # A[k, k+ny]: x-neighbour
        off_x = -self.ux[1:-1].astype(float).ravel()
        ab[0, ny:] = off_x
        return ab


class BandedCholesky:
    """Cholesky factor of the banded operator, used as PCG preconditioner."""

    def __init__(self, faces: FaceOpenness):
        self._shape = faces.shape
        factor, info = dpbtrf(faces.banded_upper(), lower=0)
        if info != 0:
            raise SolverDivergence(f"pressure operator is not positive definite (dpbtrf info={info})")
        self._factor = factor

    def __call__(self, r: np.ndarray) -> np.ndarray:
        z, info = dpbtrs(self._factor, r.ravel(), lower=0)
        if info != 0:
            raise SolverDivergence(f"banded triangular solve failed (info={info})")
        return z.reshape(self._shape)


class Jacobi:
    def __init__(self, faces: FaceOpenness):
        self._inv = 1.0 / faces.diagonal()

    def __call__(self, r):
        return self._inv * r


PRECONDITIONERS = {"cholesky": BandedCholesky, "jacobi": Jacobi}


def pcg(matvec, b, precond, tol=1e-8, maxiter=None, x0=None):
    """Preconditioned conjugate gradients on 2-D arrays.

    Returns ``(x, iterations, relative_residual)``. Raises
    :class:`SolverDivergence` if ``||b - A x|| <= tol * ||b||`` is not met
    within ``maxiter`` iterations.
    """
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if maxiter is None:
        maxiter = 10 * b.size
    r = b - matvec(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    if rel <= tol:
        return x, 0, rel
    z = precond(r)
    d = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, maxiter + 1):
        Ad = matvec(d)
        dAd = np.vdot(d, Ad)
        if not dAd > 0.0:
            raise SolverDivergence(f"PCG breakdown at iteration {it} (d'Ad={dAd:.3e})")
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, it, rel
        z = precond(r)
        rz_new = np.vdot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverDivergence(
        f"PCG did not reach relative residual {tol:g} in {maxiter} iterations (last {rel:.3e})")


class PressureSolver:
    """Solves ``-dx**2 Lap p = rhs`` on fluid cells, caching the preconditioner.

    The cache key is the fluid mask, so repeated solves with an unchanged
    obstacle layout reuse the factorisation.
    """

    def __init__(self, preconditioner="cholesky", tol=1e-8, maxiter_factor=10):
        if preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        self.preconditioner = preconditioner
        self.tol = tol
        self.maxiter_factor = maxiter_factor
        self._key = None
        self._faces = None
        self._precond = None
        self.last_iterations = 0
        self.last_residual = 0.0

    def faces_for(self, fluid: np.ndarray) -> FaceOpenness:
        key = (fluid.shape, np.packbits(fluid).tobytes())
        if key != self._key:
            self._faces = FaceOpenness(fluid)
            self._precond = PRECONDITIONERS[self.preconditioner](self._faces)
            self._key = key
        return self._faces

    def solve(self, fluid: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        faces = self.faces_for(fluid)
        rhs = np.where(fluid, rhs, 0.0)
        x, its, rel = pcg(faces.matvec, rhs, self._precond, tol=self.tol,
                          maxiter=self.maxiter_factor * rhs.size)
        self.last_iterations = its
        self.last_residual = rel
        return x
