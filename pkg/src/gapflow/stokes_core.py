"""Penalized staggered-grid Stokes solver.

Solves the discrete saddle-point problem

    -mu*Lap(u) + grad(p) = f + eta^{-1} chi_solid (u_target - u),
    div(u) = 0   on fluid cells,

with prescribed values on box-boundary faces. Velocities on solid faces
(particles and the exterior collar) are driven to their rigid/boundary
targets by the volume penalization; the momentum equation on a solid face,
eta^{-1}(u - u_t) = mu*Lap(u) - grad(p) + f, is satisfied by an outer
fixed-point loop that updates the solid-face values by the O(eta) slip and
re-solves the fluid unknowns. The loop contracts at rate ~ eta*mu/h^2, so
two or three rounds reach machine accuracy for any admissible eta.

The fluid solve is MINRES on the symmetric saddle system restricted to
fluid faces and active cells, preconditioned blockwise by the full-box
constant-coefficient velocity inverse (diagonalized by fast sine
transforms; DST-I across node-centered directions, DST-II across
cell-centered ones) and a scaled identity on the pressure. True residuals
(momentum, divergence) are checked after every Krylov stage and defect
rounds are added until the requested tolerance holds, so the reported
residuals are exact, not preconditioner-norm estimates.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, minres

from .geometry import Region
from .mac_grid import Field, MaskSet, StaggeredGrid, velocity_divergence

__all__ = ["PenalizedProblem", "SolveStats", "NonConvergenceError",
           "solve_stokes", "strain_energy_product", "collar_flux"]

try:  # fused stencil kernel; the numpy path below is the reference
    if os.environ.get("GAPFLOW_NO_NUMBA"):
        raise ImportError
    from numba import njit
    _HAS_NUMBA = True
except ImportError:  # pragma: no cover
    _HAS_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, stats=None):
        super().__init__(msg)
        self.stats = stats


@dataclass
class SolveStats:
    outer_iterations: int = 0          # total Krylov iterations
    penalty_rounds: int = 0
    defect_rounds: int = 0
    momentum_residual: float = np.inf  # relative to max |rhs|
    divergence_residual: float = np.inf
    wall_time: float = 0.0


@dataclass
class PenalizedProblem:
    """One Stokes solve: grid, masks, penalization, targets, forcing.

    u_target holds prescribed velocities on every non-fluid face (rigid
    motion inside a particle, boundary data in the exterior collar, zero
    elsewhere); entries on fluid faces are ignored. f is an optional face
    forcing (fu, fv). Tangential wall values for the box boundary default
    to zero and are rarely needed when a collar is present.
    """

    grid: StaggeredGrid
    masks: MaskSet
    mu: float = 1.0
    eta: Optional[float] = None
    u_target: Optional[Field] = None
    f: Optional[tuple] = None
    wall_u: tuple = (0.0, 0.0)   # tangential u at bottom/top walls
    wall_v: tuple = (0.0, 0.0)   # tangential v at left/right walls

    def __post_init__(self):
        h = self.grid.h
        eta_cap = 1e-6 * h * h / self.mu
        if self.eta is None:
            # keep penetration below discretization error on any grid
            self.eta = min(1e-8, eta_cap)
        elif self.eta > eta_cap * (1 + 1e-12):
            raise ValueError(f"eta={self.eta:g} exceeds 1e-6*h^2/mu={eta_cap:g}")
        if self.u_target is None:
            self.u_target = Field.zeros(self.grid)
        flux, per = collar_flux(self.grid, self.masks, self.u_target)
        scale = max(1.0, np.abs(self.u_target.u).max(), np.abs(self.u_target.v).max())
        if per > 0 and abs(flux) > 1e-10 * per * scale:
            raise ValueError(
                f"prescribed boundary data violates discrete compatibility: "
                f"net flux {flux:.3e} over perimeter {per:.3g}")


def collar_flux(grid: StaggeredGrid, masks: MaskSet, u_target: Field):
    """Net discrete flux of the prescribed-face values into the fluid region,
    and the interface perimeter. Must vanish for solvability."""
    up = np.where(masks.fluid_u, 0.0, u_target.u)
    vp = np.where(masks.fluid_v, 0.0, u_target.v)
    div = velocity_divergence(grid, up, vp)
    flux = float(np.sum(div[masks.active_c]) * grid.h**2)
    # prescribed faces adjacent to an active cell
    nfaces = 0
    fu, fv, ac = masks.fluid_u, masks.fluid_v, masks.active_c
    nfaces += np.count_nonzero(~fu[:-1, :] & ac) + np.count_nonzero(~fu[1:, :] & ac)
    nfaces += np.count_nonzero(~fv[:, :-1] & ac) + np.count_nonzero(~fv[:, 1:] & ac)
    return flux, nfaces * grid.h


# ---------------------------------------------------------------------------
# fused kernels
# ---------------------------------------------------------------------------

@njit(fastmath=True, cache=True)
def _saddle_kernel(U, V, P, FU, FV, AC, GDU, GDV, h, mu, OU, OV, OP):  # pragma: no cover
    # serial on purpose: a parallel region here thrashes against the FFT
    # worker pool of the preconditioner and costs more than it saves
    n1, n = U.shape
    c = mu / (h * h)
    for i in range(1, n1 - 1):
        for j in range(n):
            if FU[i, j]:
                s = (4.0 + GDU[i, j]) * U[i, j] - U[i - 1, j] - U[i + 1, j]
                if j > 0:
                    s -= U[i, j - 1]
                if j < n - 1:
                    s -= U[i, j + 1]
                OU[i, j] = c * s + (P[i, j] - P[i - 1, j]) / h
    for i in range(n):
        for j in range(1, n):
            if FV[i, j]:
                s = (4.0 + GDV[i, j]) * V[i, j] - V[i, j - 1] - V[i, j + 1]
                if i > 0:
                    s -= V[i - 1, j]
                if i < n - 1:
                    s -= V[i + 1, j]
                OV[i, j] = c * s + (P[i, j] - P[i, j - 1]) / h
    for i in range(n):
        for j in range(n):
            if AC[i, j]:
                OP[i, j] = -((U[i + 1, j] - U[i, j]) + (V[i, j + 1] - V[i, j])) / h


def _saddle_numpy(U, V, P, FU, FV, AC, GDU, GDV, h, mu, OU, OV, OP):
    c = mu / (h * h)
    lap = (4.0 + GDU) * U
    lap[1:, :] -= U[:-1, :]
    lap[:-1, :] -= U[1:, :]
    lap[:, 1:] -= U[:, :-1]
    lap[:, :-1] -= U[:, 1:]
    OU[...] = 0.0
    OU[1:-1, :] = c * lap[1:-1, :] + (P[1:, :] - P[:-1, :]) / h
    OU[~FU] = 0.0
    lap = (4.0 + GDV) * V
    lap[:, 1:] -= V[:, :-1]
    lap[:, :-1] -= V[:, 1:]
    lap[1:, :] -= V[:-1, :]
    lap[:-1, :] -= V[1:, :]
    OV[...] = 0.0
    OV[:, 1:-1] = c * lap[:, 1:-1] + (P[:, 1:] - P[:, :-1]) / h
    OV[~FV] = 0.0
    OP[...] = 0.0
    np.subtract(U[1:, :], U[:-1, :], out=OP)
    OP += V[:, 1:] - V[:, :-1]
    OP /= -h
    OP[~AC] = 0.0


class _SaddleSolver:
    """MINRES with DST preconditioning on one (grid, masks, mu) triple."""

    def __init__(self, grid: StaggeredGrid, masks: MaskSet, mu: float):
        self.grid, self.masks, self.mu = grid, masks, mu
        n = grid.n
        self.iu = np.flatnonzero(masks.fluid_u)
        self.iv = np.flatnonzero(masks.fluid_v)
        self.ip = np.flatnonzero(masks.active_c)
        self.nu, self.nv, self.np_ = self.iu.size, self.iv.size, self.ip.size
        self.N = self.nu + self.nv + self.np_
        # ghost multiplicities for tangential wall rows
        self.gdu = np.zeros((n + 1, n))
        self.gdu[:, 0] += 1.0
        self.gdu[:, -1] += 1.0
        self.gdv = np.zeros((n, n + 1))
        self.gdv[0, :] += 1.0
        self.gdv[-1, :] += 1.0
        lam1 = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, n) / n)     # DST-I, nodes
        lam2 = 2.0 - 2.0 * np.cos(np.pi * (np.arange(n) + 1) / n)  # DST-II, cells
        h2 = grid.h**2
        # single precision is plenty for a preconditioner; the defect rounds
        # converge the true residuals in double regardless
        if os.environ.get("GAPFLOW_DST64"):
            use32 = False
        elif os.environ.get("GAPFLOW_DST32"):
            use32 = True
        else:
            use32 = n >= 768
        self._pdt = np.float32 if use32 else np.float64
        self.den_u = ((lam1[:, None] + lam2[None, :]) / h2 * mu).astype(self._pdt)
        self.den_v = ((lam2[:, None] + lam1[None, :]) / h2 * mu).astype(self._pdt)
        self.U = np.zeros((n + 1, n))
        self.V = np.zeros((n, n + 1))
        self.P = np.zeros((n, n))
        self.OU = np.zeros_like(self.U)
        self.OV = np.zeros_like(self.V)
        self.OP = np.zeros_like(self.P)
        if _HAS_NUMBA:
            self.FU = masks.fluid_u.astype(np.bool_)
            self.FV = masks.fluid_v.astype(np.bool_)
            self.AC = masks.active_c.astype(np.bool_)
        else:
            self.FU, self.FV, self.AC = masks.fluid_u, masks.fluid_v, masks.active_c

    # packing ---------------------------------------------------------------

    def scatter(self, z):
        self.U.ravel()[:] = 0.0
        self.V.ravel()[:] = 0.0
        self.P.ravel()[:] = 0.0
        self.U.ravel()[self.iu] = z[:self.nu]
        self.V.ravel()[self.iv] = z[self.nu:self.nu + self.nv]
        self.P.ravel()[self.ip] = z[self.nu + self.nv:]
        return self.U, self.V, self.P

    def gather(self, A, B, C):
        return np.concatenate([A.ravel()[self.iu], B.ravel()[self.iv],
                               C.ravel()[self.ip]])

    # operator ----------------------------------------------------------------

    def matvec(self, z):
        U, V, P = self.scatter(z)
        fn = _saddle_kernel if _HAS_NUMBA else _saddle_numpy
        fn(U, V, P, self.FU, self.FV, self.AC, self.gdu, self.gdv,
           self.grid.h, self.mu, self.OU, self.OV, self.OP)
        return self.gather(self.OU, self.OV, self.OP)

    def apply_operator_full(self, U, V, P, wall_u=(0.0, 0.0), wall_v=(0.0, 0.0)):
        """-mu*Lap(u) + grad(p) on interior faces and -div(u) on cells, for
        FULL arrays (prescribed values included, wall ghosts included)."""
        h, mu, n = self.grid.h, self.mu, self.grid.n
        lapu = -(4.0 + self.gdu) * U
        lapu[1:, :] += U[:-1, :]
        lapu[:-1, :] += U[1:, :]
        lapu[:, 1:] += U[:, :-1]
        lapu[:, :-1] += U[:, 1:]
        lapu[:, 0] += 2.0 * wall_u[0]
        lapu[:, -1] += 2.0 * wall_u[1]
        lapv = -(4.0 + self.gdv) * V
        lapv[:, 1:] += V[:, :-1]
        lapv[:, :-1] += V[:, 1:]
        lapv[1:, :] += V[:-1, :]
        lapv[:-1, :] += V[1:, :]
        lapv[0, :] += 2.0 * wall_v[0]
        lapv[-1, :] += 2.0 * wall_v[1]
        mu_h2 = mu / h**2
        ou = -mu_h2 * lapu
        ov = -mu_h2 * lapv
        ou[1:-1, :] += (P[1:, :] - P[:-1, :]) / h
        ov[:, 1:-1] += (P[:, 1:] - P[:, :-1]) / h
        dv = velocity_divergence(self.grid, U, V)
        return ou, ov, dv

    # preconditioner -----------------------------------------------------------

    def precond(self, z):
        U, V, P = self.scatter(z)
        t = self._pdt
        w = sfft.dst(sfft.dst(U[1:-1, :].astype(t), type=1, axis=0, norm="ortho",
                              workers=-1), type=2, axis=1, norm="ortho", workers=-1)
        w /= self.den_u
        Uo = np.zeros_like(U)
        Uo[1:-1, :] = sfft.idst(sfft.idst(w, type=2, axis=1, norm="ortho",
                                          workers=-1),
                                type=1, axis=0, norm="ortho", workers=-1)
        w = sfft.dst(sfft.dst(V[:, 1:-1].astype(t), type=2, axis=0, norm="ortho",
                              workers=-1), type=1, axis=1, norm="ortho", workers=-1)
        w /= self.den_v
        Vo = np.zeros_like(V)
        Vo[:, 1:-1] = sfft.idst(sfft.idst(w, type=1, axis=1, norm="ortho",
                                          workers=-1),
                                type=2, axis=0, norm="ortho", workers=-1)
        out = self.gather(Uo, Vo, self.P)
        out[self.nu + self.nv:] = self.mu * z[self.nu + self.nv:]
        return out

    # eliminated solve -----------------------------------------------------------

    def solve(self, U0, V0, fu, fv, tol, max_iter, wall_u, wall_v, z0=None):
        """Solve with Dirichlet values (U0, V0) on non-fluid faces.

        Returns packed solution z, Krylov iteration count, defect rounds.
        Residual targets: max fluid-face momentum residual <= tol * max|rhs|,
        max active-cell divergence <= tol * max(1, velocity scale).
        """
        h, mu = self.grid.h, self.mu
        ru, rv, dv0 = self.apply_operator_full(U0, V0, np.zeros_like(self.P),
                                               wall_u, wall_v)
        rhs_u = -ru
        rhs_v = -rv
        if fu is not None:
            rhs_u = rhs_u + fu
            rhs_v = rhs_v + fv
        b = self.gather(rhs_u, rhs_v, dv0)
        bp = b[self.nu + self.nv:]
        bp -= bp.mean()
        momscale = max(np.abs(b[:self.nu + self.nv]).max(), 1e-300)
        uscale = max(np.abs(U0).max(), np.abs(V0).max(),
                     h**2 / mu * momscale, 1.0)
        mom_target = tol * momscale
        div_target = tol * uscale
        A = LinearOperator((self.N, self.N), matvec=self.matvec)
        M = LinearOperator((self.N, self.N), matvec=self.precond)
        z = np.zeros(self.N) if z0 is None else z0.copy()
        total = 0
        rounds = 0
        mom = div = np.inf
        for _ in range(8):
            r = b - self.matvec(z)
            rp = r[self.nu + self.nv:]
            rp = rp - rp.mean()
            mom = np.abs(r[:self.nu + self.nv]).max() if self.nu + self.nv else 0.0
            div = np.abs(rp).max() if self.np_ else 0.0
            if mom <= mom_target and div <= div_target:
                break
            if total >= max_iter:
                break
            # each defect round reduces the true residuals by ~4 orders
            rtol = 1e-8
            it = [0]
            rr = r.copy()
            rr[self.nu + self.nv:] -= rr[self.nu + self.nv:].mean()
            dz, _info = minres(A, rr, rtol=rtol,
                               maxiter=min(6000, max_iter - total), M=M,
                               callback=lambda xk: it.__setitem__(0, it[0] + 1))
            z = z + dz
            total += it[0]
            rounds += 1
        return z, total, rounds, mom / momscale, div


_solver_cache: dict = {}


def _get_solver(grid, masks, mu) -> _SaddleSolver:
    key = (id(masks), grid.n, grid.lo, grid.hi, mu)
    s = _solver_cache.get(key)
    if s is None:
        _solver_cache.clear()  # one live grid at a time keeps memory bounded
        s = _SaddleSolver(grid, masks, mu)
        _solver_cache[key] = s
    return s


def solve_stokes(prob: PenalizedProblem, tol: float = 1e-8,
                 max_iter: int = 100_000, x0: Optional[np.ndarray] = None,
                 return_packed: bool = False):
    """Solve the penalized problem to the requested true-residual tolerance.

    Returns (Field, SolveStats); raises NonConvergenceError (with the stats
    attached) if max_iter Krylov iterations do not reach the targets.
    """
    t0 = time.time()
    grid, masks = prob.grid, prob.masks
    solver = _get_solver(grid, masks, prob.mu)
    fu, fv = (prob.f if prob.f is not None else (None, None))
    Ut = np.where(masks.fluid_u, 0.0, prob.u_target.u)
    Vt = np.where(masks.fluid_v, 0.0, prob.u_target.v)
    stats = SolveStats()
    z = x0
    U0, V0 = Ut, Vt
    pen_faces_u = ~masks.fluid_u
    pen_faces_v = ~masks.fluid_v
    # interior penalized faces (box boundary stays hard Dirichlet)
    pen_faces_u = pen_faces_u.copy()
    pen_faces_u[0, :] = pen_faces_u[-1, :] = False
    pen_faces_v = pen_faces_v.copy()
    pen_faces_v[:, 0] = pen_faces_v[:, -1] = False
    slip_u = np.zeros_like(Ut)
    slip_v = np.zeros_like(Vt)
    for round_ in range(4):
        z, its, drounds, mom, div = solver.solve(
            U0, V0, fu, fv, tol, max_iter - stats.outer_iterations,
            prob.wall_u, prob.wall_v, z0=z)
        stats.outer_iterations += its
        stats.defect_rounds += drounds
        stats.penalty_rounds = round_ + 1
        stats.momentum_residual = mom
        stats.divergence_residual = div
        # O(eta) slip update on penalized faces:
        # u_solid = u_target + eta*(mu*Lap u - grad p + f)
        U, V, P = solver.scatter(z)
        U = U + U0
        V = V + V0
        ou, ov, _ = solver.apply_operator_full(U, V, P, prob.wall_u, prob.wall_v)
        xi_u = -(ou - (fu if fu is not None else 0.0))
        xi_v = -(ov - (fv if fv is not None else 0.0))
        new_slip_u = np.where(pen_faces_u, prob.eta * xi_u, 0.0)
        new_slip_v = np.where(pen_faces_v, prob.eta * xi_v, 0.0)
        change = max(np.abs(new_slip_u - slip_u).max(),
                     np.abs(new_slip_v - slip_v).max())
        slip_u, slip_v = new_slip_u, new_slip_v
        U0 = Ut + slip_u
        V0 = Vt + slip_v
        if change <= 0.1 * tol * max(1.0, np.abs(Ut).max(), np.abs(Vt).max()):
            break
    stats.wall_time = time.time() - t0
    ok = (stats.momentum_residual <= tol * 1.001 and
          stats.divergence_residual <= tol * max(1.0, np.abs(Ut).max(),
                                                 np.abs(Vt).max(),
                                                 1e-300) * 1.001)
    U, V, P = solver.scatter(z)
    U = U + U0
    V = V + V0
    P = P.copy()
    fluid_c = masks.region_c == int(Region.FLUID)
    if np.any(fluid_c):
        P[masks.active_c] -= P[fluid_c].mean()
    fld = Field(grid, U.copy(), V.copy(), P)
    if not ok:
        raise NonConvergenceError(
            f"stokes solve stalled: momentum {stats.momentum_residual:.2e}, "
            f"divergence {stats.divergence_residual:.2e} after "
            f"{stats.outer_iterations} iterations", stats)
    if return_packed:
        return fld, stats, z
    return fld, stats


# ---------------------------------------------------------------------------
# energy quadrature
# ---------------------------------------------------------------------------

def strain_energy_product(grid: StaggeredGrid, masks: MaskSet,
                          a: Field, b: Field, mu: float = 1.0,
                          cell_mask: Optional[np.ndarray] = None,
                          node_mask: Optional[np.ndarray] = None) -> float:
    """int 2*mu e(a):e(b) by midpoint quadrature.

    Diagonal strain components live at cell centers, the shear component at
    interior nodes. By default the integral runs over all non-exterior
    cells/nodes (the rigid interiors contribute nothing beyond penalization
    noise); pass masks to restrict, e.g. to the neck region.
    """
    h = grid.h
    e11a = (a.u[1:, :] - a.u[:-1, :]) / h
    e11b = (b.u[1:, :] - b.u[:-1, :]) / h
    e22a = (a.v[:, 1:] - a.v[:, :-1]) / h
    e22b = (b.v[:, 1:] - b.v[:, :-1]) / h
    e12a = 0.5 * ((a.u[1:-1, 1:] - a.u[1:-1, :-1]) / h
                  + (a.v[1:, 1:-1] - a.v[:-1, 1:-1]) / h)
    e12b = 0.5 * ((b.u[1:-1, 1:] - b.u[1:-1, :-1]) / h
                  + (b.v[1:, 1:-1] - b.v[:-1, 1:-1]) / h)
    if cell_mask is None:
        cell_mask = masks.region_c != int(Region.EXTERIOR)
    if node_mask is None:
        ext = masks.region_c == int(Region.EXTERIOR)
        node_mask = ~(ext[:-1, :-1] | ext[1:, :-1] | ext[:-1, 1:] | ext[1:, 1:])
    val = 2.0 * mu * float(np.sum((e11a * e11b + e22a * e22b)[cell_mask])) * h * h
    val += 4.0 * mu * float(np.sum((e12a * e12b)[node_mask])) * h * h
    return val
