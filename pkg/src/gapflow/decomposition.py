"""Solution decomposition and rigid-body balance.

The velocity with rigid particles is assembled from cell problems: for each
particle i and rigid mode alpha, u_i^alpha solves Stokes flow with boundary
data psi_alpha on particle i and zero on the other particle and the outer
boundary; u_0 carries the outer boundary data phi. The free coefficients
C_i^alpha follow from zero net force and torque on each particle, which in
weak form is the linear system

    sum_{i,alpha} C_i^alpha int 2 mu e(u_i^alpha):e(u_j^beta)
        = -int 2 mu e(u_0 + u_g):e(u_j^beta) - int g . u_j^beta

for all (j, beta), where g is the (frozen) convective forcing and u_g the
particular solution it drives. With g = 0 this is the Stokes balance; the
stationary Navier-Stokes solution is found by a Picard loop that freezes
g = u.grad(u) from the previous iterate, re-solves the particular problem,
reassembles the right side, and under-relaxes the update. The cell
problems (and the balance matrix) never change during the loop.

On a discretely mirror-symmetric configuration the particle-2 cell
solutions are exact reflections of the particle-1 ones and are constructed
by array reversal instead of a second solve.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import GapGeometry, Region
from .mac_grid import (Field, MaskSet, StaggeredGrid, advect, dot_faces,
                       velocity_divergence)
from .stokes_core import (NonConvergenceError, PenalizedProblem, SolveStats,
                          solve_stokes, strain_energy_product)

__all__ = ["CellSolution", "RigidSystem", "NSSolution", "CELL_LABELS_2D",
           "build_rigid_target", "build_collar_target", "solve_cell_problems",
           "trilinear", "assemble_rigid_system", "solve_coefficients",
           "reconstruct", "stokes_flow", "picard_navier_stokes",
           "AssemblyError", "PicardDivergenceError"]


CELL_LABELS_2D = [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]
_MIRROR_SIGN = {1: 1.0, 2: -1.0, 3: -1.0}


class AssemblyError(RuntimeError):
    pass


class PicardDivergenceError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass
class CellSolution:
    label: object            # (i, alpha) | "background" | "particular"
    field: Field
    stats: SolveStats


@dataclass
class RigidSystem:
    a: np.ndarray            # (6, 6) strain-energy matrix, order CELL_LABELS_2D
    b: np.ndarray            # (6,) balance right side
    C: Optional[np.ndarray] = None
    conditioning: float = np.nan

    def block11(self) -> np.ndarray:
        return self.a[:3, :3]

    def coefficient_gaps(self) -> np.ndarray:
        """|C_1^alpha - C_2^alpha| per alpha."""
        if self.C is None:
            raise AssemblyError("coefficients not solved yet")
        return np.abs(self.C[:3] - self.C[3:])


@dataclass
class NSSolution:
    field: Field
    C: np.ndarray
    picard_iterations: int
    final_update: float
    update_history: list
    particular: Field
    forcing: tuple


# ---------------------------------------------------------------------------
# boundary targets
# ---------------------------------------------------------------------------

def build_rigid_target(grid: StaggeredGrid, masks: MaskSet,
                       particle: int, mode: int) -> Field:
    """psi_mode on the faces of the given particle, zero elsewhere."""
    tgt = Field.zeros(grid)
    xu, yu = grid.u_coords()
    xv, yv = grid.v_coords()
    mu_ = masks.region_u == particle
    mv_ = masks.region_v == particle
    if mode == 1:
        tgt.u[mu_] = 1.0
    elif mode == 2:
        tgt.v[mv_] = 1.0
    elif mode == 3:
        tgt.u[mu_] = yu[mu_]
        tgt.v[mv_] = -xv[mv_]
    else:
        raise ValueError("2D rigid mode must be 1, 2 or 3")
    return tgt


def build_collar_target(grid: StaggeredGrid, masks: MaskSet,
                        phi: Optional[Callable]) -> Field:
    """phi on exterior-collar faces and on the box boundary, zero elsewhere.

    phi maps coordinate arrays (X, Y) to component arrays (U, V).
    """
    tgt = Field.zeros(grid)
    if phi is None:
        return tgt
    xu, yu = grid.u_coords()
    xv, yv = grid.v_coords()
    mu_ = masks.region_u == int(Region.EXTERIOR)
    mv_ = masks.region_v == int(Region.EXTERIOR)
    tgt.u[mu_] = phi(xu[mu_], yu[mu_])[0]
    tgt.v[mv_] = phi(xv[mv_], yv[mv_])[1]
    for idx in (0, -1):
        tgt.u[idx, :] = phi(xu[idx, :], yu[idx, :])[0]
        tgt.v[:, idx] = phi(xv[:, idx], yv[:, idx])[1]
    return tgt


def _masks_mirror_symmetric(masks: MaskSet) -> bool:
    return (np.array_equal(masks.region_u, _swap12(masks.region_u[:, ::-1]))
            and np.array_equal(masks.region_v, _swap12(masks.region_v[:, ::-1]))
            and np.array_equal(masks.region_c, _swap12(masks.region_c[:, ::-1])))


def _swap12(region: np.ndarray) -> np.ndarray:
    out = region.copy()
    out[region == int(Region.PARTICLE1)] = int(Region.PARTICLE2)
    out[region == int(Region.PARTICLE2)] = int(Region.PARTICLE1)
    return out


def _mirror_field(fld: Field, mode: int) -> Field:
    s = _MIRROR_SIGN[mode]
    return Field(fld.grid, s * fld.u[:, ::-1].copy(),
                 -s * fld.v[:, ::-1].copy(), s * fld.p[:, ::-1].copy())


# ---------------------------------------------------------------------------
# cell problems
# ---------------------------------------------------------------------------

def solve_cell_problems(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                        phi: Optional[Callable] = None, tol: float = 1e-8,
                        eta: Optional[float] = None, max_iter: int = 200_000,
                        use_mirror: bool = True,
                        coarse_init: Optional[dict] = None) -> list[CellSolution]:
    """All 2D cell problems plus the background solution, 7 CellSolutions.

    When the discrete masks are mirror symmetric across the midplane (and
    use_mirror is set) the particle-2 problems are obtained by reflection.
    coarse_init may carry packed initial guesses keyed by label.
    """
    mirror_ok = use_mirror and _masks_mirror_symmetric(masks)
    out: dict = {}
    for alpha in (1, 2, 3):
        tgt = build_rigid_target(grid, masks, int(Region.PARTICLE1), alpha)
        prob = PenalizedProblem(grid, masks, mu=geom.mu, eta=eta, u_target=tgt)
        fld, stats = solve_stokes(prob, tol=tol, max_iter=max_iter,
                                  x0=None if coarse_init is None
                                  else coarse_init.get((1, alpha)))
        out[(1, alpha)] = CellSolution((1, alpha), fld, stats)
        if mirror_ok:
            out[(2, alpha)] = CellSolution((2, alpha),
                                           _mirror_field(fld, alpha), stats)
    if not mirror_ok:
        for alpha in (1, 2, 3):
            tgt = build_rigid_target(grid, masks, int(Region.PARTICLE2), alpha)
            prob = PenalizedProblem(grid, masks, mu=geom.mu, eta=eta, u_target=tgt)
            fld, stats = solve_stokes(prob, tol=tol, max_iter=max_iter,
                                      x0=None if coarse_init is None
                                      else coarse_init.get((2, alpha)))
            out[(2, alpha)] = CellSolution((2, alpha), fld, stats)
    tgt = build_collar_target(grid, masks, phi)
    prob = PenalizedProblem(grid, masks, mu=geom.mu, eta=eta, u_target=tgt)
    fld, stats = solve_stokes(prob, tol=tol, max_iter=max_iter,
                              x0=None if coarse_init is None
                              else coarse_init.get("background"))
    out["background"] = CellSolution("background", fld, stats)
    return [out[k] for k in CELL_LABELS_2D] + [out["background"]]


def boundary_conformance(masks: MaskSet, cell: CellSolution,
                         grid: StaggeredGrid) -> tuple[float, float]:
    """(mean |u - target| over own particle faces, mean |u| over the other).

    Both should sit well below sqrt(eta) for a converged penalized solve.
    """
    if not isinstance(cell.label, tuple):
        raise ValueError("conformance applies to particle cell problems")
    i, alpha = cell.label
    own = build_rigid_target(grid, masks, i, alpha)
    mu_ = masks.region_u == i
    mv_ = masks.region_v == i
    own_err = 0.5 * (np.abs(cell.field.u - own.u)[mu_].mean()
                     + np.abs(cell.field.v - own.v)[mv_].mean())
    j = 3 - i
    mu_o = masks.region_u == j
    mv_o = masks.region_v == j
    other_err = 0.5 * (np.abs(cell.field.u)[mu_o].mean()
                       + np.abs(cell.field.v)[mv_o].mean())
    return float(own_err), float(other_err)


# ---------------------------------------------------------------------------
# balance system
# ---------------------------------------------------------------------------

def trilinear(grid: StaggeredGrid, masks: MaskSet, a: Field, b: Field,
              c: Field) -> float:
    """T(a, b, c) = int a.grad(b).c over fluid faces (skew advection form)."""
    cu, cv = advect(grid, masks, a, b)
    cu = np.where(masks.fluid_u, cu, 0.0)
    cv = np.where(masks.fluid_v, cv, 0.0)
    return dot_faces(grid, cu, cv, c.u, c.v)


def assemble_rigid_system(grid: StaggeredGrid, masks: MaskSet,
                          cells: list[CellSolution], mu: float,
                          g: Optional[tuple] = None,
                          u_particular: Optional[Field] = None) -> RigidSystem:
    """Balance matrix and right side from strain-energy quadrature.

    cells: the 6 particle solutions (order CELL_LABELS_2D) then the
    background. g is the frozen convective face forcing; its work against
    each test solution moves to the right side.
    """
    by_label = {c.label: c for c in cells}
    try:
        basis = [by_label[k].field for k in CELL_LABELS_2D]
        u0 = by_label["background"].field
    except KeyError as e:
        raise AssemblyError(f"missing cell solution {e}") from e
    m = len(basis)
    a = np.zeros((m, m))
    for k in range(m):
        for l in range(k, m):
            a[k, l] = a[l, k] = strain_energy_product(grid, masks, basis[k],
                                                      basis[l], mu)
    b = np.array([-strain_energy_product(grid, masks, u0, basis[k], mu)
                  for k in range(m)])
    if u_particular is not None:
        b -= np.array([strain_energy_product(grid, masks, u_particular,
                                             basis[k], mu) for k in range(m)])
    if g is not None:
        gu = np.where(masks.fluid_u, g[0], 0.0)
        gv = np.where(masks.fluid_v, g[1], 0.0)
        b -= np.array([dot_faces(grid, gu, gv, f.u, f.v) for f in basis])
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise AssemblyError("non-finite balance entries")
    cond = float(np.linalg.cond(a))
    return RigidSystem(a=a, b=b, conditioning=cond)


def solve_coefficients(sys: RigidSystem) -> np.ndarray:
    """Direct dense solve with residual and conditioning checks."""
    if sys.conditioning > 1e14:
        raise AssemblyError(f"balance matrix ill-conditioned: cond={sys.conditioning:.3e}")
    C = np.linalg.solve(sys.a, sys.b)
    res = np.linalg.norm(sys.a @ C - sys.b)
    if res > 1e-10 * max(np.linalg.norm(sys.b), 1e-300):
        raise AssemblyError(f"balance solve residual {res:.3e} too large")
    sys.C = C
    return C


def reconstruct(grid: StaggeredGrid, cells: list[CellSolution], C: np.ndarray,
                u_particular: Optional[Field] = None) -> Field:
    """u = sum C_k u_k + u_0 (+ u_g)."""
    by_label = {c.label: c for c in cells}
    out = by_label["background"].field.copy()
    for k, lab in enumerate(CELL_LABELS_2D):
        out.add_scaled(by_label[lab].field, float(C[k]))
    if u_particular is not None:
        out.add_scaled(u_particular, 1.0)
    return out


def stokes_flow(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                phi: Optional[Callable], tol: float = 1e-8,
                eta: Optional[float] = None,
                cells: Optional[list[CellSolution]] = None):
    """Full Stokes solution: cells, balance system, reconstruction."""
    if cells is None:
        cells = solve_cell_problems(geom, grid, masks, phi, tol=tol, eta=eta)
    sys = assemble_rigid_system(grid, masks, cells, geom.mu)
    C = solve_coefficients(sys)
    fld = reconstruct(grid, cells, C)
    return fld, sys, cells


# ---------------------------------------------------------------------------
# stationary Navier-Stokes by Picard iteration
# ---------------------------------------------------------------------------

def picard_navier_stokes(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                         phi: Optional[Callable], tol: float = 1e-8,
                         max_picard: int = 50, theta: float = 0.7,
                         solver_tol: float = 1e-9,
                         eta: Optional[float] = None,
                         cells: Optional[list[CellSolution]] = None) -> NSSolution:
    """Fixed-point loop freezing the convective term.

    Each pass solves one particular Stokes problem with forcing -u.grad(u)
    (warm-started from the previous pass), reassembles the balance right
    side including the frozen trilinear work, and under-relaxes (u, C).
    """
    if cells is None:
        cells = solve_cell_problems(geom, grid, masks, phi, tol=solver_tol, eta=eta)
    sys0 = assemble_rigid_system(grid, masks, cells, geom.mu)
    C = solve_coefficients(RigidSystem(sys0.a.copy(), sys0.b.copy(),
                                       conditioning=sys0.conditioning))
    u = reconstruct(grid, cells, C)
    zeros_tgt = Field.zeros(grid)
    u_part = Field.zeros(grid)
    z_warm = None
    history = []
    uscale = max(np.abs(u.u).max(), np.abs(u.v).max(), 1e-300)
    final = np.inf
    its = 0
    for its in range(1, max_picard + 1):
        gu, gv = advect(grid, masks, u, u)
        gu = np.where(masks.fluid_u, gu, 0.0)
        gv = np.where(masks.fluid_v, gv, 0.0)
        prob = PenalizedProblem(grid, masks, mu=geom.mu, eta=eta,
                                u_target=zeros_tgt, f=(-gu, -gv))
        # inexact passes: the particular solve only needs to outpace the
        # current fixed-point error; convergence is declared on exact passes
        pass_tol = solver_tol if final < 1e3 * tol else \
            float(np.clip(0.02 * final, solver_tol, 1e-4))
        u_part, _stats, z_warm = solve_stokes(prob, tol=pass_tol,
                                              max_iter=200_000, x0=z_warm,
                                              return_packed=True)
        sys = RigidSystem(sys0.a.copy(), sys0.b.copy(),
                          conditioning=sys0.conditioning)
        sys.b -= np.array([strain_energy_product(grid, masks, u_part,
                                                 c.field, geom.mu)
                           for c in cells[:6]])
        sys.b -= np.array([dot_faces(grid, gu, gv, c.field.u, c.field.v)
                           for c in cells[:6]])
        C_new = solve_coefficients(sys)
        u_new = reconstruct(grid, cells, C_new, u_part)
        du = max(np.abs(u_new.u - u.u).max(), np.abs(u_new.v - u.v).max())
        dC = np.abs(C_new - C).max()
        final = max(du / uscale, dC / max(np.abs(C_new).max(), 1e-300))
        history.append(final)
        u.u += theta * (u_new.u - u.u)
        u.v += theta * (u_new.v - u.v)
        u.p += theta * (u_new.p - u.p)
        C = C + theta * (C_new - C)
        if final < tol:
            break
    else:
        raise PicardDivergenceError(
            f"no contraction to {tol:g} within {max_picard} passes "
            f"(last update {final:.3e})", history)
    return NSSolution(field=u, C=C, picard_iterations=its, final_update=final,
                      update_history=history, particular=u_part,
                      forcing=(gu, gv))
