"""2D staggered (MAC) grid: masks, discrete operators, gap measurements.

Layout on a square box with n uniform cells per axis (spacing h):

    u[i, j]  x-velocity at vertical faces   (lo + i*h,       lo + (j+1/2)*h)   (n+1, n)
    v[i, j]  y-velocity at horizontal faces (lo + (i+1/2)*h,  lo + j*h)         (n, n+1)
    p[i, j]  pressure at cell centers       (lo + (i+1/2)*h,  lo + (j+1/2)*h)   (n, n)

Discrete divergence and pressure gradient are exact negative transposes of
each other, which the saddle-point solver and the energy identities rely
on. Tangential wall values enter the velocity Laplacian through linear
ghost cells (ghost = 2*wall - interior), i.e. an extra +1 on the stencil
diagonal and a wall term on the right-hand side.

Faces are classified by the region of their center point; a face is a
fluid unknown iff its center is in the fluid and it is not on the box
boundary. Pressure unknowns live on "active" cells: cells touching at
least one fluid face. Measurements exclude a margin band of cells next to
any solid face, where the binary masking is only first-order accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import binary_erosion

from .geometry import GapGeometry, Region

__all__ = ["StaggeredGrid", "MaskSet", "Field", "ResolutionError", "build_masks",
           "velocity_divergence", "pressure_gradient", "velocity_laplacian",
           "advect", "dot_faces", "gradient_at_centers", "gap_sample_mask",
           "max_gradient_in_gap", "centerline_gradient", "pressure_oscillation",
           "cauchy_stress_max", "export_field_csv"]


class ResolutionError(ValueError):
    """Grid too coarse to resolve the gap."""


class MeasurementError(ValueError):
    """Empty measurement sample set."""


@dataclass(frozen=True)
class StaggeredGrid:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError("need at least 16 cells per axis")
        if self.hi <= self.lo:
            raise ValueError("empty box")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    def edges(self):
        return self.lo + np.arange(self.n + 1) * self.h

    def centers(self):
        return self.lo + (np.arange(self.n) + 0.5) * self.h

    def u_coords(self):
        return np.meshgrid(self.edges(), self.centers(), indexing="ij")

    def v_coords(self):
        return np.meshgrid(self.centers(), self.edges(), indexing="ij")

    def cell_coords(self):
        return np.meshgrid(self.centers(), self.centers(), indexing="ij")

    def node_coords(self):
        return np.meshgrid(self.edges(), self.edges(), indexing="ij")


@dataclass
class MaskSet:
    """Region codes and unknown masks for one geometry on one grid."""

    region_u: np.ndarray       # int8 (n+1, n)
    region_v: np.ndarray       # int8 (n, n+1)
    region_c: np.ndarray       # int8 (n, n)
    fluid_u: np.ndarray        # bool (n+1, n): velocity unknowns
    fluid_v: np.ndarray        # bool (n, n+1)
    active_c: np.ndarray       # bool (n, n): pressure unknowns

    @property
    def fluid_cell_count(self) -> int:
        return int(np.count_nonzero(self.region_c == int(Region.FLUID)))

    @property
    def fluid_face_count(self) -> int:
        return int(np.count_nonzero(self.fluid_u) + np.count_nonzero(self.fluid_v))


def build_masks(geom: Optional[GapGeometry], grid: StaggeredGrid,
                min_cells_across: float = 4.0) -> MaskSet:
    """Classify faces and cells; None geometry means an empty (all-fluid) box.

    Raises ResolutionError when the gap spans fewer than min_cells_across
    cells. (The sweep sizing targets 8 cells per gap; the hard floor here is
    lower so that the capped largest grids remain usable.)
    """
    n = grid.n
    if geom is None:
        ru = np.zeros((n + 1, n), np.int8)
        rv = np.zeros((n, n + 1), np.int8)
        rc = np.zeros((n, n), np.int8)
    else:
        _check_outer_margin(geom, grid)
        ru = geom.classify_grid(*grid.u_coords())
        rv = geom.classify_grid(*grid.v_coords())
        rc = geom.classify_grid(*grid.cell_coords())
        if geom.eps / grid.h < min_cells_across:
            raise ResolutionError(
                f"gap eps={geom.eps:g} spans {geom.eps/grid.h:.2f} cells "
                f"(< {min_cells_across:g}); refine the grid")
    fu = ru == int(Region.FLUID)
    fu[0, :] = False
    fu[-1, :] = False
    fv = rv == int(Region.FLUID)
    fv[:, 0] = False
    fv[:, -1] = False
    active = fu[:-1, :] | fu[1:, :] | fv[:, :-1] | fv[:, 1:]
    masks = MaskSet(ru, rv, rc, fu, fv, active)
    if masks.fluid_cell_count == 0:
        raise ResolutionError("no fluid cells")
    return masks


def _check_outer_margin(geom: GapGeometry, grid: StaggeredGrid):
    """The outer domain must sit at least 2h inside the grid box."""
    from .geometry import Ball, Box
    if isinstance(geom.outer, Ball):
        spans = [(c - geom.outer.radius, c + geom.outer.radius) for c in geom.outer.center]
    elif isinstance(geom.outer, Box):
        spans = list(zip(geom.outer.lo, geom.outer.hi))
    else:
        return
    pad = 2 * grid.h
    for lo_i, hi_i in spans:
        if lo_i - grid.lo < pad or grid.hi - hi_i < pad:
            raise ResolutionError("grid box must contain the outer domain with margin >= 2h")


@dataclass
class Field:
    """Velocity (face arrays) and pressure (cell array) on one grid."""

    grid: StaggeredGrid
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    @staticmethod
    def zeros(grid: StaggeredGrid) -> "Field":
        n = grid.n
        return Field(grid, np.zeros((n + 1, n)), np.zeros((n, n + 1)), np.zeros((n, n)))

    def copy(self) -> "Field":
        return Field(self.grid, self.u.copy(), self.v.copy(), self.p.copy())

    def scaled(self, c: float) -> "Field":
        return Field(self.grid, c * self.u, c * self.v, c * self.p)

    def add_scaled(self, other: "Field", c: float) -> "Field":
        self.u += c * other.u
        self.v += c * other.v
        self.p += c * other.p
        return self


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------

def velocity_divergence(grid: StaggeredGrid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h = grid.h
    return (u[1:, :] - u[:-1, :]) / h + (v[:, 1:] - v[:, :-1]) / h


def pressure_gradient(grid: StaggeredGrid, p: np.ndarray):
    """(dp/dx at interior u-faces, dp/dy at interior v-faces); zero on boundary faces."""
    h = grid.h
    gu = np.zeros((grid.n + 1, grid.n))
    gv = np.zeros((grid.n, grid.n + 1))
    gu[1:-1, :] = (p[1:, :] - p[:-1, :]) / h
    gv[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / h
    return gu, gv


def velocity_laplacian(grid: StaggeredGrid, w: np.ndarray, component: str,
                       wall_value: float = 0.0) -> np.ndarray:
    """5-point Laplacian of one velocity component with linear wall ghosts.

    Array neighbors outside the index range are treated as zero (they are
    prescribed separately by the solver); the tangential walls use
    ghost = 2*wall_value - interior.
    """
    h = grid.h
    out = -4.0 * w.copy()
    out[1:, :] += w[:-1, :]
    out[:-1, :] += w[1:, :]
    out[:, 1:] += w[:, :-1]
    out[:, :-1] += w[:, 1:]
    if component == "u":      # tangential walls at j = 0, n-1
        out[:, 0] += 2.0 * wall_value - w[:, 0]
        out[:, -1] += 2.0 * wall_value - w[:, -1]
    elif component == "v":
        out[0, :] += 2.0 * wall_value - w[0, :]
        out[-1, :] += 2.0 * wall_value - w[-1, :]
    else:
        raise ValueError("component must be 'u' or 'v'")
    return out / h**2


def advect(grid: StaggeredGrid, masks: Optional[MaskSet],
           a: Field, b: Field):
    """Divergence-form MAC transport of velocity b by velocity a.

    Exactly skew-symmetric: <advect(a, b), b> = 0 to roundoff whenever a is
    discretely divergence-free on all cells and b vanishes near the box
    boundary (interior products are antisymmetrized by construction).
    Returns face arrays (cu, cv); entries on box-boundary faces are zero.
    """
    h, n = grid.h, grid.n
    au, av, bu, bv = a.u, a.v, b.u, b.v
    # x-momentum: d(au*bu)/dx + d(av*bu)/dy
    Fc = 0.25 * (au[1:, :] + au[:-1, :]) * (bu[1:, :] + bu[:-1, :])
    Fn = np.zeros((n + 1, n + 1))
    Fn[1:-1, 1:-1] = 0.25 * (av[1:, 1:-1] + av[:-1, 1:-1]) * (bu[1:-1, 1:] + bu[1:-1, :-1])
    cu = np.zeros_like(au)
    cu[1:-1, :] = (Fc[1:, :] - Fc[:-1, :]) / h + (Fn[1:-1, 1:] - Fn[1:-1, :-1]) / h
    # y-momentum: d(au*bv)/dx + d(av*bv)/dy
    Gc = 0.25 * (av[:, 1:] + av[:, :-1]) * (bv[:, 1:] + bv[:, :-1])
    Gn = np.zeros((n + 1, n + 1))
    Gn[1:-1, 1:-1] = 0.25 * (au[1:-1, 1:] + au[1:-1, :-1]) * (bv[1:, 1:-1] + bv[:-1, 1:-1])
    cv = np.zeros_like(av)
    cv[:, 1:-1] = (Gc[:, 1:] - Gc[:, :-1]) / h + (Gn[1:, 1:-1] - Gn[:-1, 1:-1]) / h
    return cu, cv


def dot_faces(grid: StaggeredGrid, au, av, bu, bv) -> float:
    """Face-wise inner product with cell-volume weight."""
    return float((np.sum(au * bu) + np.sum(av * bv)) * grid.h**2)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def gradient_at_centers(grid: StaggeredGrid, u: np.ndarray, v: np.ndarray):
    """(du/dx, du/dy, dv/dx, dv/dy) at cell centers, centered differences.

    The cross derivatives use 2h-centered differences of face-averaged
    values; the outermost cell ring is left zero.
    """
    h = grid.h
    dudx = (u[1:, :] - u[:-1, :]) / h
    dvdy = (v[:, 1:] - v[:, :-1]) / h
    ub = 0.5 * (u[1:, :] + u[:-1, :])
    dudy = np.zeros_like(dudx)
    dudy[:, 1:-1] = (ub[:, 2:] - ub[:, :-2]) / (2 * h)
    vb = 0.5 * (v[:, 1:] + v[:, :-1])
    dvdx = np.zeros_like(dvdy)
    dvdx[1:-1, :] = (vb[2:, :] - vb[:-2, :]) / (2 * h)
    return dudx, dudy, dvdx, dvdy


def gap_sample_mask(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                    r: float, margin_cells: int = 2) -> np.ndarray:
    """Fluid cells inside the neck of half-width r, eroded by margin_cells."""
    if r > 2 * geom.R + 1e-12:
        raise ValueError(f"sample radius r={r:g} exceeds neck half-width 2R={2*geom.R:g}")
    fluid = masks.region_c == int(Region.FLUID)
    if margin_cells > 0:
        fluid = binary_erosion(fluid, iterations=margin_cells)
    X, Y = grid.cell_coords()
    rp = np.abs(X)
    with np.errstate(invalid="ignore"):
        top = geom.top_boundary(rp)
        bot = geom.bottom_boundary(rp)
    inside = (rp < r) & np.isfinite(top) & (Y < top) & (Y > bot)
    return fluid & inside


def _component_max(mask, *comps) -> float:
    if not np.any(mask):
        raise MeasurementError("empty gap sample set")
    return max(float(np.abs(c[mask]).max()) for c in comps)


def max_gradient_in_gap(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                        fld: Field, r: float, margin_cells: int = 2) -> float:
    """Max |du_i/dx_j| over margin-eroded fluid cells of the neck."""
    m = gap_sample_mask(geom, grid, masks, r, margin_cells)
    return _component_max(m, *gradient_at_centers(grid, fld.u, fld.v))


def centerline_gradient(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                        fld: Field, margin_cells: int = 2) -> float:
    """Max |du_i/dx_j| over the gap cells nearest the closest-approach axis."""
    m = gap_sample_mask(geom, grid, masks, 2 * geom.R, margin_cells)
    X, _ = grid.cell_coords()
    cols = np.abs(X) <= grid.h  # the two columns straddling x = 0
    return _component_max(m & cols, *gradient_at_centers(grid, fld.u, fld.v))


def pressure_oscillation(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                         p: np.ndarray, r: float, margin_cells: int = 2) -> float:
    """max - min of p over the sampled gap cells (normalization-free)."""
    m = gap_sample_mask(geom, grid, masks, r, margin_cells)
    if not np.any(m):
        raise MeasurementError("empty gap sample set")
    return float(p[m].max() - p[m].min())


def cauchy_stress_max(geom: GapGeometry, grid: StaggeredGrid, masks: MaskSet,
                      fld: Field, r: float, margin_cells: int = 2,
                      mu: Optional[float] = None) -> float:
    """Max |(2 mu e(u) - p I)_{ij}| over sampled gap cells, p made mean-zero
    over fluid cells."""
    mu = geom.mu if mu is None else mu
    m = gap_sample_mask(geom, grid, masks, r, margin_cells)
    dudx, dudy, dvdx, dvdy = gradient_at_centers(grid, fld.u, fld.v)
    fluid_c = masks.region_c == int(Region.FLUID)
    pz = fld.p - fld.p[fluid_c].mean()
    sxx = 2 * mu * dudx - pz
    syy = 2 * mu * dvdy - pz
    sxy = mu * (dudy + dvdx)
    return _component_max(m, sxx, syy, sxy)


def export_field_csv(fld: Field, path, masks: Optional[MaskSet] = None):
    """Cell-centered snapshot (x, y, u, v, p) as CSV; u, v face-averaged."""
    grid = fld.grid
    X, Y = grid.cell_coords()
    uc = 0.5 * (fld.u[1:, :] + fld.u[:-1, :])
    vc = 0.5 * (fld.v[:, 1:] + fld.v[:, :-1])
    rows = np.column_stack([X.ravel(), Y.ravel(), uc.ravel(), vc.ravel(), fld.p.ravel()])
    header = "x,y,u,v,p"
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")
