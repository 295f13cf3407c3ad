"""Two-particle thin-gap geometry.

Two rigid particles sit nearly in contact across a thin gap of width eps,
inside an outer container. Near the closest approach the particle surfaces
are graphs x_d = +-(eps/2 + h_i(x')) over the horizontal offset x', with
h_i either an exact quadratic kappa/2*|x'|^2 or a circular cap
radius - sqrt(radius^2 - |x'|^2). The vertical separation

    delta(x') = eps + h_1(x') + h_2(x')

and the neck region Omega_r (|x'| < r, between the two surfaces) are the
coordinates in which every closed-form gap field and every blow-up rate in
this package is expressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Union

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric configuration."""


class OutOfNeckError(GeometryError):
    """Point lies outside the supported neck region."""


class UnsupportedGeometryError(GeometryError):
    """Operation requires a geometry variant this build does not support."""


class ProfileKind(Enum):
    QUADRATIC = "quadratic"
    CIRCLE = "circle"


class Region(IntEnum):
    FLUID = 0
    PARTICLE1 = 1
    PARTICLE2 = 2
    EXTERIOR = 3


@dataclass(frozen=True)
class GapProfile:
    """One particle's surface height h(x') over the gap midplane.

    QUADRATIC: h(x') = curvature/2 * |x'|^2.
    CIRCLE:    h(x') = radius - sqrt(radius^2 - |x'|^2), the near cap of a
               disk/ball of the given radius.
    """

    kind: ProfileKind
    curvature: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind == ProfileKind.QUADRATIC and self.curvature <= 0:
            raise GeometryError("quadratic profile needs positive curvature")
        if self.kind == ProfileKind.CIRCLE and self.radius <= 0:
            raise GeometryError("circle profile needs positive radius")

    def height(self, rp):
        """h at horizontal distance rp = |x'| (scalar or array)."""
        rp = np.asarray(rp, dtype=float)
        if self.kind == ProfileKind.QUADRATIC:
            h = 0.5 * self.curvature * rp**2
        else:
            h = self.radius - np.sqrt(np.clip(self.radius**2 - rp**2, 0.0, None))
        return h if h.shape else float(h)

    def effective_curvature(self) -> float:
        """Curvature of h at the origin (h''(0))."""
        if self.kind == ProfileKind.QUADRATIC:
            return self.curvature
        return 1.0 / self.radius


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, *coords):
        r2 = sum((np.asarray(c, dtype=float) - c0) ** 2 for c, c0 in zip(coords, self.center))
        return r2 <= self.radius**2


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, *coords):
        ok = True
        for c, a, b in zip(coords, self.lo, self.hi):
            c = np.asarray(c, dtype=float)
            ok = ok & (c >= a) & (c <= b)
        return ok


OuterDomain = Union[Ball, Box]


@dataclass(frozen=True)
class GapGeometry:
    """Two-particle configuration with gap width eps.

    Particle 1 occupies x_d > eps/2 + h_1(x') (top), particle 2 the mirror
    region below. For CIRCLE profiles the particles are the full disks/balls;
    for QUADRATIC profiles only the cap over |x'| <= 2R is modeled.
    kappa0/kappa1 are recorded clearance/regularity constants; they enter no
    formula.
    """

    dimension: int
    eps: float
    profile_top: GapProfile
    profile_bottom: GapProfile
    R: float = 0.5
    outer: OuterDomain = field(default_factory=lambda: Ball((0.0, 0.0), 4.0))
    kappa0: float = 0.1
    kappa1: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError("dimension must be 2 or 3")
        if not 0.0 < self.eps < 0.5:
            raise GeometryError("eps must lie in (0, 1/2)")
        if self.R <= 0:
            raise GeometryError("R must be positive")
        for prof in (self.profile_top, self.profile_bottom):
            # the cap height is defined up to |x'| = radius; the default
            # unit-scale setup has 2R equal to the radius exactly
            if prof.kind == ProfileKind.CIRCLE and 2 * self.R > prof.radius:
                raise GeometryError("circle profile requires 2R <= radius")
        self._check_outer_clearance()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def unit_disks(eps: float, dimension: int = 2, ball_radius: float = 4.0,
                   R: float = 0.5, mu: float = 1.0) -> "GapGeometry":
        """The lower-bound configuration: two unit disks/balls inside B_4."""
        prof = GapProfile(ProfileKind.CIRCLE, radius=1.0)
        center = (0.0,) * dimension
        return GapGeometry(dimension, eps, prof, prof, R=R,
                           outer=Ball(center, ball_radius), mu=mu)

    @staticmethod
    def quadratic(eps: float, dimension: int = 2, kappa: float = 1.0,
                  R: float = 0.5, mu: float = 1.0) -> "GapGeometry":
        prof = GapProfile(ProfileKind.QUADRATIC, curvature=kappa)
        center = (0.0,) * dimension
        return GapGeometry(dimension, eps, prof, prof, R=R,
                           outer=Ball(center, 4.0), mu=mu)

    def _check_outer_clearance(self):
        # only checkable for bounded particles (circle caps) in a ball
        if not isinstance(self.outer, Ball):
            return
        for prof, sign in ((self.profile_top, 1.0), (self.profile_bottom, -1.0)):
            if prof.kind != ProfileKind.CIRCLE:
                continue
            cy = sign * (self.eps / 2 + prof.radius)
            center_dist = np.sqrt(sum((a - b) ** 2 for a, b in
                                      zip(self.outer.center, (0.0,) * (self.dimension - 1) + (cy,))))
            clearance = self.outer.radius - center_dist - prof.radius
            if clearance <= self.kappa0:
                raise GeometryError(
                    f"particle clearance {clearance:.3g} below kappa0={self.kappa0:.3g}")

    # -- gap functions ---------------------------------------------------------

    def h1(self, rp):
        return self.profile_top.height(rp)

    def h2(self, rp):
        return self.profile_bottom.height(rp)

    def gap_width(self, xp) -> float:
        """delta(x') = eps + h1 + h2; xp is the (d-1)-dim horizontal offset."""
        rp = _hnorm(xp)
        if np.any(rp > 2 * self.R + 1e-15):
            raise OutOfNeckError(f"|x'|={np.max(rp):.4g} exceeds neck half-width 2R={2*self.R:.4g}")
        val = self.eps + self.h1(rp) + self.h2(rp)
        return val if np.asarray(val).shape else float(val)

    def gap_width_unchecked(self, rp):
        """delta as a function of |x'|, vectorized, no neck-range check."""
        return self.eps + self.h1(rp) + self.h2(rp)

    def top_boundary(self, rp):
        """x_d of the lower surface of particle 1."""
        return self.eps / 2 + self.h1(rp)

    def bottom_boundary(self, rp):
        """x_d of the upper surface of particle 2."""
        return -self.eps / 2 - self.h2(rp)

    # -- classification ---------------------------------------------------------

    def classify(self, x) -> Region:
        """Region of a single d-point."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise GeometryError(f"expected a {self.dimension}-point")
        xp, xd = x[:-1], x[-1]
        if not bool(self.outer.contains(*x)):
            return Region.EXTERIOR
        if self._in_particle(xp, xd, top=True):
            return Region.PARTICLE1
        if self._in_particle(xp, xd, top=False):
            return Region.PARTICLE2
        return Region.FLUID

    def _in_particle(self, xp, xd, top: bool) -> bool:
        prof = self.profile_top if top else self.profile_bottom
        rp = float(_hnorm(xp))
        if prof.kind == ProfileKind.CIRCLE:
            cy = (1.0 if top else -1.0) * (self.eps / 2 + prof.radius)
            return rp**2 + (xd - cy) ** 2 < prof.radius**2
        if rp > 2 * self.R:
            return False
        bound = self.eps / 2 + prof.height(rp)
        return xd > bound if top else xd < -bound

    def classify_grid(self, X, Y):
        """Vectorized 2D classification; returns int8 Region codes."""
        if self.dimension != 2:
            raise UnsupportedGeometryError("grid classification is 2D only")
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        out = np.zeros(X.shape, dtype=np.int8)
        out[~np.asarray(self.outer.contains(X, Y))] = int(Region.EXTERIOR)
        for prof, code, sign in ((self.profile_top, Region.PARTICLE1, 1.0),
                                 (self.profile_bottom, Region.PARTICLE2, -1.0)):
            if prof.kind == ProfileKind.CIRCLE:
                cy = sign * (self.eps / 2 + prof.radius)
                inside = X**2 + (Y - cy) ** 2 < prof.radius**2
            else:
                rp = np.abs(X)
                bound = self.eps / 2 + prof.height(rp)
                inside = (rp <= 2 * self.R) & (sign * Y > bound)
            out[inside & (out == 0)] = int(code)
        return out

    def neck_contains(self, r: float, x) -> bool:
        """True iff x lies strictly inside the neck region Omega_r."""
        if r > 2 * self.R + 1e-15:
            raise OutOfNeckError(f"r={r:.4g} exceeds 2R={2*self.R:.4g}")
        x = np.asarray(x, dtype=float)
        xp, xd = x[:-1], x[-1]
        rp = float(_hnorm(xp))
        if rp >= r:
            return False
        return self.bottom_boundary(rp) < xd < self.top_boundary(rp)

    # -- symmetry queries --------------------------------------------------------

    def is_symmetric(self) -> bool:
        """Same profile top and bottom (mirror symmetry across the midplane)."""
        return self.profile_top == self.profile_bottom

    def is_symmetric_quadratic(self) -> bool:
        return (self.is_symmetric()
                and self.profile_top.kind == ProfileKind.QUADRATIC)

    def quadratic_curvature(self) -> float:
        """Common curvature kappa of a symmetric quadratic pair."""
        if not self.is_symmetric_quadratic():
            raise UnsupportedGeometryError(
                "gap fields need a symmetric quadratic profile pair")
        return self.profile_top.curvature


def _hnorm(xp):
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    return np.sqrt(np.sum(xp**2, axis=0)) if xp.ndim == 1 else np.sqrt(np.sum(xp**2, axis=-1))
