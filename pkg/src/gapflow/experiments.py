"""Sweep orchestration, rate fitting, invariant suite, reporting.

A sweep runs the two-disk configuration over a descending list of gap
widths, measures the gap quantities (gradient maxima, pressure
oscillation, Cauchy stress, coefficient gaps, balance-entry magnitudes,
Navier-Stokes vs Stokes differences), fits log-log slopes against eps and
compares them with the predicted blow-up rates. Balance-entry scalings are
fitted on the neck-localized energies: the divergent part of each diagonal
entry lives in the gap, while the full-domain entry carries an O(1) bulk
drag that masks the rate at reachable eps (both are recorded).

Grid sizing: n = next power of two >= cells_per_eps * box_size / eps,
clamped to max_n. Boundary data is selected by name; the built-in shear
excites the translation gap mode, and the default acceptance mix adds a
weak extensional and a parabolic-shear component so that every coefficient
gap is symmetry-allowed and measurable.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import keller_fields as kf
from . import rate_oracle as ro
from .geometry import GapGeometry, ProfileKind, Region, UnsupportedGeometryError
from .mac_grid import (Field, StaggeredGrid, advect, build_masks,
                       cauchy_stress_max, centerline_gradient, dot_faces,
                       gap_sample_mask, gradient_at_centers,
                       max_gradient_in_gap, pressure_gradient,
                       pressure_oscillation, velocity_divergence,
                       velocity_laplacian)
from .decomposition import (CELL_LABELS_2D, picard_navier_stokes,
                            solve_cell_problems, stokes_flow)
from .stokes_core import strain_energy_product

__all__ = ["RunConfig", "FitResult", "SweepRow", "SweepReport", "CheckReport",
           "fit_rate", "run_sweep", "invariant_suite", "phi_function",
           "write_sweep_csv", "write_sweep_json", "load_sweep_json",
           "FitError", "ConfigError"]

CSV_SCHEMA_VERSION = 1

# slope acceptance windows (center, halfwidth); gradient windows are tight,
# energy-integral windows coarser because penalization noise enters them
SLOPE_WINDOWS = {
    "gradient": (-0.5, 0.15),
    "centerline": (-0.5, 0.15),
    "pressure": (-0.5, 0.2),
    "coeff_gap_1": (0.5, 0.2),
    "coeff_gap_2": (1.5, 0.3),
    "coeff_gap_3": (0.5, 0.2),
    "entry_1": (-0.5, 0.3),
    "entry_2": (-1.5, 0.3),
    "entry_3": (-0.5, 0.3),
}
COEFF_GAP_DEGENERATE = 1e-12


class FitError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# boundary data
# ---------------------------------------------------------------------------

_MONOMIALS = {
    "1": lambda X, Y: np.ones_like(X),
    "x": lambda X, Y: X,
    "y": lambda X, Y: Y,
    "xx": lambda X, Y: X * X,
    "xy": lambda X, Y: X * Y,
    "yy": lambda X, Y: Y * Y,
}

def _table_phi(table: dict, scale: float) -> Callable:
    terms = []
    for key, (cu, cv) in table.items():
        if key not in _MONOMIALS:
            raise ConfigError(f"unknown monomial {key!r} in phi table")
        terms.append((_MONOMIALS[key], float(cu), float(cv)))

    def phi(X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        U = np.zeros_like(X)
        V = np.zeros_like(Y)
        for f, cu, cv in terms:
            m = f(X, Y)
            U += cu * m
            V += cv * m
        return scale * U, scale * V
    return phi


def phi_function(spec_: dict) -> Callable:
    """Boundary-data selector -> callable (X, Y) -> (U, V).

    kinds: 'shear_y' (vertical velocity sheared across x), 'mix' (shear plus
    weak extension and parabolic shear; the acceptance default), 'custom'
    (monomial table {key: [u_coeff, v_coeff]}).
    """
    kind = spec_.get("kind", "shear_y")
    scale = float(spec_.get("scale", 1.0))
    if kind == "shear_y":
        return _table_phi({"x": [0.0, 1.0]}, scale)
    if kind == "mix":
        # shear (0, x) + ext*(-x, y) extension + quad*(y^2, 0) parabolic shear
        ext = float(spec_.get("extension", 0.3))
        quad = float(spec_.get("parabolic", 0.3))
        return _table_phi({"x": [-ext, 1.0], "y": [0.0, ext],
                           "yy": [quad, 0.0]}, scale)
    if kind == "custom":
        table = spec_.get("table")
        if not isinstance(table, dict) or not table:
            raise ConfigError("custom phi needs a nonempty 'table'")
        return _table_phi(table, scale)
    raise ConfigError(f"unknown phi kind {kind!r}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    disk_radius: float = 1.0
    ball_radius: float = 4.0
    box_pad: float = 0.25
    R: float = 0.5
    mu: float = 1.0
    cells_per_eps: float = 6.0
    max_n: int = 2048
    tol: float = 1e-8
    eta: Optional[float] = None
    mode: str = "stokes"              # 'stokes' | 'navier_stokes'
    phi: dict = field(default_factory=lambda: {"kind": "mix", "scale": 0.15})
    r: float = 0.5
    margin_cells: int = 2
    picard_tol: float = 1e-8
    max_picard: int = 50
    theta: float = 0.7
    entry_radius: Optional[float] = None   # default 2R: neck-localized entries
    check_grid_convergence: bool = False
    out_dir: str = "."
    seed: int = 0

    def __post_init__(self):
        eps = list(self.eps_list)
        if any(not 0.0 < e < 0.5 for e in eps):
            raise ConfigError("every eps must lie in (0, 1/2)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be strictly decreasing")
        if self.mode not in ("stokes", "navier_stokes", "ns"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "ns":
            self.mode = "navier_stokes"

    @property
    def box(self) -> tuple:
        half = self.ball_radius + self.box_pad
        return (-half, half)

    def grid_n(self, eps: float) -> int:
        size = self.box[1] - self.box[0]
        want = self.cells_per_eps * size / eps
        n = 64
        while n < want and n < self.max_n:
            n *= 2
        return min(n, self.max_n)

    def geometry(self, eps: float) -> GapGeometry:
        return GapGeometry.unit_disks(eps, ball_radius=self.ball_radius,
                                      R=self.R, mu=self.mu) \
            if self.disk_radius == 1.0 else _scaled_disks(self, eps)

    def phi_callable(self) -> Callable:
        return phi_function(self.phi)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
        known = RunConfig.__dataclass_fields__.keys()
        bad = set(data) - set(known)
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return RunConfig(**data)


def _scaled_disks(cfg: RunConfig, eps: float) -> GapGeometry:
    from .geometry import Ball, GapProfile
    prof = GapProfile(ProfileKind.CIRCLE, radius=cfg.disk_radius)
    return GapGeometry(2, eps, prof, prof, R=cfg.R,
                       outer=Ball((0.0, 0.0), cfg.ball_radius), mu=cfg.mu)


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_rate(pairs) -> FitResult:
    """Least-squares line through (log eps, log value)."""
    pairs = [(float(e), float(v)) for e, v in pairs]
    if len(pairs) < 3:
        raise FitError("need at least 3 points to fit a rate")
    if any(v <= 0 for _, v in pairs):
        raise FitError("rate fitting needs positive values")
    x = np.log([e for e, _ in pairs])
    y = np.log([v for _, v in pairs])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return FitResult(float(coef[0]), float(coef[1]), min(r2, 1.0), len(pairs))


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

ROW_FIELDS = [
    "eps", "n", "max_gap_gradient", "centerline_gradient",
    "pressure_oscillation", "cauchy_stress_max",
    "coeff_gap_1", "coeff_gap_2", "coeff_gap_3",
    "entry_full_1", "entry_full_2", "entry_full_3",
    "entry_neck_1", "entry_neck_2", "entry_neck_3",
    "block11_min_eig", "conditioning", "ns_vs_stokes_gap",
    "picard_iterations", "neck_energy_defect",
    "solver_iterations", "runtime_seconds", "grid_converged",
]


@dataclass
class SweepRow:
    eps: float
    n: int = 0
    max_gap_gradient: float = math.nan
    centerline_gradient: float = math.nan
    pressure_oscillation: float = math.nan
    cauchy_stress_max: float = math.nan
    coeff_gap_1: float = math.nan
    coeff_gap_2: float = math.nan
    coeff_gap_3: float = math.nan
    entry_full_1: float = math.nan
    entry_full_2: float = math.nan
    entry_full_3: float = math.nan
    entry_neck_1: float = math.nan
    entry_neck_2: float = math.nan
    entry_neck_3: float = math.nan
    block11_min_eig: float = math.nan
    conditioning: float = math.nan
    ns_vs_stokes_gap: float = math.nan
    picard_iterations: int = 0
    neck_energy_defect: float = math.nan
    solver_iterations: int = 0
    runtime_seconds: float = math.nan
    grid_converged: str = "unchecked"
    error: str = ""


@dataclass
class SweepReport:
    config: RunConfig
    rows: list
    fits: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    skips: list = field(default_factory=list)
    partial: bool = False


def _neck_masks(geom: GapGeometry, grid: StaggeredGrid, r: float):
    X, Y = grid.cell_coords()
    rp = np.abs(X)
    top = geom.top_boundary(rp)
    bot = geom.bottom_boundary(rp)
    mc = (rp < r) & (Y < top) & (Y > bot)
    Xn, Yn = grid.node_coords()
    Xn, Yn = Xn[1:-1, 1:-1], Yn[1:-1, 1:-1]
    rpn = np.abs(Xn)
    mn = (rpn < r) & (Yn < geom.top_boundary(rpn)) & (Yn > geom.bottom_boundary(rpn))
    return mc, mn


def _aux_defect_energy(geom, grid, masks, fld, C, r, margin_cells, mu):
    """Gap energy of u minus its closed-form reconstruction sum(C v_aux)."""
    proxy = GapGeometry.quadratic(geom.eps, dimension=2,
                                  kappa=geom.profile_top.effective_curvature(),
                                  R=geom.R, mu=mu)
    w = fld.copy()
    xu, yu = grid.u_coords()
    xv, yv = grid.v_coords()
    for k, (i, alpha) in enumerate(CELL_LABELS_2D):
        f = kf.aux_field(proxy, i, alpha)
        pts_u = np.stack([xu, yu], axis=-1)
        pts_v = np.stack([xv, yv], axis=-1)
        vu = f.velocity(_clip_neck(proxy, pts_u))[..., 0]
        vv = f.velocity(_clip_neck(proxy, pts_v))[..., 1]
        w.u -= C[k] * vu
        w.v -= C[k] * vv
    mc, mn = _neck_masks(geom, grid, r)
    from scipy.ndimage import binary_erosion
    fluid = masks.region_c == int(Region.FLUID)
    er = binary_erosion(fluid, iterations=max(1, margin_cells))
    ern = er[:-1, :-1] & er[1:, :-1] & er[:-1, 1:] & er[1:, 1:]
    return strain_energy_product(grid, masks, w, w, 0.5,
                                 cell_mask=mc & er, node_mask=mn & ern)


def _clip_neck(proxy, pts):
    """Clamp points into the closed quadratic neck for field evaluation."""
    out = np.array(pts, dtype=float)
    rp = np.sqrt(out[..., 0] ** 2)
    rp = np.minimum(rp, 2 * proxy.R)
    out[..., 0] = np.sign(out[..., 0]) * rp
    top = proxy.top_boundary(rp)
    out[..., 1] = np.clip(out[..., 1], -top, top)
    return out


def run_case(cfg: RunConfig, eps: float, n: Optional[int] = None) -> SweepRow:
    """Solve one eps: Stokes always, Navier-Stokes when configured."""
    t0 = time.time()
    row = SweepRow(eps=eps)
    n = cfg.grid_n(eps) if n is None else n
    row.n = n
    geom = cfg.geometry(eps)
    grid = StaggeredGrid(cfg.box[0], cfg.box[1], n)
    masks = build_masks(geom, grid)
    phi = cfg.phi_callable()
    fld, sys_, cells = stokes_flow(geom, grid, masks, phi, tol=cfg.tol,
                                   eta=cfg.eta)
    # mirrored cell solutions share stats; count each solve once
    row.solver_iterations = sum(
        {id(c.stats): c.stats.outer_iterations for c in cells}.values())
    row.max_gap_gradient = max_gradient_in_gap(geom, grid, masks, fld, cfg.r,
                                               cfg.margin_cells)
    row.centerline_gradient = centerline_gradient(geom, grid, masks, fld,
                                                  cfg.margin_cells)
    row.pressure_oscillation = pressure_oscillation(geom, grid, masks, fld.p,
                                                    cfg.r, cfg.margin_cells)
    row.cauchy_stress_max = cauchy_stress_max(geom, grid, masks, fld, cfg.r,
                                              cfg.margin_cells)
    gaps = sys_.coefficient_gaps()
    row.coeff_gap_1, row.coeff_gap_2, row.coeff_gap_3 = map(float, gaps)
    diag = np.diag(sys_.a)
    row.entry_full_1, row.entry_full_2, row.entry_full_3 = map(float, diag[:3])
    r_entry = cfg.entry_radius if cfg.entry_radius is not None else 2 * cfg.R
    mc, mn = _neck_masks(geom, grid, r_entry)
    for k in range(3):
        val = strain_energy_product(grid, masks, cells[k].field, cells[k].field,
                                    cfg.mu, cell_mask=mc, node_mask=mn)
        setattr(row, f"entry_neck_{k+1}", float(val))
    row.block11_min_eig = float(np.linalg.eigvalsh(sys_.block11()).min())
    row.conditioning = float(sys_.conditioning)
    row.neck_energy_defect = float(_aux_defect_energy(
        geom, grid, masks, fld, sys_.C, cfg.r, cfg.margin_cells, cfg.mu))
    if cfg.mode == "navier_stokes":
        ns = picard_navier_stokes(geom, grid, masks, phi, tol=cfg.picard_tol,
                                  max_picard=cfg.max_picard, theta=cfg.theta,
                                  solver_tol=min(cfg.tol, 1e-9), eta=cfg.eta,
                                  cells=cells)
        row.picard_iterations = ns.picard_iterations
        diff = Field(grid, fld.u - ns.field.u, fld.v - ns.field.v,
                     fld.p - ns.field.p)
        row.ns_vs_stokes_gap = max_gradient_in_gap(geom, grid, masks, diff,
                                                   cfg.r, cfg.margin_cells)
    row.runtime_seconds = time.time() - t0
    return row


def run_sweep(cfg: RunConfig, progress: Optional[Callable] = None) -> SweepReport:
    rows = []
    partial = False
    for eps in cfg.eps_list:
        try:
            row = run_case(cfg, eps)
        except Exception as e:  # per-eps failures recorded, sweep continues
            row = SweepRow(eps=eps, error=f"{type(e).__name__}: {e}")
            partial = True
        rows.append(row)
        if progress:
            progress(row)
    if cfg.check_grid_convergence and rows and not rows[0].error:
        try:
            fine = run_case(cfg, cfg.eps_list[0], n=2 * rows[0].n)
            ref = rows[0].centerline_gradient
            rel = abs(fine.centerline_gradient - ref) / max(abs(ref), 1e-300)
            rows[0].grid_converged = ("yes" if rel < 0.05 else
                                      f"no ({rel:.3f})")
        except Exception as e:
            rows[0].grid_converged = f"check failed: {type(e).__name__}"
    report = SweepReport(config=cfg, rows=rows, partial=partial)
    _fit_and_judge(report)
    return report


def _fit_and_judge(report: SweepReport):
    rows = [r for r in report.rows if not r.error]
    if len(rows) < 3:
        report.verdicts["fits"] = "skipped: fewer than 3 successful rows"
        return
    eps = [r.eps for r in rows]
    fits, verdicts, skips = report.fits, report.verdicts, report.skips

    def judge(name, values, window_key, flip=False):
        try:
            fr = fit_rate(list(zip(eps, values)))
        except FitError as e:
            verdicts[name] = f"skipped: {e}"
            return None
        fits[name] = fr
        center, hw = SLOPE_WINDOWS[window_key]
        ok = abs(fr.slope - center) <= hw
        verdicts[name] = ("pass" if ok else
                          f"fail: slope {fr.slope:+.3f} outside {center}+-{hw}")
        return fr

    judge("gradient", [r.max_gap_gradient for r in rows], "gradient")
    judge("centerline", [r.centerline_gradient for r in rows], "centerline")
    ratio_ok = all(r.centerline_gradient >= r.max_gap_gradient / 10.0
                   for r in rows)
    verdicts["centerline_within_factor_10"] = "pass" if ratio_ok else "fail"
    judge("pressure", [r.pressure_oscillation for r in rows], "pressure")
    fits["cauchy_stress"] = fit_rate([(r.eps, r.cauchy_stress_max) for r in rows])

    for a in (1, 2, 3):
        vals = [getattr(r, f"coeff_gap_{a}") for r in rows]
        if max(vals) < COEFF_GAP_DEGENERATE:
            skips.append(f"coeff_gap_{a}: degenerate by symmetry "
                         f"(max {max(vals):.2e} < {COEFF_GAP_DEGENERATE:g})")
            verdicts[f"coeff_gap_{a}"] = "skipped: degenerate by symmetry"
            continue
        judge(f"coeff_gap_{a}", vals, f"coeff_gap_{a}")
    for a in (1, 2, 3):
        judge(f"entry_neck_{a}", [getattr(r, f"entry_neck_{a}") for r in rows],
              f"entry_{a}")
        fits[f"entry_full_{a}"] = fit_rate(
            [(r.eps, getattr(r, f"entry_full_{a}")) for r in rows])
    pd_ok = all(r.block11_min_eig > 0 for r in rows)
    verdicts["block11_positive_definite"] = "pass" if pd_ok else "fail"

    grads = [r.max_gap_gradient for r in rows]
    mono = all(b > a for a, b in zip(grads, grads[1:]))
    verdicts["gradient_monotone"] = "pass" if mono else "fail"
    growth = grads[-1] / grads[0]
    verdicts["gradient_growth"] = ("pass" if growth >= 2.5 else
                                   f"fail: growth {growth:.2f}x < 2.5x")

    defects = [r.neck_energy_defect for r in rows]
    if all(v > 0 for v in defects):
        fr = fit_rate(list(zip(eps, defects)))
        fits["neck_energy_defect"] = fr
        verdicts["energy_bounded"] = ("pass" if fr.slope > -0.25 else
                                      f"fail: defect grows, slope {fr.slope:+.3f}")

    if report.config.mode == "navier_stokes":
        nsvals = [r.ns_vs_stokes_gap for r in rows]
        if all(np.isfinite(v) for v in nsvals):
            ratio = max(nsvals) / max(min(nsvals), 1e-300)
            verdicts["ns_gap_bounded"] = ("pass" if ratio < 3.0 else
                                          f"fail: max/min {ratio:.2f} >= 3")
            pic_ok = all(r.picard_iterations <= report.config.max_picard
                         for r in rows)
            verdicts["picard_converged"] = "pass" if pic_ok else "fail"


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def write_sweep_csv(report: SweepReport, path):
    lines = [",".join(["schema_version"] + ROW_FIELDS)]
    for r in report.rows:
        vals = [str(CSV_SCHEMA_VERSION)]
        for k in ROW_FIELDS:
            v = getattr(r, k)
            if isinstance(v, float):
                vals.append(f"{v:.17g}")
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_sweep_json(report: SweepReport, path):
    data = {
        "schema_version": CSV_SCHEMA_VERSION,
        "config": asdict(report.config),
        "rows": [asdict(r) for r in report.rows],
        "fits": {k: asdict(v) for k, v in report.fits.items()},
        "verdicts": report.verdicts,
        "skips": report.skips,
        "partial": report.partial,
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def load_sweep_json(path) -> SweepReport:
    with open(path) as f:
        data = json.load(f)
    cfg = RunConfig(**data["config"])
    rows = [SweepRow(**r) for r in data["rows"]]
    rep = SweepReport(config=cfg, rows=rows,
                      fits={k: FitResult(**v) for k, v in data["fits"].items()},
                      verdicts=data["verdicts"], skips=data["skips"],
                      partial=data["partial"])
    return rep


def refit_report(report: SweepReport) -> SweepReport:
    report.fits.clear()
    report.verdicts.clear()
    report.skips.clear()
    _fit_and_judge(report)
    return report


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------

@dataclass
class CheckEntry:
    name: str
    status: str          # 'ok' | 'fail' | 'skipped'
    worst: float = math.nan
    detail: str = ""


@dataclass
class CheckReport:
    entries: list

    @property
    def all_passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    def to_json(self) -> str:
        return json.dumps({"entries": [asdict(e) for e in self.entries],
                           "all_passed": self.all_passed}, indent=2)


def _sample_neck(geom, rng, count, rmax_frac=0.9, depth=0.45):
    d = geom.dimension
    pts = np.empty((count, d))
    rp = rng.uniform(-rmax_frac, rmax_frac, size=(count, d - 1)) * geom.R
    pts[:, :-1] = rp
    rr = np.sqrt(np.sum(rp**2, axis=1))
    delta = geom.gap_width_unchecked(rr)
    pts[:, -1] = rng.uniform(-depth, depth, size=count) * delta
    return pts


def invariant_suite(geoms: Optional[list] = None, seed: int = 0) -> CheckReport:
    """Field-level and operator-level property checks, deterministic in seed."""
    rng = np.random.default_rng(seed)
    entries: list = []
    if geoms is None:
        geoms = [GapGeometry.quadratic(0.05, dimension=2),
                 GapGeometry.quadratic(0.05, dimension=3)]

    for geom in geoms:
        tag = f"d{geom.dimension}"
        try:
            kappa = geom.quadratic_curvature()
        except UnsupportedGeometryError:
            entries.append(CheckEntry(f"{tag} gap fields", "skipped",
                                      detail="unsupported geometry (non-quadratic)"))
            continue
        is_unit = abs(kappa - 1.0) < 1e-14
        tag = f"d{geom.dimension} kappa={kappa:g}"
        nm = kf.mode_count(geom.dimension)
        fields = [kf.aux_field(geom, i, a)
                  for i in (1, 2) for a in range(1, nm + 1)]

        worst = 0.0
        for f in fields:
            pts = _sample_neck(geom, rng, 1000)
            rp = np.sqrt(np.sum(pts[:, :-1] ** 2, axis=1))
            dd = geom.gap_width_unchecked(rp)
            for sgn, own in ((1.0, f.particle == 1), (-1.0, f.particle == 2)):
                b = pts.copy()
                b[:, -1] = sgn * dd / 2
                vb = f.velocity(b)
                tgt = f.psi.evaluate(b) if own else np.zeros_like(vb)
                worst = max(worst, float(np.abs(vb - tgt).max()))
        entries.append(_judged(f"{tag} boundary traces", worst, 1e-12))

        if not is_unit:
            entries.append(CheckEntry(f"{tag} divergence/gradient/residual",
                                      "skipped", detail="unsupported (kappa != 1)"))
            continue

        worst = 0.0
        for f in fields:
            pts = _sample_neck(geom, rng, 1000)
            G = f.grad_velocity(pts)
            worst = max(worst, float(np.abs(np.trace(G, axis1=-2, axis2=-1)).max()))
        entries.append(_judged(f"{tag} divergence-free", worst, 1e-10))

        worst = 0.0
        for f in fields:
            pts = _sample_neck(geom, rng, 60, rmax_frac=0.7, depth=0.35)
            for x in pts:
                rp = float(np.sqrt(np.sum(x[:-1] ** 2)))
                h = 1e-6 * geom.gap_width_unchecked(rp)
                G = f.grad_velocity(x)
                Gfd = _fd_grad(f, x, h)
                worst = max(worst, float(np.abs(G - Gfd).max()
                                         / max(np.abs(G).max(), 1.0)))
        entries.append(_judged(f"{tag} gradient vs finite differences", worst, 1e-6))

        worst = 0.0
        pts = _sample_neck(geom, rng, 500)
        for x in pts:
            rp2 = float(np.sum(x[:-1] ** 2))
            dd = geom.eps + rp2
            k0 = x[-1] / dd
            h = 1e-7
            for j in range(geom.dimension - 1):
                e = np.zeros(geom.dimension)
                e[j] = h
                fd = (kf.keller(geom, x + e) - kf.keller(geom, x - e)) / (2 * h)
                worst = max(worst, abs(fd - (-2.0 * x[j] * k0 / dd)))
            e = np.zeros(geom.dimension)
            e[-1] = h
            fd = (kf.keller(geom, x + e) - kf.keller(geom, x - e)) / (2 * h)
            worst = max(worst, abs(fd - 1.0 / dd))
        entries.append(_judged(f"{tag} keller derivative identities", worst, 1e-6))

        worst = 0.0
        flip = np.ones(geom.dimension)
        flip[-1] = -1.0
        for a in range(1, geom.dimension + 1):
            f1 = kf.aux_field(geom, 1, a)
            f2 = kf.aux_field(geom, 2, a)
            pts = _sample_neck(geom, rng, 300)
            s = kf._MIRROR_SIGN_2D[a] if geom.dimension == 2 else kf._MIRROR_SIGN_3D[a]
            v2 = f2.velocity(pts)
            v1m = f1.velocity(pts * flip) * flip * s
            worst = max(worst, float(np.abs(v2 - v1m).max()))
        entries.append(_judged(f"{tag} mirror symmetry of particle-2 fields",
                               worst, 1e-12))

        vert = 3 if geom.dimension == 3 else 2
        for i in (1, 2):
            f = kf.aux_field(geom, i, vert)
            pts = _sample_neck(geom, rng, 1000)
            worst = float(max(abs(kf.vertical_cancellation(f, x)) for x in pts))
            entries.append(_judged(
                f"{tag} vertical cancellation identity (i={i})", worst, 1e-9))

    entries.extend(_residual_stability_checks(rng))
    entries.extend(_grid_operator_checks(rng))
    entries.extend(_oracle_checks())
    return CheckReport(entries)


def _judged(name, worst, tol) -> CheckEntry:
    return CheckEntry(name, "ok" if worst < tol else "fail", float(worst),
                      f"tolerance {tol:g}")


def _fd_grad(f, x, h):
    d = len(x)
    out = np.zeros((d, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = h
        out[:, c] = (f.velocity(x + e) - f.velocity(x - e)) / (2 * h)
    return out


def residual_ratio_grid(dimension: int, particle: int, mode: int, eps: float,
                        samples: int = 9, depths=(-0.25, 0.0, 0.25)) -> float:
    """Max normalized residual ratio over a grid in the half-neck."""
    geom = GapGeometry.quadratic(eps, dimension=dimension)
    f = kf.aux_field(geom, particle, mode)
    half = geom.R / 2
    xs = np.linspace(-half, half, samples)
    worst = 0.0
    coords = [xs] * (dimension - 1)
    mesh = np.meshgrid(*coords, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=-1)
    for xp in flat:
        rp = float(np.sqrt(np.sum(xp**2)))
        dd = geom.gap_width_unchecked(rp)
        for frac in depths:
            x = np.concatenate([xp, [frac * dd]])
            rs = kf.stokes_residual(f, x, step=1e-3 * dd)
            worst = max(worst, rs.normalized_ratio)
    return worst


def _residual_stability_checks(rng) -> list:
    out = []
    r1 = residual_ratio_grid(3, 1, 3, 1e-2)
    r2 = residual_ratio_grid(3, 1, 3, 1e-3)
    ratio = max(r1, r2) / max(min(r1, r2), 1e-300)
    out.append(CheckEntry("3D vertical-mode residual ratio stability",
                          "ok" if ratio < 2.0 else "fail", float(ratio),
                          f"ratios {r1:.3f} / {r2:.3f} across eps 1e-2, 1e-3"))
    r1 = residual_ratio_grid(2, 1, 1, 1e-2)
    r2 = residual_ratio_grid(2, 1, 1, 1e-3)
    ratio = max(r1, r2) / max(min(r1, r2), 1e-300)
    out.append(CheckEntry("2D translation residual ratio stability",
                          "ok" if ratio < 2.0 else "fail", float(ratio),
                          f"ratios {r1:.3f} / {r2:.3f}"))
    return out


def _grid_operator_checks(rng) -> list:
    out = []
    n = 64
    grid = StaggeredGrid(0.0, 1.0, n)
    u = rng.standard_normal((n + 1, n))
    v = rng.standard_normal((n, n + 1))
    u[0, :] = u[-1, :] = 0.0
    v[:, 0] = v[:, -1] = 0.0
    p = rng.standard_normal((n, n))
    div = velocity_divergence(grid, u, v)
    gu, gv = pressure_gradient(grid, p)
    lhs = float(np.sum(div * p) * grid.h**2)
    rhs = -float((np.sum(u * gu) + np.sum(v * gv)) * grid.h**2)
    worst = abs(lhs - rhs) / max(abs(lhs), 1.0)
    out.append(_judged("discrete div/grad adjointness", worst, 1e-12))

    psi = rng.standard_normal((n + 1, n + 1))
    psi[:2, :] = psi[-2:, :] = psi[:, :2] = psi[:, -2:] = 0.0
    au = (psi[:, 1:] - psi[:, :-1]) / grid.h
    av = -(psi[1:, :] - psi[:-1, :]) / grid.h
    wu = rng.standard_normal(au.shape)
    wv = rng.standard_normal(av.shape)
    for w in (wu, wv):
        w[:3, :] = w[-3:, :] = 0.0
        w[:, :3] = w[:, -3:] = 0.0
    a = Field(grid, au, av, np.zeros((n, n)))
    b = Field(grid, wu, wv, np.zeros((n, n)))
    cu, cv = advect(grid, None, a, b)
    t = dot_faces(grid, cu, cv, wu, wv)
    scale = (np.abs(au).max() + np.abs(av).max()) * dot_faces(grid, wu, wv, wu, wv)
    out.append(_judged("advection skew symmetry", abs(t) / max(scale, 1e-300), 1e-12))

    errs = []
    for nn in (32, 64, 128):
        gg = StaggeredGrid(0.0, 1.0, nn)
        xu, yu = gg.u_coords()
        w = np.sin(np.pi * xu) * np.sin(np.pi * yu)
        lap = velocity_laplacian(gg, w, "u")
        exact = -2 * np.pi**2 * w
        errs.append(np.abs((lap - exact))[1:-1, 2:-2].max())
    order = float(np.log2(errs[0] / errs[1]))
    order2 = float(np.log2(errs[1] / errs[2]))
    ok = min(order, order2) >= 1.9
    out.append(CheckEntry("laplacian consistency order", "ok" if ok else "fail",
                          min(order, order2), f"orders {order:.2f}, {order2:.2f}"))
    return out


def _oracle_checks() -> list:
    out = []
    worst = 0.0
    spots = [
        (ro.predicted_upper(ro.Quantity.GRAD_U, 2, 0.01), 10.0),
        (ro.predicted_upper(ro.Quantity.GRAD_U, 3, 0.01), 21.71472409516259),
        (ro.predicted_upper(ro.Quantity.PRESSURE_OSC, 2, 0.04), 5.0),
        (ro.predicted_lower(3, 0.01), 21.71472409516259),
        (ro.predicted_lower(2, 0.25), 2.0),
        (ro.predicted_scaling(ro.Quantity.COEFF_GAP, 2, 2, 0.01), 0.001),
        (ro.predicted_scaling(ro.Quantity.MATRIX_ENTRY, 2, (2, 2), 0.01), 1000.0),
        (ro.predicted_scaling(ro.Quantity.COEFF_GAP, 3, 3, 0.05), 0.05),
    ]
    for got, want in spots:
        worst = max(worst, abs(got - want) / abs(want))
    out.append(_judged("rate formula spot values", worst, 1e-4))

    worst = 0.0
    for dim in (2, 3):
        for q in (ro.Quantity.GRAD_U, ro.Quantity.PRESSURE_OSC,
                  ro.Quantity.GRAD2U_GRADP, ro.Quantity.CAUCHY_STRESS):
            pred = ro.prediction(q, dim)
            es = [2.0 ** (-k) for k in range(78, 85)]
            fr = fit_rate([(e, pred(e)) for e in es])
            worst = max(worst, abs(fr.slope - pred.epsilon_exponent))
        for a in range(1, 4 if dim == 2 else 7):
            for q in (ro.Quantity.COEFF_GAP, ro.Quantity.MATRIX_ENTRY):
                pred = ro.prediction(q, dim, a)
                es = [2.0 ** (-k) for k in range(78, 85)]
                vals = [(e, pred(e)) for e in es]
                if any(v <= 0 for _, v in vals):
                    continue
                fr = fit_rate(vals)
                worst = max(worst, abs(fr.slope - pred.epsilon_exponent))
    out.append(_judged("rate exponents vs log-log fits", worst, 0.02))
    return out
