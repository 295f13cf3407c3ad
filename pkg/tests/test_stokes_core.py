import os

import numpy as np
import pytest

from gapflow.geometry import GapGeometry
from gapflow.mac_grid import Field, StaggeredGrid, build_masks, max_gradient_in_gap
from gapflow.stokes_core import (NonConvergenceError, PenalizedProblem,
                                 collar_flux, solve_stokes,
                                 strain_energy_product)
from gapflow.decomposition import build_collar_target, build_rigid_target


def couette_problem(n=128, lid=1.0):
    grid = StaggeredGrid(0.0, 1.0, n)
    masks = build_masks(None, grid)
    tgt = Field.zeros(grid)
    _, yu = grid.u_coords()
    # side data follows the exact shear profile so the linear solution is
    # the solution of the boundary-value problem (plain zero side walls
    # would give a lid-driven cavity instead)
    tgt.u[0, :] = lid * yu[0, :]
    tgt.u[-1, :] = lid * yu[-1, :]
    prob = PenalizedProblem(grid, masks, mu=1.0, u_target=tgt,
                            wall_u=(0.0, lid))
    return grid, masks, prob


class TestCouette:
    def test_exact_linear_shear(self):
        grid, masks, prob = couette_problem(128)
        fld, stats = solve_stokes(prob, tol=1e-10)
        _, yu = grid.u_coords()
        assert np.abs(fld.u - yu).max() < 1e-6
        assert np.abs(fld.v).max() < 1e-6
        assert stats.momentum_residual <= 1e-10
        assert stats.divergence_residual <= 1e-10

    def test_zero_data_zero_solution(self):
        grid = StaggeredGrid(0.0, 1.0, 64)
        masks = build_masks(None, grid)
        prob = PenalizedProblem(grid, masks, mu=1.0)
        fld, stats = solve_stokes(prob, tol=1e-10)
        assert np.abs(fld.u).max() < 1e-12
        assert np.abs(fld.v).max() < 1e-12


class TestPenalization:
    def test_eta_cap_enforced(self):
        grid = StaggeredGrid(0.0, 1.0, 64)
        masks = build_masks(None, grid)
        with pytest.raises(ValueError):
            PenalizedProblem(grid, masks, mu=1.0, eta=1e-3)

    def test_default_eta_tracks_grid(self):
        grid = StaggeredGrid(0.0, 1.0, 64)
        masks = build_masks(None, grid)
        prob = PenalizedProblem(grid, masks, mu=1.0)
        assert prob.eta <= 1e-6 * grid.h**2

    def test_boundary_conformance_below_sqrt_eta(self):
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        tgt = build_rigid_target(grid, masks, 1, 1)
        prob = PenalizedProblem(grid, masks, mu=1.0, u_target=tgt)
        fld, _ = solve_stokes(prob, tol=1e-8)
        mu_ = masks.region_u == 1
        err = np.abs(fld.u - tgt.u)[mu_].mean()
        assert err < 10 * np.sqrt(prob.eta)

    def test_eta_robustness(self):
        # halving eta changes the measured gap gradient by well under 1%
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        tgt = build_rigid_target(grid, masks, 1, 1)
        vals = []
        for eta in (1e-12, 5e-13):
            prob = PenalizedProblem(grid, masks, mu=1.0, eta=eta, u_target=tgt)
            fld, _ = solve_stokes(prob, tol=1e-9)
            vals.append(max_gradient_in_gap(geom, grid, masks, fld, 0.5))
        assert abs(vals[0] - vals[1]) / vals[0] < 0.01


class TestCompatibility:
    def test_compatible_targets_pass(self):
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        tgt = build_collar_target(grid, masks, lambda X, Y: (Y, np.zeros_like(X)))
        flux, per = collar_flux(grid, masks, tgt)
        assert per > 0
        assert abs(flux) < 1e-10 * per

    def test_incompatible_targets_rejected(self):
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        # net outflow: phi = (x, y)/4 has positive divergence
        tgt = build_collar_target(grid, masks, lambda X, Y: (X / 4, Y / 4))
        with pytest.raises(ValueError, match="compatibility"):
            PenalizedProblem(grid, masks, mu=1.0, u_target=tgt)


class TestStrainEnergy:
    def test_rigid_motion_is_strain_free(self):
        grid = StaggeredGrid(0.0, 1.0, 64)
        masks = build_masks(None, grid)
        f = Field.zeros(grid)
        xu, yu = grid.u_coords()
        xv, yv = grid.v_coords()
        f.u[:] = yu
        f.v[:] = -xv
        assert abs(strain_energy_product(grid, masks, f, f, 1.0)) < 1e-20

    def test_crossed_shears_unit_box(self):
        # e((y,0)) : e((0,x)) = 1/2 pointwise; 2*mu*integral = 1 on unit box
        grid = StaggeredGrid(0.0, 1.0, 64)
        masks = build_masks(None, grid)
        a = Field.zeros(grid)
        b = Field.zeros(grid)
        _, yu = grid.u_coords()
        xv, _ = grid.v_coords()
        a.u[:] = yu
        b.v[:] = xv
        val = strain_energy_product(grid, masks, a, b, 1.0)
        # interior-node quadrature misses the boundary ring: O(h) defect
        assert val == pytest.approx(1.0, rel=0.05)
        assert strain_energy_product(grid, masks, b, a, 1.0) == pytest.approx(val)

    def test_symmetry_random_fields(self):
        grid = StaggeredGrid(0.0, 1.0, 32)
        masks = build_masks(None, grid)
        rng = np.random.default_rng(9)
        a = Field(grid, rng.standard_normal((33, 32)),
                  rng.standard_normal((32, 33)), np.zeros((32, 32)))
        b = Field(grid, rng.standard_normal((33, 32)),
                  rng.standard_normal((32, 33)), np.zeros((32, 32)))
        ab = strain_energy_product(grid, masks, a, b, 2.0)
        ba = strain_energy_product(grid, masks, b, a, 2.0)
        assert ab == pytest.approx(ba, rel=1e-14)


class TestSolverPaths:
    def test_numpy_reference_path_matches(self, monkeypatch):
        from gapflow import stokes_core
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        tgt = build_rigid_target(grid, masks, 1, 2)
        prob = PenalizedProblem(grid, masks, mu=1.0, u_target=tgt)
        fld_fast, _ = solve_stokes(prob, tol=1e-9)
        monkeypatch.setattr(stokes_core, "_HAS_NUMBA", False)
        stokes_core._solver_cache.clear()
        fld_ref, _ = solve_stokes(prob, tol=1e-9)
        stokes_core._solver_cache.clear()
        assert np.abs(fld_fast.u - fld_ref.u).max() < 1e-8
        assert np.abs(fld_fast.v - fld_ref.v).max() < 1e-8

    def test_nonconvergence_carries_stats(self):
        geom = GapGeometry.unit_disks(0.2)
        grid = StaggeredGrid(-4.25, 4.25, 256)
        masks = build_masks(geom, grid)
        tgt = build_rigid_target(grid, masks, 1, 1)
        prob = PenalizedProblem(grid, masks, mu=1.0, u_target=tgt)
        with pytest.raises(NonConvergenceError) as ei:
            solve_stokes(prob, tol=1e-8, max_iter=20)
        assert ei.value.stats is not None
        assert ei.value.stats.outer_iterations <= 40
