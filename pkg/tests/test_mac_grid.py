import numpy as np
import pytest

from gapflow.geometry import GapGeometry, Region
from gapflow.mac_grid import (Field, ResolutionError, StaggeredGrid, advect,
                              build_masks, centerline_gradient, dot_faces,
                              export_field_csv, gap_sample_mask,
                              gradient_at_centers, max_gradient_in_gap,
                              pressure_gradient, pressure_oscillation,
                              velocity_divergence, velocity_laplacian)


def lower_bound_setup(eps, n):
    geom = GapGeometry.unit_disks(eps)
    grid = StaggeredGrid(-4.25, 4.25, n)
    return geom, grid, build_masks(geom, grid)


def stream_function_field(grid, rng):
    """Discretely divergence-free velocity from a random stream function."""
    n = grid.n
    psi = rng.standard_normal((n + 1, n + 1))
    psi[:2, :] = psi[-2:, :] = psi[:, :2] = psi[:, -2:] = 0.0
    u = (psi[:, 1:] - psi[:, :-1]) / grid.h
    v = -(psi[1:, :] - psi[:-1, :]) / grid.h
    return u, v


class TestGridAndMasks:
    def test_square_cells_and_min_size(self):
        g = StaggeredGrid(0.0, 1.0, 32)
        assert g.h == pytest.approx(1 / 32)
        with pytest.raises(ValueError):
            StaggeredGrid(0.0, 1.0, 8)

    def test_empty_box_all_fluid(self):
        g = StaggeredGrid(0.0, 1.0, 32)
        m = build_masks(None, g)
        assert m.fluid_u[1:-1, :].all()
        assert m.fluid_v[:, 1:-1].all()
        assert m.active_c.all()
        assert m.fluid_cell_count == 32 * 32

    def test_gap_column_face_count(self):
        # unit disks, eps=0.1, n=512: at least 6 fluid v-faces across the gap
        geom, grid, m = lower_bound_setup(0.1, 512)
        xv, yv = grid.v_coords()
        col = np.argmin(np.abs(grid.centers()))
        in_gap = m.fluid_v[col, :] & (np.abs(yv[col, :]) < 0.05)
        assert int(in_gap.sum()) >= 6
        assert int(in_gap.sum()) >= int(0.1 / grid.h) - 1

    def test_unresolved_gap_raises(self):
        geom = GapGeometry.unit_disks(0.1)
        grid = StaggeredGrid(-4.25, 4.25, 32)
        with pytest.raises(ResolutionError):
            build_masks(geom, grid)

    def test_margin_requirement(self):
        geom = GapGeometry.unit_disks(0.1)
        grid = StaggeredGrid(-4.01, 4.01, 512)
        with pytest.raises(ResolutionError):
            build_masks(geom, grid)

    def test_every_face_labeled_once(self):
        _, _, m = lower_bound_setup(0.2, 256)
        for codes in (m.region_u, m.region_v, m.region_c):
            assert set(np.unique(codes)) <= {0, 1, 2, 3}


class TestOperators:
    def test_div_grad_adjointness(self):
        g = StaggeredGrid(0.0, 1.0, 48)
        rng = np.random.default_rng(0)
        u = rng.standard_normal((49, 48))
        v = rng.standard_normal((48, 49))
        u[0, :] = u[-1, :] = 0.0
        v[:, 0] = v[:, -1] = 0.0
        p = rng.standard_normal((48, 48))
        div = velocity_divergence(g, u, v)
        gu, gv = pressure_gradient(g, p)
        lhs = np.sum(div * p) * g.h**2
        rhs = -(np.sum(u * gu) + np.sum(v * gv)) * g.h**2
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_laplacian_consistency_order(self):
        errs = []
        for n in (32, 64, 128):
            g = StaggeredGrid(0.0, 1.0, n)
            xu, yu = g.u_coords()
            w = np.sin(np.pi * xu) * np.sin(np.pi * yu)
            lap = velocity_laplacian(g, w, "u")
            err = np.abs(lap + 2 * np.pi**2 * w)[1:-1, 2:-2].max()
            errs.append(err)
        orders = [np.log2(errs[k] / errs[k + 1]) for k in range(2)]
        assert min(orders) >= 1.9


class TestAdvect:
    def test_zero_velocity(self):
        g = StaggeredGrid(0.0, 1.0, 32)
        z = Field.zeros(g)
        cu, cv = advect(g, None, z, z)
        assert not cu.any() and not cv.any()

    def test_skew_symmetry_random(self):
        g = StaggeredGrid(0.0, 1.0, 64)
        rng = np.random.default_rng(4)
        for _ in range(5):
            au, av = stream_function_field(g, rng)
            wu = rng.standard_normal(au.shape)
            wv = rng.standard_normal(av.shape)
            for w in (wu, wv):
                w[:3, :] = w[-3:, :] = w[:, :3] = w[:, -3:] = 0.0
            a = Field(g, au, av, np.zeros((64, 64)))
            b = Field(g, wu, wv, np.zeros((64, 64)))
            cu, cv = advect(g, None, a, b)
            t = dot_faces(g, cu, cv, wu, wv)
            scale = (np.abs(au).max() + np.abs(av).max()) \
                * dot_faces(g, wu, wv, wu, wv)
            assert abs(t) <= 1e-12 * scale

    def test_uniform_transport_of_linear_field(self):
        # a = (1, 0) advecting b linear in x: exact derivative recovered
        g = StaggeredGrid(0.0, 1.0, 64)
        a = Field.zeros(g)
        a.u[:] = 1.0
        b = Field.zeros(g)
        xu, _ = g.u_coords()
        b.u[:] = 0.25 + 3.0 * xu
        cu, cv = advect(g, None, a, b)
        assert np.abs(cu[2:-2, :] - 3.0).max() < 1e-12
        assert np.abs(cv[:, 2:-2]).max() < 1e-12


class TestMeasurements:
    def test_couette_gradient_is_one(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        f = Field.zeros(grid)
        _, yu = grid.u_coords()
        f.u[:] = yu
        assert max_gradient_in_gap(geom, grid, m, f, 0.5) == pytest.approx(1.0)

    def test_rigid_rotation_reports_unit_component(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        f = Field.zeros(grid)
        xu, yu = grid.u_coords()
        xv, yv = grid.v_coords()
        f.u[:] = yu
        f.v[:] = -xv
        # components are +-1; the max-abs-component convention reports 1.0
        assert max_gradient_in_gap(geom, grid, m, f, 0.5) == pytest.approx(1.0)

    def test_centerline_subset_of_gap(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        f = Field.zeros(grid)
        _, yu = grid.u_coords()
        f.u[:] = yu**2
        c = centerline_gradient(geom, grid, m, f)
        g = max_gradient_in_gap(geom, grid, m, f, 0.5)
        assert c <= g + 1e-14

    def test_pressure_oscillation_shift_invariant(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        p = np.random.default_rng(1).standard_normal((256, 256))
        a = pressure_oscillation(geom, grid, m, p, 0.5)
        b = pressure_oscillation(geom, grid, m, p + 17.3, 0.5)
        assert a == pytest.approx(b)

    def test_margin_excludes_boundary_cells(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        wide = gap_sample_mask(geom, grid, m, 0.5, margin_cells=0)
        tight = gap_sample_mask(geom, grid, m, 0.5, margin_cells=2)
        assert tight.sum() < wide.sum()
        assert (wide | tight).sum() == wide.sum()

    def test_sample_radius_validation(self):
        geom, grid, m = lower_bound_setup(0.2, 256)
        with pytest.raises(ValueError):
            gap_sample_mask(geom, grid, m, 1.5)


class TestExport:
    def test_csv_roundtrip(self, tmp_path):
        g = StaggeredGrid(0.0, 1.0, 16)
        f = Field.zeros(g)
        f.p[:] = 3.25
        path = tmp_path / "field.csv"
        export_field_csv(f, path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape == (256, 5)
        assert np.allclose(data[:, 4], 3.25)
