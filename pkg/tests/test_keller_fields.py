import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapflow.geometry import GapGeometry, OutOfNeckError, UnsupportedGeometryError
from gapflow.keller_fields import (aux_field, divergence, keller, mode_count,
                                   rigid_modes, stokes_residual,
                                   vertical_cancellation)


def geom2(eps=0.1, kappa=1.0):
    return GapGeometry.quadratic(eps, dimension=2, kappa=kappa)


def geom3(eps=0.1, kappa=1.0):
    return GapGeometry.quadratic(eps, dimension=3, kappa=kappa)


def sample_neck(geom, rng, count, rfrac=0.8, depth=0.45):
    d = geom.dimension
    pts = np.empty((count, d))
    pts[:, :-1] = rng.uniform(-rfrac, rfrac, size=(count, d - 1)) * geom.R
    rr = np.sqrt(np.sum(pts[:, :-1] ** 2, axis=1))
    pts[:, -1] = rng.uniform(-depth, depth, size=count) * geom.gap_width_unchecked(rr)
    return pts


class TestRigidModes:
    def test_basis_sizes(self):
        assert len(rigid_modes(2)) == 3
        assert len(rigid_modes(3)) == 6

    def test_translations_and_rotations(self):
        m = rigid_modes(3)
        x = np.array([1.0, 2.0, 3.0])
        assert np.allclose(m[0].evaluate(x), [1, 0, 0])
        assert np.allclose(m[3].evaluate(x), [2, -1, 0])
        assert np.allclose(m[4].evaluate(x), [3, 0, -1])
        assert np.allclose(m[5].evaluate(x), [0, 3, -2])

    def test_symmetric_gradient_vanishes(self):
        # e(psi) = 0 by finite differences at random points
        rng = np.random.default_rng(0)
        h = 1e-6
        for dim in (2, 3):
            for mode in rigid_modes(dim):
                for _ in range(5):
                    x = rng.uniform(-1, 1, dim)
                    G = np.zeros((dim, dim))
                    for c in range(dim):
                        e = np.zeros(dim)
                        e[c] = h
                        G[:, c] = (mode.evaluate(x + e) - mode.evaluate(x - e)) / (2 * h)
                    assert np.abs(G + G.T).max() < 1e-9


class TestKeller:
    def test_top_boundary(self):
        assert keller(geom2(), np.array([0.0, 0.05])) == pytest.approx(0.5)

    def test_midline(self):
        assert keller(geom2(), np.array([0.0, 0.0])) == 0.0

    def test_offset(self):
        # delta(0.2) = 0.14, k = 0.07/0.14
        assert keller(geom2(), np.array([0.2, 0.07])) == pytest.approx(0.5)

    def test_outside_neck_raises(self):
        with pytest.raises(OutOfNeckError):
            keller(geom2(), np.array([0.0, 0.2]))
        with pytest.raises(OutOfNeckError):
            keller(geom2(), np.array([1.5, 0.0]))

    @given(x=st.floats(-0.4, 0.4), frac=st.floats(-0.49, 0.49))
    @settings(max_examples=50, deadline=None)
    def test_derivative_identities(self, x, frac):
        # d_x k = -2 x k / delta and d_y k = 1/delta for kappa = 1
        g = geom2(0.05)
        d = g.gap_width_unchecked(abs(x))
        pt = np.array([x, frac * d])
        h = 1e-7
        k0 = keller(g, pt)
        fdx = (keller(g, pt + [h, 0]) - keller(g, pt - [h, 0])) / (2 * h)
        fdy = (keller(g, pt + [0, h]) - keller(g, pt - [0, h])) / (2 * h)
        assert fdx == pytest.approx(-2 * x * k0 / d, abs=2e-6)
        assert fdy == pytest.approx(1 / d, rel=1e-6)


class TestAuxFieldConstruction:
    def test_requires_symmetric_quadratic(self):
        with pytest.raises(UnsupportedGeometryError):
            aux_field(GapGeometry.unit_disks(0.1), 1, 1)

    def test_mode_range(self):
        with pytest.raises(ValueError):
            aux_field(geom2(), 1, 4)
        with pytest.raises(ValueError):
            aux_field(geom3(), 1, 7)

    def test_2d_translation_boundary_value(self):
        f = aux_field(geom2(), 1, 1)
        x = np.array([0.2, 0.07])  # on the top boundary
        assert np.allclose(f.velocity(x), [1.0, 0.0], atol=1e-14)

    def test_3d_vertical_values_at_origin(self):
        f = aux_field(geom3(), 1, 3)
        x = np.zeros(3)
        assert np.allclose(f.velocity(x), [0, 0, 0.5], atol=1e-15)
        assert f.pressure(x) == pytest.approx(-150.0)

    def test_outside_neck_raises(self):
        f = aux_field(geom2(), 1, 1)
        with pytest.raises(OutOfNeckError):
            f.velocity(np.array([1.5, 0.0]))


class TestBoundaryTraces:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_traces_all_fields(self, dim):
        g = geom2() if dim == 2 else geom3()
        rng = np.random.default_rng(11)
        for i in (1, 2):
            for a in range(1, mode_count(dim) + 1):
                f = aux_field(g, i, a)
                pts = sample_neck(g, rng, 1000)
                rr = np.sqrt(np.sum(pts[:, :-1] ** 2, axis=1))
                dd = g.gap_width_unchecked(rr)
                for sgn, own in ((1.0, i == 1), (-1.0, i == 2)):
                    b = pts.copy()
                    b[:, -1] = sgn * dd / 2
                    v = f.velocity(b)
                    want = f.psi.evaluate(b) if own else np.zeros_like(v)
                    assert np.abs(v - want).max() < 1e-12


class TestDerivatives:
    @pytest.mark.parametrize("dim,i,a", [
        (2, 1, 1), (2, 1, 2), (2, 1, 3), (2, 2, 2),
        (3, 1, 1), (3, 1, 2), (3, 1, 3), (3, 1, 4), (3, 1, 5), (3, 1, 6),
        (3, 2, 3), (3, 2, 5)])
    def test_gradient_matches_finite_differences(self, dim, i, a):
        g = geom2(0.05) if dim == 2 else geom3(0.05)
        f = aux_field(g, i, a)
        rng = np.random.default_rng(dim * 10 + i + a)
        for x in sample_neck(g, rng, 25, rfrac=0.7, depth=0.4):
            rp = np.sqrt(np.sum(x[:-1] ** 2))
            h = 1e-6 * g.gap_width_unchecked(rp)
            G = f.grad_velocity(x)
            Gfd = np.zeros_like(G)
            for c in range(dim):
                e = np.zeros(dim)
                e[c] = h
                Gfd[:, c] = (f.velocity(x + e) - f.velocity(x - e)) / (2 * h)
            assert np.abs(G - Gfd).max() <= 1e-6 * max(np.abs(G).max(), 1.0)
            gp = f.grad_pressure(x)
            gpfd = np.array([
                (f.pressure(x + _e(dim, c, h)) - f.pressure(x - _e(dim, c, h)))
                / (2 * h) for c in range(dim)])
            assert np.abs(gp - gpfd).max() <= 2e-6 * max(np.abs(gp).max(), 1.0)

    def test_3d_vertical_gradient_example(self):
        # d_z of the horizontal components vanishes on the midline
        f = aux_field(geom3(), 1, 3)
        G = f.grad_velocity(np.array([0.2, 0.0, 0.0]))
        assert G[0, 2] == pytest.approx(0.0, abs=1e-14)

    def test_2d_shear_gradient_example(self):
        f = aux_field(geom2(0.1), 1, 1)
        G = f.grad_velocity(np.zeros(2))
        assert G[0, 1] == pytest.approx(10.0)


class TestDivergence:
    @pytest.mark.parametrize("dim,i,a", [(2, 1, 1), (2, 2, 3), (3, 1, 3),
                                         (3, 1, 5), (3, 2, 6)])
    def test_divergence_free(self, dim, i, a):
        g = geom2(0.05) if dim == 2 else geom3(0.05)
        f = aux_field(g, i, a)
        rng = np.random.default_rng(a)
        pts = sample_neck(g, rng, 1000)
        G = f.grad_velocity(pts)
        assert np.abs(np.trace(G, axis1=-2, axis2=-1)).max() < 1e-10

    def test_divergence_spot_values(self):
        g3 = GapGeometry.quadratic(0.05, dimension=3)
        f = aux_field(g3, 1, 3)
        assert abs(divergence(f, np.array([0.1, 0.1, 0.01]))) < 1e-10
        f5 = aux_field(g3, 1, 5)
        assert abs(divergence(f5, np.array([0.07, -0.05, 0.008]))) < 1e-10


class TestMirrorSymmetry:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_particle2_is_reflection(self, dim):
        g = geom2() if dim == 2 else geom3()
        rng = np.random.default_rng(7)
        flip = np.ones(dim)
        flip[-1] = -1.0
        for a in range(1, dim + 1):  # translations
            f1 = aux_field(g, 1, a)
            f2 = aux_field(g, 2, a)
            pts = sample_neck(g, rng, 200)
            s = 1.0 if a < dim else -1.0
            v2 = f2.velocity(pts)
            v1m = f1.velocity(pts * flip) * flip * s
            assert np.abs(v2 - v1m).max() < 1e-13


class TestResiduals:
    def test_cancellation_identity_3d(self):
        f = aux_field(geom3(), 1, 3)
        rng = np.random.default_rng(2)
        pts = sample_neck(geom3(), rng, 400)
        worst = max(abs(vertical_cancellation(f, x)) for x in pts)
        assert worst < 1e-9

    def test_cancellation_identity_2d(self):
        f = aux_field(geom2(), 1, 2)
        assert abs(vertical_cancellation(f, np.array([0.1, 0.02]))) < 1e-12

    def test_cancellation_wrong_mode(self):
        with pytest.raises(ValueError):
            vertical_cancellation(aux_field(geom3(), 1, 1), np.zeros(3))

    def test_fd_residual_vertical_component(self):
        # the vertical momentum residual vanishes to discretization error
        f = aux_field(geom3(), 1, 3)
        rs = stokes_residual(f, np.zeros(3), step=1e-3 * 0.1)
        assert abs(rs.f[2]) < 1e-6

    def test_residual_normalization_finite(self):
        f = aux_field(geom3(), 1, 3)
        rs = stokes_residual(f, np.array([0.1, 0.05, 0.0]), step=1e-4)
        assert np.isfinite(rs.normalized_ratio) and rs.normalized_ratio >= 0

    def test_mode4_uses_weaker_normalization(self):
        g = geom3()
        f = aux_field(g, 1, 4)
        x = np.array([0.1, 0.0, 0.0])
        rs = stokes_residual(f, x, step=1e-4)
        d = g.gap_width_unchecked(0.1)
        mag = np.sqrt(np.sum(np.array(rs.f) ** 2))
        assert rs.normalized_ratio == pytest.approx(mag * d**1.5)

    def test_step_validation(self):
        f = aux_field(geom2(), 1, 1)
        with pytest.raises(ValueError):
            stokes_residual(f, np.zeros(2), step=0.05)   # > delta/16
        with pytest.raises(ValueError):
            stokes_residual(f, np.array([0.0, 0.049]), step=1e-3)

    def test_ratio_stable_across_eps_2d(self):
        # translation-mode residual ratio is eps-independent in the neck
        # (the residual vanishes identically on the midline itself)
        vals = []
        for eps in (1e-2, 1e-3):
            g = geom2(eps)
            f = aux_field(g, 1, 1)
            worst = 0.0
            for x1 in np.linspace(-0.2, 0.2, 9):
                d = g.gap_width_unchecked(abs(x1))
                for frac in (-0.3, 0.15, 0.3):
                    rs = stokes_residual(f, np.array([x1, frac * d]),
                                         step=1e-3 * d)
                    worst = max(worst, rs.normalized_ratio)
            vals.append(worst)
        assert max(vals) / min(vals) < 2.0


class TestKappaSupport:
    def test_traces_hold_at_kappa2(self):
        g = geom2(0.1, kappa=2.0)
        f = aux_field(g, 1, 2)
        x1 = 0.2
        top = g.top_boundary(x1)
        assert np.allclose(f.velocity(np.array([x1, top])), [0, 1], atol=1e-13)

    def test_divergence_not_guaranteed_at_kappa2(self):
        g = geom2(0.1, kappa=2.0)
        f = aux_field(g, 1, 1)
        # the construction relies on kappa = 1; the trace survives, the
        # divergence does not
        assert abs(divergence(f, np.array([0.2, 0.01]))) > 1e-6


def _e(dim, c, h):
    e = np.zeros(dim)
    e[c] = h
    return e
