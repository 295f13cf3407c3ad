import math

import numpy as np
import pytest

from gapflow.experiments import fit_rate
from gapflow.rate_oracle import (Quantity, UnsupportedRateError,
                                 predicted_lower, predicted_scaling,
                                 predicted_upper, prediction)


class TestUpperBounds:
    def test_2d_gradient_at_axis(self):
        assert predicted_upper(Quantity.GRAD_U, 2, 0.01) == pytest.approx(10.0)

    def test_3d_gradient_at_axis(self):
        val = predicted_upper(Quantity.GRAD_U, 3, 0.01)
        assert val == pytest.approx(21.7147, abs=1e-4)

    def test_2d_pressure(self):
        assert predicted_upper(Quantity.PRESSURE_OSC, 2, 0.04) == pytest.approx(5.0)

    def test_profile_identity_at_sqrt_eps(self):
        # 3D gradient bound at |x'| = sqrt(eps)
        for eps in (0.01, 0.003, 1e-4):
            L = abs(math.log(eps))
            got = predicted_upper(Quantity.GRAD_U, 3, eps, [math.sqrt(eps)])
            want = (1 + L * math.sqrt(eps)) / (2 * eps * L)
            assert abs(got - want) < 1e-12 * want

    def test_monotone_decreasing_in_eps(self):
        for q in (Quantity.GRAD_U, Quantity.PRESSURE_OSC, Quantity.GRAD2U_GRADP,
                  Quantity.CAUCHY_STRESS):
            for dim in (2, 3):
                vals = [predicted_upper(q, dim, e) for e in (0.02, 0.01, 0.005)]
                assert vals[0] < vals[1] < vals[2]

    def test_unknown_combination(self):
        with pytest.raises(UnsupportedRateError):
            predicted_upper(Quantity.COEFF_GAP, 2, 0.01)
        with pytest.raises(UnsupportedRateError):
            predicted_upper(Quantity.GRAD_U, 4, 0.01)


class TestLowerBounds:
    def test_3d_value(self):
        assert predicted_lower(3, 0.01) == pytest.approx(21.7147, abs=1e-4)

    def test_2d_values(self):
        assert predicted_lower(2, 0.25) == pytest.approx(2.0)
        assert predicted_lower(2, 0.4999999) == pytest.approx(math.sqrt(2), rel=1e-5)

    def test_lower_leq_upper(self):
        for dim in (2, 3):
            for eps in (0.2, 0.05, 0.003):
                lo = predicted_lower(dim, eps)
                hi = predicted_upper(Quantity.GRAD_U, dim, eps)
                assert lo <= hi * (1 + 1e-12)

    def test_eps_range(self):
        with pytest.raises(UnsupportedRateError):
            predicted_lower(2, 0.7)


class TestScalings:
    def test_2d_coeff_gap(self):
        assert predicted_scaling(Quantity.COEFF_GAP, 2, 2, 0.01) == pytest.approx(0.001)
        assert predicted_scaling(Quantity.COEFF_GAP, 2, 1, 0.04) == pytest.approx(0.2)

    def test_2d_matrix_entries(self):
        assert predicted_scaling(Quantity.MATRIX_ENTRY, 2, (2, 2), 0.01) == \
            pytest.approx(1000.0)
        assert predicted_scaling(Quantity.MATRIX_ENTRY, 2, (1, 1), 0.04) == \
            pytest.approx(5.0)

    def test_3d_coeff_gap(self):
        assert predicted_scaling(Quantity.COEFF_GAP, 3, 3, 0.05) == pytest.approx(0.05)
        assert predicted_scaling(Quantity.COEFF_GAP, 3, 4, 0.05) == 1.0
        L = abs(math.log(0.05))
        assert predicted_scaling(Quantity.COEFF_GAP, 3, 1, 0.05) == pytest.approx(1 / L)

    def test_3d_matrix_entries(self):
        L = abs(math.log(0.02))
        assert predicted_scaling(Quantity.MATRIX_ENTRY, 3, 1, 0.02) == pytest.approx(L)
        assert predicted_scaling(Quantity.MATRIX_ENTRY, 3, 3, 0.02) == pytest.approx(50.0)

    def test_bad_indices(self):
        with pytest.raises(UnsupportedRateError):
            predicted_scaling(Quantity.COEFF_GAP, 2, 5, 0.01)
        with pytest.raises(UnsupportedRateError):
            predicted_scaling(Quantity.MATRIX_ENTRY, 2, (1, 2), 0.01)


class TestExponentConsistency:
    def test_fitted_slopes_match_declared(self):
        # log factors drift; fit deep in the tail where the drift is < 0.02
        es = [2.0 ** (-k) for k in range(78, 85)]
        for dim in (2, 3):
            for q in (Quantity.GRAD_U, Quantity.GRAD_U_LOWER, Quantity.PRESSURE_OSC,
                      Quantity.GRAD2U_GRADP, Quantity.CAUCHY_STRESS):
                pred = prediction(q, dim)
                fr = fit_rate([(e, pred(e)) for e in es])
                assert abs(fr.slope - pred.epsilon_exponent) < 0.02, (q, dim)
            for a in range(1, 4 if dim == 2 else 7):
                for q in (Quantity.COEFF_GAP, Quantity.MATRIX_ENTRY):
                    pred = prediction(q, dim, a)
                    fr = fit_rate([(e, pred(e)) for e in es])
                    assert abs(fr.slope - pred.epsilon_exponent) < 0.02

    def test_formula_positive(self):
        for dim in (2, 3):
            for e in np.linspace(0.001, 0.49, 23):
                assert predicted_upper(Quantity.GRAD_U, dim, float(e)) > 0
                assert predicted_lower(dim, float(e)) > 0
