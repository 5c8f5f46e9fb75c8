import math

import numpy as np
import pytest

from avfusion.errors import DimensionError
from avfusion.numeric import (
    add,
    binomial_kernel,
    hadamard,
    make_rng,
    matvec,
    sigmoid,
    tanh_act,
    xavier_init,
)


class TestSigmoid:
    def test_symmetry_point(self):
        assert sigmoid(0.0) == 0.5

    def test_ln3(self):
        assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)

    def test_complement(self):
        rng = make_rng(0)
        x = rng.uniform(-30, 30, 1000)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)

    def test_extreme_inputs_finite(self):
        for x in (1e308, -1e308, 710.0, -710.0):
            v = sigmoid(x)
            assert math.isfinite(v)
            assert 0.0 <= v <= 1.0

    def test_monotone(self):
        x = np.linspace(-20, 20, 5000)
        assert np.all(np.diff(sigmoid(x)) > 0)


class TestTanh:
    def test_zero(self):
        assert tanh_act(0.0) == 0.0

    def test_saturation(self):
        assert abs(tanh_act(50.0) - 1.0) < 1e-12
        assert math.isfinite(tanh_act(1e308))

    def test_odd(self):
        x = make_rng(1).uniform(-5, 5, 500)
        np.testing.assert_array_equal(tanh_act(-x), -tanh_act(x))


class TestBinomialKernel:
    def test_window_one(self):
        np.testing.assert_array_equal(binomial_kernel(1), [1.0])

    def test_window_three(self):
        np.testing.assert_array_equal(binomial_kernel(3), [0.25, 0.5, 0.25])

    def test_window_five(self):
        np.testing.assert_array_equal(
            binomial_kernel(5), [0.0625, 0.25, 0.375, 0.25, 0.0625]
        )

    @pytest.mark.parametrize("window", range(1, 22, 2))
    def test_sums_to_one(self, window):
        assert abs(binomial_kernel(window).sum() - 1.0) <= 1e-15

    def test_symmetric(self):
        k = binomial_kernel(9)
        np.testing.assert_array_equal(k, k[::-1])

    @pytest.mark.parametrize("window", [0, 2, 4, -1])
    def test_rejects_even_or_nonpositive(self, window):
        with pytest.raises(DimensionError):
            binomial_kernel(window)


class TestLinearAlgebra:
    def test_matvec_identity(self):
        np.testing.assert_array_equal(
            matvec(np.eye(3), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0]
        )

    def test_matvec_shape_error_reports_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2,\)"):
            matvec(np.zeros((2, 3)), np.zeros(2))

    def test_hadamard(self):
        np.testing.assert_array_equal(
            hadamard(np.array([1.0, 2.0]), np.array([3.0, 4.0])), [3.0, 8.0]
        )

    def test_add_shape_error(self):
        with pytest.raises(DimensionError):
            add(np.zeros(2), np.zeros(3))

    def test_xavier_deterministic(self):
        a = xavier_init(10, 10, 7)
        b = xavier_init(10, 10, 7)
        np.testing.assert_array_equal(a, b)

    def test_xavier_bound(self):
        m = xavier_init(6, 10, make_rng(3))
        bound = math.sqrt(6.0 / 16.0)
        assert m.shape == (6, 10)
        assert np.all(np.abs(m) <= bound)

    def test_rng_sequence_reproducible(self):
        a = make_rng(42).standard_normal(100)
        b = make_rng(42).standard_normal(100)
        np.testing.assert_array_equal(a, b)
