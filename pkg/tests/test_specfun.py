"""Accuracy tests for the special-function kernels.

mpmath provides the high-precision reference; the constants gamma and
pi^2/6 are additionally re-derived from independent series so the tests do
not lean on a single oracle.
"""

import math

import mpmath
import numpy as np
import pytest

from evsed.specfun import digamma, log_gamma, trigamma

mpmath.mp.dps = 40

GRID = np.geomspace(1e-3, 1e6, 211)


def euler_mascheroni_series(n: int = 10_000) -> float:
    """gamma = lim (H_n - ln n), accelerated with the Euler-Maclaurin tail."""
    harmonic = sum(1.0 / k for k in range(1, n + 1))
    return harmonic - math.log(n) - 0.5 / n + 1.0 / (12.0 * n * n)


def zeta2_series(n: int = 2_000) -> float:
    """pi^2/6 = sum 1/k^2, tail estimated by Euler-Maclaurin."""
    partial = sum(1.0 / (k * k) for k in range(1, n + 1))
    return partial + 1.0 / n - 1.0 / (2.0 * n * n) + 1.0 / (6.0 * n ** 3)


class TestLogGamma:
    def test_integer_values(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-14)
        assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-14)

    def test_half_via_duplication_identity(self):
        # Gamma(1/2)^2 = pi by the reflection formula at x = 1/2.
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-13)

    def test_absolute_error_on_grid(self):
        # rtol term covers the float64 ulp: ln Gamma(1e6) ~ 1.3e7, where one
        # ulp is ~2e-9 and an absolute 1e-12 is not representable.
        got = log_gamma(GRID)
        want = np.array([float(mpmath.loggamma(x)) for x in GRID])
        np.testing.assert_allclose(got, want, rtol=3e-16, atol=1e-12)

    def test_recurrence_on_grid(self):
        xs = np.geomspace(1e-3, 1e5, 157)
        lhs = log_gamma(xs + 1.0) - log_gamma(xs)
        np.testing.assert_allclose(lhs, np.log(xs), rtol=1e-10, atol=1e-10)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            log_gamma(0.0)
        with pytest.raises(ValueError):
            log_gamma(-3.5)
        with pytest.raises(ValueError):
            log_gamma(np.array([2.0, -1.0]))


class TestDigamma:
    def test_recurrence_unit_step(self):
        assert digamma(2.0) - digamma(1.0) == pytest.approx(1.0, abs=1e-12)

    def test_euler_mascheroni(self):
        assert digamma(1.0) == pytest.approx(-euler_mascheroni_series(), abs=1e-12)

    def test_asymptotic_at_1000(self):
        # psi(x) ~ ln x - 1/(2x): the deviation at 1000 is -0.0005 + O(1e-7).
        assert digamma(1000.0) - math.log(1000.0) == pytest.approx(-0.0005, abs=1e-6)

    def test_relative_error_on_grid(self):
        got = digamma(GRID)
        want = np.array([float(mpmath.digamma(x)) for x in GRID])
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=0.0)

    def test_recurrence_on_grid(self):
        xs = np.geomspace(1e-3, 1e5, 157)
        lhs = digamma(xs + 1.0) - digamma(xs)
        np.testing.assert_allclose(lhs, 1.0 / xs, rtol=1e-10, atol=1e-10)

    def test_matches_log_gamma_finite_difference(self):
        xs = np.geomspace(0.5, 100.0, 61)
        h = 1e-5 * xs
        fd = (log_gamma(xs + h) - log_gamma(xs - h)) / (2.0 * h)
        np.testing.assert_allclose(digamma(xs), fd, rtol=1e-6)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            digamma(0.0)
        with pytest.raises(ValueError):
            digamma(np.array([1.0, 0.0]))


class TestTrigamma:
    def test_zeta_two(self):
        assert trigamma(1.0) == pytest.approx(zeta2_series(), rel=1e-10)

    def test_recurrence_unit_step(self):
        assert trigamma(2.0) == pytest.approx(trigamma(1.0) - 1.0, rel=1e-10)

    def test_asymptotic_large_x(self):
        assert trigamma(1e6) * 1e6 == pytest.approx(1.0, abs=1e-5)

    def test_relative_error_on_grid(self):
        got = trigamma(GRID)
        want = np.array([float(mpmath.psi(1, x)) for x in GRID])
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=0.0)

    def test_matches_digamma_finite_difference(self):
        xs = np.geomspace(0.5, 100.0, 61)
        h = 1e-5 * xs
        fd = (digamma(xs + h) - digamma(xs - h)) / (2.0 * h)
        np.testing.assert_allclose(trigamma(xs), fd, rtol=1e-6)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            trigamma(-1.0)


def test_scalar_inputs_return_floats():
    assert isinstance(log_gamma(2.5), float)
    assert isinstance(digamma(2.5), float)
    assert isinstance(trigamma(2.5), float)


def test_array_shape_is_preserved():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert log_gamma(x).shape == (2, 2)
    assert digamma(x).shape == (2, 2)
    assert trigamma(x).shape == (2, 2)
