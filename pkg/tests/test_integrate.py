#!/usr/bin/env python3
"""Tests for mfda.integrate module."""

import numpy as np
import pytest

from mfda.errors import Blowup, StepSizeCollapse
from mfda.integrate import MERSON43, StepController, integrate_ode


class TestTableau:
    """Tests for the Merson pair."""

    def test_consistency(self) -> None:
        """Test weights sum to one and rows of a sum to c."""
        assert sum(MERSON43.b) == pytest.approx(1.0)
        assert sum(MERSON43.b_hat) == pytest.approx(1.0)
        for c, row in zip(MERSON43.c, MERSON43.a):
            assert sum(row) == pytest.approx(c)


class TestIntegrateOde:
    """Tests for adaptive and fixed-step integration."""

    def test_exponential_decay(self) -> None:
        """Test y' = -y lands on exp(-t) at exactly t_end."""
        result = integrate_ode(lambda t, y: -y, np.array([1.0]), 0.0, 2.0)
        assert result.t == 2.0
        assert result.y[0] == pytest.approx(np.exp(-2.0), rel=1e-4)

    def test_rotation_conserves_norm(self) -> None:
        """Test a harmonic oscillator keeps its amplitude."""
        result = integrate_ode(
            lambda t, y: np.array([y[1], -y[0]]),
            np.array([1.0, 0.0]),
            0.0,
            2 * np.pi,
            controller=StepController(atol=1e-9, rtol=1e-9),
        )
        np.testing.assert_allclose(result.y, [1.0, 0.0], atol=1e-6)

    def test_fixed_step_order(self) -> None:
        """Test halving the fixed step cuts the error by about 2^4."""

        def error(h: float) -> float:
            y = integrate_ode(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, fixed_step=h).y
            return abs(float(y[0]) - np.exp(-1.0))

        ratio = error(0.1) / error(0.05)
        assert 10.0 < ratio < 24.0

    def test_zero_span(self) -> None:
        """Test t_end = t0 returns the initial state without steps."""
        result = integrate_ode(lambda t, y: y, np.array([3.0]), 1.0, 1.0)
        assert result.steps == 0
        assert result.y[0] == 3.0

    def test_backwards_rejected(self) -> None:
        """Test t_end before t0 raises."""
        with pytest.raises(ValueError):
            integrate_ode(lambda t, y: y, np.array([1.0]), 1.0, 0.0)

    def test_blowup(self) -> None:
        """Test a finite-time singularity raises."""
        with pytest.raises((Blowup, StepSizeCollapse)):
            integrate_ode(lambda t, y: y**2, np.array([1.0]), 0.0, 2.0)

    def test_non_finite_tendency(self) -> None:
        """Test a non-finite initial tendency raises Blowup."""
        with pytest.raises(Blowup):
            integrate_ode(lambda t, y: y * np.inf, np.array([1.0]), 0.0, 1.0)

    def test_does_not_mutate_input(self) -> None:
        """Test the initial state array is left alone."""
        y0 = np.array([1.0, 2.0])
        integrate_ode(lambda t, y: -y, y0, 0.0, 1.0)
        np.testing.assert_array_equal(y0, [1.0, 2.0])


class TestStepController:
    """Tests for the PI step-size controller."""

    def test_factor_bounds(self) -> None:
        """Test the multiplier is clipped to [fac_min, fac_max]."""
        controller = StepController()
        assert controller.factor(0.0, 3, accepted=True) == controller.fac_max
        assert controller.factor(np.inf, 3, accepted=False) == controller.fac_min
        assert controller.fac_min <= controller.factor(1e6, 3, accepted=False) <= 1.0

    def test_error_norm_scaling(self) -> None:
        """Test the RMS norm is relative to atol + rtol |y|."""
        controller = StepController(atol=1.0, rtol=0.0)
        norm = controller.error_norm(np.zeros(2), np.zeros(2), np.array([3.0, 4.0]))
        assert norm == pytest.approx(np.sqrt(12.5))
