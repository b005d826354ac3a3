#!/usr/bin/env python3
"""Embedded explicit Runge-Kutta integration with PI step-size control.

Shared by the full-order QG solver and the reduced-order model.
"""

import dataclasses
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from mfda.ensemble import Array
from mfda.errors import Blowup, StepSizeCollapse

logger = logging.getLogger(__name__)

Rhs = Callable[[float, Array], Array]


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit embedded pair: ``b`` propagates, ``b_hat`` estimates the error."""

    name: str
    c: tuple[float, ...]
    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    b_hat: tuple[float, ...]
    order: int
    error_order: int

    @property
    def stages(self) -> int:
        return len(self.c)

    @property
    def error_weights(self) -> tuple[float, ...]:
        return tuple(p - q for p, q in zip(self.b, self.b_hat))


# Merson 4(3): five stages, fourth-order propagation with a third-order companion.
MERSON43 = ButcherTableau(
    name="merson43",
    c=(0.0, 1 / 3, 1 / 3, 1 / 2, 1.0),
    a=(
        (),
        (1 / 3,),
        (1 / 6, 1 / 6),
        (1 / 8, 0.0, 3 / 8),
        (1 / 2, 0.0, -3 / 2, 2.0),
    ),
    b=(1 / 6, 0.0, 0.0, 2 / 3, 1 / 6),
    b_hat=(1 / 10, 0.0, 3 / 10, 2 / 5, 1 / 5),
    order=4,
    error_order=3,
)


@dataclass
class StepController:
    """PI controller on the scaled RMS error norm."""

    atol: float = 1e-6
    rtol: float = 1e-6
    safety: float = 0.9
    fac_min: float = 0.2
    fac_max: float = 5.0
    h_min: float = 1e-12
    _previous_error: float = field(default=1.0, init=False, repr=False)

    def error_norm(self, y: Array, y_new: Array, err: Array) -> float:
        scale = self.atol + self.rtol * np.maximum(np.abs(y), np.abs(y_new))
        value = float(np.sqrt(np.mean((err / scale) ** 2))) if err.size else 0.0
        return value if math.isfinite(value) else math.inf

    def factor(self, err_norm: float, order: int, accepted: bool) -> float:
        """Step-size multiplier for the next attempt."""
        if err_norm == 0.0:
            return self.fac_max
        if not math.isfinite(err_norm):
            return self.fac_min
        k = order + 1
        fac = self.safety * err_norm ** (-0.7 / k)
        if accepted:
            fac *= self._previous_error ** (0.4 / k)
            self._previous_error = max(err_norm, 1e-4)
        return min(self.fac_max, max(self.fac_min, fac))


@dataclass(frozen=True)
class IntegrationResult:
    y: Array
    t: float
    steps: int
    rejected: int
    h_last: float


def _stage_step(
    rhs: Rhs, tableau: ButcherTableau, t: float, y: Array, h: float, k1: Array
) -> tuple[Array, Array]:
    """Advance one step of size h; returns the new state and its local error estimate."""
    ks = [k1]
    for i in range(1, tableau.stages):
        increment = sum((a * k for a, k in zip(tableau.a[i], ks) if a != 0.0), np.zeros_like(y))
        ks.append(np.asarray(rhs(t + tableau.c[i] * h, y + h * increment)))
    y_new = y + h * sum((b * k for b, k in zip(tableau.b, ks) if b != 0.0), np.zeros_like(y))
    err = h * sum((e * k for e, k in zip(tableau.error_weights, ks) if e != 0.0), np.zeros_like(y))
    return y_new, err


def _initial_step(
    rhs: Rhs, t0: float, y0: Array, f0: Array, order: int, controller: StepController
) -> float:
    scale = controller.atol + controller.rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean((y0 / scale) ** 2))) if y0.size else 0.0
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2))) if y0.size else 0.0
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = np.asarray(rhs(t0 + h0, y0 + h0 * f0))
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0 if y0.size else 0.0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


def integrate_ode(
    rhs: Rhs,
    y0: Array,
    t0: float,
    t_end: float,
    h0: float | None = None,
    fixed_step: float | None = None,
    controller: StepController | None = None,
    tableau: ButcherTableau = MERSON43,
) -> IntegrationResult:
    """Integrate y' = rhs(t, y) from t0 to exactly t_end.

    Args:
        rhs: Right-hand side, called as rhs(t, y).
        y0: Initial state.
        t0: Initial time.
        t_end: Final time; the last step is clipped onto it.
        h0: First trial step; chosen from the local scales when omitted.
        fixed_step: Take equal steps no longer than this, without error control.
        controller: Tolerances and PI constants (atol = rtol = 1e-6 by default).
        tableau: Embedded pair.

    Raises:
        Blowup: If the state or its derivative becomes non-finite.
        StepSizeCollapse: If the controller asks for a step below its minimum.
    """
    # fresh PI memory per call; controllers may be shared across threads
    controller = dataclasses.replace(controller) if controller else StepController()
    y = np.array(y0, dtype=np.float64, copy=True)
    t = float(t0)
    span = float(t_end) - t
    if span < 0:
        raise ValueError(f"t_end {t_end} precedes t0 {t0}")
    if span == 0:
        return IntegrationResult(y, t, 0, 0, 0.0)

    f = np.asarray(rhs(t, y))
    if not np.all(np.isfinite(f)):
        raise Blowup(f"non-finite tendency at t={t:.6g}")

    if fixed_step is not None:
        count = max(1, math.ceil(span / fixed_step - 1e-12))
        h = span / count
        for step in range(count):
            y, _ = _stage_step(rhs, tableau, t, y, h, f)
            t = float(t0) + (step + 1) * h
            if not np.all(np.isfinite(y)):
                raise Blowup(f"non-finite state at t={t:.6g}")
            f = np.asarray(rhs(t, y))
        return IntegrationResult(y, float(t_end), count, 0, h)

    h = h0 if h0 is not None else _initial_step(rhs, t, y, f, tableau.order, controller)
    steps = rejected = 0
    while t < t_end:
        remaining = float(t_end) - t
        clipped = h >= remaining
        trial = remaining if clipped else h
        if trial < controller.h_min and not clipped:
            raise StepSizeCollapse(
                f"step size {trial:.3e} below {controller.h_min:.1e} at t={t:.6g}"
            )

        y_new, err = _stage_step(rhs, tableau, t, y, trial, f)
        err_norm = (
            controller.error_norm(y, y_new, err) if np.all(np.isfinite(y_new)) else math.inf
        )
        if err_norm <= 1.0:
            t = float(t_end) if clipped else t + trial
            y = y_new
            f = np.asarray(rhs(t, y))
            if not np.all(np.isfinite(f)):
                raise Blowup(f"non-finite tendency at t={t:.6g}")
            steps += 1
            h = trial * controller.factor(err_norm, tableau.error_order, accepted=True)
            logger.debug("accepted step %d at t=%.6g, next h=%.3e", steps, t, h)
        else:
            rejected += 1
            h = trial * controller.factor(err_norm, tableau.error_order, accepted=False)
            if h < controller.h_min:
                raise StepSizeCollapse(
                    f"step size {h:.3e} below {controller.h_min:.1e} at t={t:.6g}"
                )
    return IntegrationResult(y, t, steps, rejected, h)
