#!/usr/bin/env python3
"""Finite-difference quasi-geostrophic model on the double-gyre box [0, 1] x [0, 2].

Fields are (ny, nx) arrays of interior values with a homogeneous Dirichlet boundary
implied; state vectors are their row-major flattening (x fastest).
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import ArrayLike

from mfda.ensemble import Array, GaussianSampler
from mfda.errors import IncompatibleGrids, IndexOutOfRange, PoissonSolveError, ShapeMismatch
from mfda.integrate import IntegrationResult, StepController, integrate_ode

try:
    from sksparse.cholmod import cholesky as cholmod_cholesky
except ImportError:  # pragma: no cover - optional extra
    cholmod_cholesky = None

logger = logging.getLogger(__name__)

# 24 hours in model time units.
DAY = 0.0109
SIX_MONTHS = 0.5 * 80 / 20.12

POISSON_RTOL = 1e-10

Forcing = Callable[[Array, Array], Array]


def double_gyre(x: Array, y: Array) -> Array:
    """Symmetric double-gyre wind forcing sin(pi (y - 1))."""
    return np.sin(np.pi * (y - 1.0)) + 0.0 * x


def no_forcing(x: Array, y: Array) -> Array:
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))


@dataclass(frozen=True)
class Grid2D:
    """Interior points of a uniform grid on [0, 1] x [0, 2]."""

    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.nx < 3 or self.ny < 3:
            raise ShapeMismatch(f"grid needs at least 3x3 interior points, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx + 1)

    @property
    def hy(self) -> float:
        return 2.0 / (self.ny + 1)

    @property
    def n(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def mesh(self) -> tuple[Array, Array]:
        """Physical (x, y) coordinates of the interior points, each (ny, nx)."""
        x = self.hx * np.arange(1, self.nx + 1)
        y = self.hy * np.arange(1, self.ny + 1)
        return np.meshgrid(x, y, indexing="xy")

    def as_field(self, values: ArrayLike) -> Array:
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != self.n:
            raise ShapeMismatch(f"{arr.size} values for a {self.ny}x{self.nx} grid")
        return arr.reshape(self.shape)

    @classmethod
    def parse(cls, text: str) -> "Grid2D":
        """Grid from "NXxNY"."""
        try:
            nx, ny = (int(part) for part in text.lower().split("x"))
        except ValueError as err:
            raise ValueError(f"grid must look like 31x63, got {text!r}") from err
        return cls(nx, ny)

    def __str__(self) -> str:
        return f"{self.nx}x{self.ny}"


@dataclass(frozen=True)
class QgeParams:
    """Reynolds and Rossby numbers and the wind forcing.

    ``beta_effect`` switches the Ro^-1 psi_x term; Re may be infinite.
    """

    Re: float = 450.0
    Ro: float = 0.0036
    forcing: Forcing = double_gyre
    beta_effect: bool = True

    def __post_init__(self) -> None:
        if not (self.Re > 0 and self.Ro > 0):
            raise ValueError(f"Re and Ro must be positive, got Re={self.Re}, Ro={self.Ro}")

    def forcing_field(self, grid: Grid2D) -> Array:
        x, y = grid.mesh()
        return np.asarray(self.forcing(x, y), dtype=np.float64)


@dataclass(frozen=True)
class QgeState:
    """Vorticity on the interior grid at model time t."""

    omega: Array
    t: float = 0.0

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=np.float64)
        if omega.ndim != 2:
            raise ShapeMismatch(f"vorticity must be a 2-D field, got {omega.ndim}-D")
        object.__setattr__(self, "omega", omega)

    @property
    def grid(self) -> Grid2D:
        ny, nx = self.omega.shape
        return Grid2D(nx, ny)

    @property
    def vector(self) -> Array:
        return self.omega.reshape(-1)


def _pad(f: Array) -> Array:
    """Zero ring around the last two axes."""
    return np.pad(f, [(0, 0)] * (f.ndim - 2) + [(1, 1), (1, 1)])


def laplacian_matrix(grid: Grid2D) -> sp.csr_array:
    """Sparse 5-point Dirichlet Laplacian acting on row-major state vectors."""

    def second_difference(count: int, h: float) -> sp.csr_array:
        return sp.diags_array([1.0, -2.0, 1.0], offsets=[-1, 0, 1], shape=(count, count)) / h**2

    lx = second_difference(grid.nx, grid.hx)
    ly = second_difference(grid.ny, grid.hy)
    return sp.csr_array(sp.kron(sp.eye_array(grid.ny), lx) + sp.kron(ly, sp.eye_array(grid.nx)))


def ddx_matrix(grid: Grid2D) -> sp.csr_array:
    """Centered x-derivative with zero boundary values, row-major."""
    dx = sp.diags_array([-1.0, 1.0], offsets=[-1, 1], shape=(grid.nx, grid.nx)) / (2 * grid.hx)
    return sp.csr_array(sp.kron(sp.eye_array(grid.ny), dx))


def laplacian(f: Array, grid: Grid2D) -> Array:
    """Five-point Laplacian of (..., ny, nx) fields with zero boundary values."""
    p = _pad(f)
    return (p[..., 1:-1, 2:] - 2 * f + p[..., 1:-1, :-2]) / grid.hx**2 + (
        p[..., 2:, 1:-1] - 2 * f + p[..., :-2, 1:-1]
    ) / grid.hy**2


def ddx(f: Array, grid: Grid2D) -> Array:
    """Centered x-derivative of (..., ny, nx) fields with zero boundary values."""
    p = _pad(f)
    return (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / (2 * grid.hx)


def _arakawa(p: Array, q: Array, hx: float, hy: float) -> Array:
    """Arakawa average of p_x q_y - p_y q_x on padded (..., ny+2, nx+2) arrays."""
    pe, pw, pn, ps = p[..., 1:-1, 2:], p[..., 1:-1, :-2], p[..., 2:, 1:-1], p[..., :-2, 1:-1]
    qe, qw, qn, qs = q[..., 1:-1, 2:], q[..., 1:-1, :-2], q[..., 2:, 1:-1], q[..., :-2, 1:-1]
    pne, pnw, pse, psw = p[..., 2:, 2:], p[..., 2:, :-2], p[..., :-2, 2:], p[..., :-2, :-2]
    qne, qnw, qse, qsw = q[..., 2:, 2:], q[..., 2:, :-2], q[..., :-2, 2:], q[..., :-2, :-2]

    j_pp = (pe - pw) * (qn - qs) - (pn - ps) * (qe - qw)
    j_px = pe * (qne - qse) - pw * (qnw - qsw) - pn * (qne - qnw) + ps * (qse - qsw)
    j_xp = qn * (pne - pnw) - qs * (pse - psw) - qe * (pne - pse) + qw * (pnw - psw)
    return (j_pp + j_px + j_xp) / (12.0 * hx * hy)


def arakawa_jacobian(psi: Array, omega: Array, grid: Grid2D) -> Array:
    """Energy- and enstrophy-conserving J(psi, omega) = psi_y omega_x - psi_x omega_y.

    Both fields are interior values with zero Dirichlet boundary; leading axes
    broadcast, so a stack of fields gives a stack of Jacobians.
    """
    if psi.shape[-2:] != grid.shape or omega.shape[-2:] != grid.shape:
        raise ShapeMismatch(f"fields {psi.shape}, {omega.shape} do not match grid {grid.shape}")
    return _arakawa(_pad(omega), _pad(psi), grid.hx, grid.hy)


@dataclass
class PoissonSolver:
    """Precomputed sparse factorization of -Laplacian; solves Laplacian psi = -omega.

    CHOLMOD is used when scikit-sparse is installed, SuperLU in symmetric mode otherwise.
    Every solve is checked against ||Laplacian psi + omega|| <= rtol ||omega||.
    """

    grid: Grid2D
    rtol: float = POISSON_RTOL
    backend: str = field(init=False)
    _matrix: sp.csc_array = field(init=False, repr=False)
    _solve: Callable[[Array], Array] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._matrix = sp.csc_array(-laplacian_matrix(self.grid))
        if cholmod_cholesky is not None:
            factor = cholmod_cholesky(sp.csc_matrix(self._matrix))
            self._solve = factor
            self.backend = "cholmod"
        else:
            lu = spla.splu(
                self._matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            self._solve = lu.solve
            self.backend = "superlu"
        logger.debug("factored %s Poisson operator with %s", self.grid, self.backend)

    def solve(self, omega: ArrayLike) -> Array:
        """Streamfunction for a vorticity field, state vector or n x k matrix of vectors.

        Raises:
            PoissonSolveError: If the residual bound fails after one refinement step.
        """
        rhs = np.asarray(omega, dtype=np.float64)
        shape = rhs.shape
        b = rhs.reshape(self.grid.n, -1)
        x = np.asarray(self._solve(b)).reshape(b.shape)
        scale = np.linalg.norm(b)
        residual = b - self._matrix @ x
        if np.linalg.norm(residual) > self.rtol * scale:
            logger.warning("Poisson residual above %.1e, applying iterative refinement", self.rtol)
            x = x + np.asarray(self._solve(residual)).reshape(b.shape)
            residual = b - self._matrix @ x
            if np.linalg.norm(residual) > self.rtol * scale:
                raise PoissonSolveError(
                    f"relative residual {np.linalg.norm(residual) / scale:.3e} "
                    f"exceeds {self.rtol:.1e}"
                )
        return x.reshape(shape)


def qge_rhs(
    state: QgeState,
    params: QgeParams,
    solver: PoissonSolver,
    forcing: Array | None = None,
) -> Array:
    """Tendency -J(psi, omega) + Ro^-1 psi_x + Re^-1 Laplacian omega + Ro^-1 F."""
    grid = solver.grid
    omega = state.omega
    psi = solver.solve(omega)
    F = params.forcing_field(grid) if forcing is None else forcing
    tendency = -arakawa_jacobian(psi, omega, grid) + F / params.Ro
    if params.beta_effect:
        tendency = tendency + ddx(psi, grid) / params.Ro
    if np.isfinite(params.Re):
        tendency = tendency + laplacian(omega, grid) / params.Re
    return tendency


@dataclass
class QgeModel:
    """Grid, parameters and Poisson factorization of one model level."""

    grid: Grid2D
    params: QgeParams = field(default_factory=QgeParams)
    controller: StepController = field(default_factory=StepController)
    fixed_step: float | None = None

    @cached_property
    def solver(self) -> PoissonSolver:
        return PoissonSolver(self.grid)

    @cached_property
    def forcing(self) -> Array:
        return self.params.forcing_field(self.grid)

    @property
    def n(self) -> int:
        return self.grid.n

    def rhs(self, t: float, y: Array) -> Array:
        state = QgeState(self.grid.as_field(y), t)
        return qge_rhs(state, self.params, self.solver, self.forcing).reshape(-1)

    def advance(self, state: QgeState, t_end: float) -> tuple[QgeState, IntegrationResult]:
        result = integrate_ode(
            self.rhs,
            state.vector,
            state.t,
            t_end,
            fixed_step=self.fixed_step,
            controller=self.controller,
        )
        return QgeState(self.grid.as_field(result.y), result.t), result

    def step(self, state: QgeState, dt: float) -> QgeState:
        return self.advance(state, state.t + dt)[0]

    def propagator(self, dt: float) -> Callable[[Array], Array]:
        """Map a state vector to its value dt model-time later."""
        # factor before members share the model across threads
        _ = self.solver, self.forcing

        def run(y: Array) -> Array:
            return integrate_ode(
                self.rhs, y, 0.0, dt, fixed_step=self.fixed_step, controller=self.controller
            ).y

        return run

    def free_run(self, t_spinup: float, initial: QgeState | None = None) -> QgeState:
        """Integrate from rest (or ``initial``) for t_spinup model time."""
        start = initial or QgeState(np.zeros(self.grid.shape), 0.0)
        logger.info("free run on %s grid for %.4g time units", self.grid, t_spinup)
        return self.step(start, t_spinup)


def integrate(
    state: QgeState,
    params: QgeParams,
    t_end: float,
    controller: StepController | None = None,
    fixed_step: float | None = None,
) -> QgeState:
    """Advance a state to exactly t_end with the embedded Merson pair.

    Raises:
        StepSizeCollapse: If the step size underflows.
        Blowup: If the solution becomes non-finite.
    """
    if t_end < state.t:
        raise ValueError(f"t_end {t_end} precedes state time {state.t}")
    model = QgeModel(state.grid, params, controller or StepController(), fixed_step)
    return model.advance(state, t_end)[0]


def _restriction_weights(fine: int, coarse: int, axis: str) -> sp.csr_array:
    ratio, rest = divmod(fine + 1, coarse + 1)
    if rest or ratio < 1:
        raise IncompatibleGrids(
            f"{axis}: {fine} fine points do not nest {coarse} coarse points"
        )
    rows, cols, vals = [], [], []
    for j in range(coarse):
        center = ratio * (j + 1) - 1
        for d in range(-(ratio - 1), ratio):
            rows.append(j)
            cols.append(center + d)
            vals.append((ratio - abs(d)) / ratio**2)
    return sp.csr_array((vals, (rows, cols)), shape=(coarse, fine))


def restriction_operator(fine: Grid2D, coarse: Grid2D) -> tuple[sp.csr_array, sp.csr_array]:
    """1-D full-weighting matrices (R_y, R_x) with coarse = R_y F R_x^T."""
    return (
        _restriction_weights(fine.ny, coarse.ny, "y"),
        _restriction_weights(fine.nx, coarse.nx, "x"),
    )


def restrict_to_fom(dns_state: QgeState, dns_grid: Grid2D, fom_grid: Grid2D) -> QgeState:
    """Full-weighting restriction of a fine vorticity field onto a nested coarse grid.

    Raises:
        IncompatibleGrids: If (n+1) of the fine grid is not a multiple of the coarse one.
    """
    if dns_state.omega.shape != dns_grid.shape:
        raise ShapeMismatch(f"state {dns_state.omega.shape} is not on grid {dns_grid.shape}")
    r_y, r_x = restriction_operator(dns_grid, fom_grid)
    coarse = r_y @ dns_state.omega @ r_x.T
    return QgeState(np.asarray(coarse), dns_state.t)


def equally_spaced_indices(n: int, count: int) -> Array:
    """count flat indices with constant stride n // count, centered in [0, n)."""
    if count < 0 or count > n:
        raise IndexOutOfRange(f"cannot pick {count} of {n} indices")
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    stride = n // count
    offset = (n - stride * (count - 1) - 1) // 2
    return offset + stride * np.arange(count, dtype=np.int64)


def grid_coordinates(grid: Grid2D) -> Array:
    """(n, 2) array of (column, row) positions in grid units, row-major."""
    rows, cols = np.divmod(np.arange(grid.n), grid.nx)
    return np.column_stack([cols, rows]).astype(np.float64)


def observe(
    state: QgeState, indices: ArrayLike, sampler: GaussianSampler | None = None
) -> Array:
    """Vorticity at flat indices plus one draw of the sampler's observation noise.

    Raises:
        IndexOutOfRange: If an index lies outside the grid.
    """
    idx = np.asarray(indices, dtype=np.int64)
    values = state.vector
    if idx.size and (idx.min() < 0 or idx.max() >= values.size):
        raise IndexOutOfRange(f"observation indices must lie in [0, {values.size})")
    gathered = values[idx].copy()
    if sampler is None:
        return gathered
    if sampler.dim != idx.size:
        raise ShapeMismatch(f"noise of dim {sampler.dim} for {idx.size} observations")
    return gathered + sampler.draw(1)[:, 0]
