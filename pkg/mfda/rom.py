#!/usr/bin/env python3
"""POD basis by the method of snapshots and the Galerkin quasi-geostrophic ROM.

The ROM is the exact Galerkin projection of the discrete full-order model: for a
vorticity state omega = V a, rom_rhs(a) = V^T D qge_rhs(V a) up to round-off, where D
holds the Simpson quadrature weights.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import ArrayLike

from mfda.ensemble import Array
from mfda.errors import RankDeficient, ShapeMismatch
from mfda.integrate import StepController, integrate_ode
from mfda.projection import ProjectionPair
from mfda.qge import (
    Grid2D,
    PoissonSolver,
    QgeModel,
    QgeParams,
    QgeState,
    arakawa_jacobian,
    ddx,
    laplacian,
    laplacian_matrix,
)

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12


def _simpson_1d(nodes: int, h: float) -> Array:
    """Composite Simpson weights on nodes equally spaced by h.

    An even node count leaves one panel over, which gets the trapezoid rule.
    """
    w = np.zeros(nodes)
    simpson_nodes = nodes if nodes % 2 else nodes - 1
    if simpson_nodes >= 3:
        w[:simpson_nodes:2] += 2.0
        w[1:simpson_nodes:2] = 4.0
        w[0] = w[simpson_nodes - 1] = 1.0
        w[:simpson_nodes] *= h / 3.0
    if simpson_nodes != nodes:
        w[-2] += h / 2.0
        w[-1] += h / 2.0
    return w


def simpson_weights(grid: Grid2D) -> Array:
    """2-D Simpson weights of the interior points, row-major (boundary nodes carry zeros)."""
    wx = _simpson_1d(grid.nx + 2, grid.hx)[1:-1]
    wy = _simpson_1d(grid.ny + 2, grid.hy)[1:-1]
    return np.outer(wy, wx).reshape(-1)


@dataclass(frozen=True)
class SnapshotSet:
    """M vorticity snapshots (n x M), their times and the quadrature weights D."""

    snapshots: Array
    times: Array
    weights: Array
    grid: Grid2D

    def __post_init__(self) -> None:
        snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=np.float64))
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if snapshots.shape[1] < 2:
            raise ShapeMismatch(f"need at least 2 snapshots, got {snapshots.shape[1]}")
        if times.size != snapshots.shape[1]:
            raise ShapeMismatch(f"{times.size} times for {snapshots.shape[1]} snapshots")
        if snapshots.shape[0] != self.grid.n or np.size(self.weights) != self.grid.n:
            raise ShapeMismatch(f"snapshots and weights must have {self.grid.n} rows")
        object.__setattr__(self, "snapshots", snapshots)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))

    @property
    def count(self) -> int:
        return int(self.snapshots.shape[1])

    @classmethod
    def from_fields(cls, fields: ArrayLike, times: ArrayLike, grid: Grid2D) -> "SnapshotSet":
        stack = np.asarray(fields, dtype=np.float64).reshape(-1, grid.n).T
        return cls(stack, np.asarray(times), simpson_weights(grid), grid)


def collect_snapshots(
    model: QgeModel,
    count: int,
    spacing: float,
    spinup: float = 0.0,
    initial: QgeState | None = None,
    on_snapshot: Callable[[int], None] | None = None,
) -> SnapshotSet:
    """Record count snapshots spacing apart on a free run after spinup.

    Raises:
        NumericalDivergence: If the model run blows up.
    """
    if count < 2:
        raise ShapeMismatch(f"need at least 2 snapshots, got {count}")
    state = initial or QgeState(np.zeros(model.grid.shape), 0.0)
    if spinup > 0:
        state = model.step(state, spinup)
    fields, times = [], []
    for k in range(count):
        if k:
            state = model.step(state, spacing)
        fields.append(state.vector.copy())
        times.append(state.t)
        if on_snapshot is not None:
            on_snapshot(k)
    logger.info("collected %d snapshots on %s grid", count, model.grid)
    weights = simpson_weights(model.grid)
    return SnapshotSet(np.column_stack(fields), np.array(times), weights, model.grid)


def pod_basis(s: SnapshotSet, r: int) -> tuple[Array, Array]:
    """Leading r D-orthonormal POD modes and all M eigenvalues (nonincreasing).

    Snapshots are used uncentered. Each mode's sign makes the largest-magnitude entry
    of its temporal coefficient vector positive.

    Raises:
        RankDeficient: If r exceeds the numerical rank of the snapshot Gram matrix.
    """
    X = s.snapshots
    gram = X.T @ (s.weights[:, None] * X)
    gram = 0.5 * (gram + gram.T)
    eigenvalues, vectors = scipy.linalg.eigh(gram)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    eigenvalues = np.maximum(eigenvalues, 0.0)

    rank = int(np.sum(eigenvalues > RANK_TOL * max(eigenvalues[0], np.finfo(float).tiny)))
    if r < 0 or r > rank:
        raise RankDeficient(f"requested {r} modes, snapshot set has numerical rank {rank}")

    v = vectors[:, :r]
    pivots = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[pivots, np.arange(r)])
    modes = (X @ v) / np.sqrt(eigenvalues[:r])
    return modes, eigenvalues


@dataclass(frozen=True)
class GalerkinRom:
    """Quadratic reduced model a' = b + A a + a^T B a with its bases.

    ``vorticity_basis`` is D-orthonormal; ``streamfunction_basis`` solves
    -Laplacian psi_i = phi_i.
    """

    r: int
    vorticity_basis: Array
    streamfunction_basis: Array
    b: Array
    A: Array
    B: Array
    eigenvalues: Array
    weights: Array
    grid: Grid2D

    def __post_init__(self) -> None:
        shapes = (
            self.vorticity_basis.shape,
            self.streamfunction_basis.shape,
            self.b.shape,
            self.A.shape,
            self.B.shape,
        )
        expected = ((self.grid.n, self.r),) * 2 + ((self.r,), (self.r,) * 2, (self.r,) * 3)
        if shapes != expected:
            raise ShapeMismatch(f"ROM shapes {shapes} do not match r={self.r}, n={self.grid.n}")

    def project(self, omega: ArrayLike) -> Array:
        """Reduced coordinates V^T D omega of a vorticity vector or n x k matrix."""
        values = np.asarray(omega, dtype=np.float64)
        weighted = values * (self.weights if values.ndim == 1 else self.weights[:, None])
        return np.asarray(self.vorticity_basis.T @ weighted)

    def reconstruct(self, a: ArrayLike) -> Array:
        return np.asarray(self.vorticity_basis @ np.asarray(a, dtype=np.float64))


def galerkin_tensors(
    vorticity_basis: Array,
    streamfunction_basis: Array,
    params: QgeParams,
    grid: Grid2D,
    weights: Array | None = None,
) -> tuple[Array, Array, Array]:
    """b, A and B of the Galerkin projection with Simpson inner products.

    b_i = Ro^-1 <F, phi_i>, A_ij = Ro^-1 <d/dx psi_j, phi_i> + Re^-1 <Laplacian phi_j, phi_i>
    and B_imn = -<J(psi_n, phi_m), phi_i>, all with the model's discrete operators.
    """
    D = simpson_weights(grid) if weights is None else weights
    r = vorticity_basis.shape[1]
    test = (D[:, None] * vorticity_basis).T
    phi = vorticity_basis.T.reshape(r, *grid.shape)
    psi = streamfunction_basis.T.reshape(r, *grid.shape)

    b = test @ params.forcing_field(grid).reshape(-1) / params.Ro
    A = np.zeros((r, r))
    if params.beta_effect:
        A += test @ ddx(psi, grid).reshape(r, -1).T / params.Ro
    if np.isfinite(params.Re):
        A += test @ laplacian(phi, grid).reshape(r, -1).T / params.Re

    B = np.empty((r, r, r))
    for n in range(r):
        jac = arakawa_jacobian(psi[n], phi, grid).reshape(r, -1)
        B[:, :, n] = -test @ jac.T
    return b, A, B


def build_rom(
    snapshots: SnapshotSet,
    r: int,
    params: QgeParams,
    solver: PoissonSolver | None = None,
) -> GalerkinRom:
    """POD basis, streamfunction basis and Galerkin tensors in one pass."""
    grid = snapshots.grid
    modes, eigenvalues = pod_basis(snapshots, r)
    solver = solver or PoissonSolver(grid)
    psi_modes = solver.solve(modes).reshape(grid.n, r)
    b, A, B = galerkin_tensors(modes, psi_modes, params, grid, snapshots.weights)
    logger.info("built %d-mode ROM on %s grid", r, grid)
    return GalerkinRom(r, modes, psi_modes, b, A, B, eigenvalues, snapshots.weights, grid)


def rom_rhs(a: ArrayLike, rom: GalerkinRom) -> Array:
    """b + A a + a^T B a."""
    a = np.asarray(a, dtype=np.float64)
    return rom.b + rom.A @ a + np.einsum("imn,m,n->i", rom.B, a, a)


def truncate(rom: GalerkinRom, r: int) -> GalerkinRom:
    """Nested ROM on the leading r modes."""
    if not 0 <= r <= rom.r:
        raise ShapeMismatch(f"cannot truncate a {rom.r}-mode ROM to {r} modes")
    return replace(
        rom,
        r=r,
        vorticity_basis=rom.vorticity_basis[:, :r],
        streamfunction_basis=rom.streamfunction_basis[:, :r],
        b=rom.b[:r],
        A=rom.A[:r, :r],
        B=rom.B[:r, :r, :r],
    )


def relative_kinetic_energy(
    rom: GalerkinRom, r: int, window: ArrayLike | None = None
) -> float:
    """Energy fraction captured by the first r modes.

    Without a window this is the eigenvalue ratio; with a window (n x K fields) it is
    the D-norm fraction of the window that the projection onto r modes retains.
    """
    limit = rom.eigenvalues.size if window is None else rom.r
    if not 0 <= r <= limit:
        raise ShapeMismatch(f"r={r} exceeds the {limit} available modes")
    if window is None:
        total = float(np.sum(rom.eigenvalues))
        return float(np.sum(rom.eigenvalues[:r]) / total) if total > 0 else 0.0
    fields = np.asarray(window, dtype=np.float64)
    coefficients = truncate(rom, r).project(fields)
    total = float(np.sum(rom.weights[:, None] * fields**2))
    return float(np.sum(coefficients**2) / total) if total > 0 else 0.0


def reconstruction_error(rom: GalerkinRom, snapshots: ArrayLike, r: int) -> float:
    """Relative D-norm error of reconstructing snapshots (n x K) from r modes."""
    fields = np.asarray(snapshots, dtype=np.float64)
    reduced = truncate(rom, r)
    residual = fields - reduced.reconstruct(reduced.project(fields))
    total = float(np.sum(rom.weights[:, None] * fields**2))
    return float(np.sqrt(np.sum(rom.weights[:, None] * residual**2) / total)) if total else 0.0


@dataclass
class RomModel:
    """Reduced dynamics integrated with the same embedded pair as the full model."""

    rom: GalerkinRom
    controller: StepController = field(default_factory=StepController)
    fixed_step: float | None = None

    @property
    def n(self) -> int:
        return self.rom.r

    def rhs(self, t: float, a: Array) -> Array:
        return rom_rhs(a, self.rom)

    def propagator(self, dt: float) -> Callable[[Array], Array]:
        def run(a: Array) -> Array:
            return integrate_ode(
                self.rhs, a, 0.0, dt, fixed_step=self.fixed_step, controller=self.controller
            ).y

        return run


def build_projection_pair(rom: GalerkinRom, space: str = "vorticity") -> ProjectionPair:
    """Lift and restriction between ROM coordinates and the full state.

    Both spaces act on vorticity states with M = D. The vorticity space lifts with the
    POD modes V. The streamfunction space lifts with -Laplacian V-tilde, the vorticity of
    the streamfunction modes, so its restriction is V-tilde^T Laplacian^T D Laplacian
    applied to psi = -Laplacian^-1 omega.

    Raises:
        BasisDegenerate: If biorthogonality fails after re-orthogonalization.
    """
    root = sp.diags_array(np.sqrt(rom.weights))
    if space == "vorticity":
        return ProjectionPair.build(rom.vorticity_basis, m_factor=sp.csr_array(root))
    if space == "streamfunction":
        phi = -np.asarray(laplacian_matrix(rom.grid) @ rom.streamfunction_basis)
        return ProjectionPair.build(phi, m_factor=sp.csr_array(root))
    raise ValueError(f"unknown projection space {space!r}")
