#!/usr/bin/env python3
"""Tests for mfda.rom module."""

import numpy as np
import pytest

from mfda.errors import RankDeficient, ShapeMismatch
from mfda.io import BasisArchive
from mfda.qge import DAY, Grid2D, QgeModel
from mfda.rom import (
    RomModel,
    SnapshotSet,
    _simpson_1d,
    build_projection_pair,
    collect_snapshots,
    pod_basis,
    reconstruction_error,
    relative_kinetic_energy,
    rom_rhs,
    simpson_weights,
    truncate,
)


class TestSimpson:
    """Tests for the quadrature weights."""

    @pytest.mark.parametrize("nodes", [4, 5, 8, 9])
    def test_weights_sum_to_length(self, nodes: int) -> None:
        """Test odd and even node counts integrate constants exactly."""
        assert np.sum(_simpson_1d(nodes, 0.25)) == pytest.approx((nodes - 1) * 0.25)

    def test_integrates_smooth_mode(self, small_grid: Grid2D) -> None:
        """Test the 2-D weights integrate sin(pi x) sin(pi y / 2) over the box."""
        x, y = small_grid.mesh()
        f = np.sin(np.pi * x) * np.sin(np.pi * y / 2.0)
        integral = simpson_weights(small_grid) @ f.reshape(-1)
        assert integral == pytest.approx(8.0 / np.pi**2, rel=1e-3)

    def test_positive(self, small_grid: Grid2D) -> None:
        """Test every interior weight is positive."""
        assert np.all(simpson_weights(small_grid) > 0.0)


class TestSnapshotSet:
    """Tests for snapshot containers and collection."""

    def test_too_few(self, small_grid: Grid2D) -> None:
        """Test a single snapshot is rejected."""
        with pytest.raises(ShapeMismatch):
            SnapshotSet(
                np.zeros((small_grid.n, 1)), [0.0], simpson_weights(small_grid), small_grid
            )

    def test_from_fields(self, small_grid: Grid2D) -> None:
        """Test stacked fields become columns."""
        fields = np.arange(2 * small_grid.n, dtype=float).reshape(2, *small_grid.shape)
        s = SnapshotSet.from_fields(fields, [0.0, 1.0], small_grid)
        assert s.count == 2
        np.testing.assert_array_equal(s.snapshots[:, 1], fields[1].reshape(-1))

    def test_collect(self, small_grid: Grid2D) -> None:
        """Test snapshots are spacing apart and reported one by one."""
        seen: list[int] = []
        s = collect_snapshots(QgeModel(small_grid), 3, DAY, on_snapshot=seen.append)
        assert seen == [0, 1, 2]
        np.testing.assert_allclose(s.times, [0.0, DAY, 2 * DAY])
        np.testing.assert_array_equal(s.snapshots[:, 0], 0.0)
        assert np.all(np.isfinite(s.snapshots))


class TestPod:
    """Tests for the POD basis."""

    def test_d_orthonormal(self, synthetic_archive: BasisArchive) -> None:
        """Test V^T D V = I."""
        s = synthetic_archive.snapshots
        modes, _ = pod_basis(s, 8)
        np.testing.assert_allclose(modes.T @ (s.weights[:, None] * modes), np.eye(8), atol=1e-10)

    def test_eigenvalues_nonincreasing(self, synthetic_archive: BasisArchive) -> None:
        """Test the spectrum is sorted and nonnegative."""
        _, eigenvalues = pod_basis(synthetic_archive.snapshots, 3)
        assert eigenvalues.size == 12
        assert np.all(np.diff(eigenvalues) <= 1e-12)
        assert np.all(eigenvalues >= 0.0)

    def test_rank_deficient(self, synthetic_archive: BasisArchive) -> None:
        """Test more modes than the numerical rank raises."""
        s = synthetic_archive.snapshots
        repeated = SnapshotSet(
            np.column_stack([s.snapshots[:, :2]] * 3), np.arange(6.0), s.weights, s.grid
        )
        with pytest.raises(RankDeficient):
            pod_basis(repeated, 3)

    def test_matches_weighted_svd(self, synthetic_archive: BasisArchive) -> None:
        """Test the snapshot-method modes equal the left singular vectors of D^1/2 X."""
        s = synthetic_archive.snapshots
        modes, eigenvalues = pod_basis(s, 6)
        root = np.sqrt(s.weights)[:, None]
        left, singular, _ = np.linalg.svd(root * s.snapshots, full_matrices=False)
        expected = left[:, :6] / root
        signs = np.sign(np.sum(s.weights[:, None] * modes * expected, axis=0))
        np.testing.assert_allclose(modes, expected * signs, atol=1e-8 * np.max(np.abs(expected)))
        np.testing.assert_allclose(eigenvalues, singular**2, rtol=1e-8, atol=1e-12)


class TestGalerkinRom:
    """Tests for the reduced model."""

    def test_matches_projected_full_rhs(self, synthetic_archive: BasisArchive) -> None:
        """Test the ROM tendency equals V^T D f(V a) for the full-order tendency f."""
        rom = synthetic_archive.rom
        model = QgeModel(rom.grid, synthetic_archive.params)
        a = np.linspace(-1.0, 1.0, rom.r)
        expected = rom.project(model.rhs(0.0, rom.reconstruct(a)))
        np.testing.assert_allclose(
            rom_rhs(a, rom), expected, rtol=1e-8, atol=1e-8 * np.abs(expected).max()
        )

    def test_truncate_nests(self, synthetic_archive: BasisArchive) -> None:
        """Test truncation keeps the leading blocks."""
        rom = synthetic_archive.rom
        small = truncate(rom, 3)
        assert small.r == 3
        np.testing.assert_array_equal(small.A, rom.A[:3, :3])
        np.testing.assert_array_equal(small.B, rom.B[:3, :3, :3])

    def test_truncate_too_far(self, synthetic_archive: BasisArchive) -> None:
        """Test truncating beyond the basis raises."""
        with pytest.raises(ShapeMismatch):
            truncate(synthetic_archive.rom, 7)

    def test_project_reconstruct(self, synthetic_archive: BasisArchive) -> None:
        """Test project is a left inverse of reconstruct."""
        rom = synthetic_archive.rom
        a = np.arange(1.0, rom.r + 1.0)
        np.testing.assert_allclose(rom.project(rom.reconstruct(a)), a, atol=1e-10)

    def test_propagator_finite(self, synthetic_archive: BasisArchive) -> None:
        """Test the reduced propagator returns r finite coordinates."""
        rom = synthetic_archive.rom
        out = RomModel(rom).propagator(0.1 * DAY)(np.zeros(rom.r))
        assert out.shape == (rom.r,)
        assert np.all(np.isfinite(out))


class TestEnergy:
    """Tests for energy and reconstruction diagnostics."""

    def test_full_rank_is_one(self, synthetic_archive: BasisArchive) -> None:
        """Test all modes capture all the energy."""
        assert relative_kinetic_energy(synthetic_archive.rom, 12) == pytest.approx(1.0)

    def test_monotone(self, synthetic_archive: BasisArchive) -> None:
        """Test captured energy grows with r."""
        rom = synthetic_archive.rom
        values = [relative_kinetic_energy(rom, r) for r in range(7)]
        assert values[0] == 0.0
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_window_matches_eigenvalues(self, synthetic_archive: BasisArchive) -> None:
        """Test the snapshot window reproduces the eigenvalue ratio."""
        rom = synthetic_archive.rom
        window = synthetic_archive.snapshots.snapshots
        assert relative_kinetic_energy(rom, 4, window) == pytest.approx(
            relative_kinetic_energy(rom, 4), rel=1e-8
        )

    def test_reconstruction_error(self, synthetic_archive: BasisArchive) -> None:
        """Test the squared error is the energy left out."""
        rom = synthetic_archive.rom
        window = synthetic_archive.snapshots.snapshots
        error = reconstruction_error(rom, window, 6)
        assert error**2 == pytest.approx(1.0 - relative_kinetic_energy(rom, 6), rel=1e-6)


class TestProjectionPair:
    """Tests for the ROM lift and restriction."""

    @pytest.mark.parametrize("space", ["vorticity", "streamfunction"])
    def test_biorthogonal(self, synthetic_archive: BasisArchive, space: str) -> None:
        """Test both spaces give a biorthogonal pair."""
        pair = build_projection_pair(synthetic_archive.rom, space)
        assert pair.r == 6
        assert pair.biorthogonality_error() <= 1e-8

    @pytest.mark.parametrize("space", ["vorticity", "streamfunction"])
    def test_acts_on_vorticity(self, synthetic_archive: BasisArchive, space: str) -> None:
        """Test both spaces restrict V a to a and lift a to V a."""
        rom = synthetic_archive.rom
        pair = build_projection_pair(rom, space)
        a = np.arange(1.0, 7.0)
        omega = rom.vorticity_basis @ a
        np.testing.assert_allclose(pair.restrict(omega), a, atol=1e-7)
        np.testing.assert_allclose(pair.lift(a), omega, atol=1e-7 * np.max(np.abs(omega)))

    def test_spaces_agree(self, synthetic_archive: BasisArchive) -> None:
        """Test the streamfunction pair restricts snapshots like the vorticity pair."""
        rom = synthetic_archive.rom
        snapshots = synthetic_archive.snapshots.snapshots
        np.testing.assert_allclose(
            build_projection_pair(rom, "streamfunction").restrict(snapshots),
            build_projection_pair(rom, "vorticity").restrict(snapshots),
            atol=1e-7,
        )

    @pytest.mark.parametrize("space", ["vorticity", "streamfunction"])
    def test_projector_idempotent(self, synthetic_archive: BasisArchive, space: str) -> None:
        """Test Phi* Phi = I and (Phi Phi*)^2 = Phi Phi* for the Galerkin basis."""
        pair = build_projection_pair(synthetic_archive.rom, space)
        np.testing.assert_allclose(pair.phi_star @ pair.phi, np.eye(pair.r), atol=1e-8)
        projector = pair.projector()
        np.testing.assert_allclose(projector @ projector, projector, atol=1e-8)

    def test_vorticity_restrict_is_project(self, synthetic_archive: BasisArchive) -> None:
        """Test the vorticity pair restricts like the ROM projection."""
        rom = synthetic_archive.rom
        pair = build_projection_pair(rom)
        omega = synthetic_archive.snapshots.snapshots[:, 0]
        np.testing.assert_allclose(pair.restrict(omega), rom.project(omega), atol=1e-10)

    def test_unknown_space(self, synthetic_archive: BasisArchive) -> None:
        """Test an unknown space raises."""
        with pytest.raises(ValueError):
            build_projection_pair(synthetic_archive.rom, "velocity")
