"""
Unit tests for cell lattice arithmetic.
"""

import numpy as np
import pytest

from calo_diffsim.errors import BoundsError, ContractError, OutOfAcceptanceError
from calo_diffsim.geometry import (
    CellIndex,
    apply_threshold,
    cell_center,
    cell_centers,
    flat_index,
    quantize,
    quantize_many,
    smear,
    smear_positions,
    threshold_mask,
    unflatten_index,
)
from calo_diffsim.models import CellHit, GeometrySpec


class TestGeometrySpec:
    """Test the lattice description itself."""

    def test_defaults(self, geometry):
        """Test the default 55^3 lattice with 11^3 voxels."""
        assert geometry.n_cells_per_axis == 55
        assert geometry.n_voxels_per_axis == 11
        assert geometry.max_points == 200
        assert geometry.energy_threshold == 0.3
        assert geometry.lower_edges == (-275.0, -275.0, 0.0)
        assert geometry.upper_edges[2] == pytest.approx(126.5)

    def test_group_must_divide(self):
        """Test that voxel grouping must divide the cell count."""
        with pytest.raises(ValueError):
            GeometrySpec(n_cells_per_axis=55, voxel_group=4)

    def test_geometry_hash_tracks_fields(self, geometry):
        """Test that any geometry change changes the digest."""
        assert len(geometry.geometry_hash()) == 32
        assert geometry.geometry_hash() == GeometrySpec().geometry_hash()
        assert geometry.geometry_hash() != GeometrySpec(energy_threshold=0.5).geometry_hash()


class TestCellCenters:
    """Test index to position mapping."""

    def test_first_cell(self, geometry):
        """Test the center of the corner cell."""
        center = cell_center(geometry, (0, 0, 0))
        assert center == pytest.approx([-270.0, -270.0, 1.15])

    def test_out_of_range_index(self, geometry):
        """Test that indices outside the lattice are rejected."""
        with pytest.raises(BoundsError):
            cell_center(geometry, (55, 0, 0))
        with pytest.raises(BoundsError):
            cell_centers(geometry, np.array([[0, -1, 0]]))

    def test_centers_quantize_to_their_cell(self, geometry):
        """Test that every cell center maps back onto its own index."""
        rng = np.random.default_rng(0)
        idx = rng.integers(0, 55, size=(500, 3))
        assert np.array_equal(quantize_many(geometry, cell_centers(geometry, idx)), idx)

    def test_flat_index_inverse(self, geometry):
        """Test that flattening and unflattening agree."""
        idx = np.array([[0, 0, 0], [54, 54, 54], [3, 17, 40]])
        flat = flat_index(geometry, idx)
        assert flat[1] == 55 ** 3 - 1
        assert np.array_equal(unflatten_index(geometry, flat), idx)


class TestQuantize:
    """Test position to index mapping."""

    def test_returns_named_index(self, geometry):
        """Test that a single quantization returns a CellIndex."""
        idx = quantize(geometry, (0.0, 0.0, 0.0))
        assert isinstance(idx, CellIndex)
        assert idx == CellIndex(27, 27, 0)

    def test_interior_edge_goes_to_higher_cell(self, geometry):
        """Test that a position on an interior edge belongs to the cell above it."""
        assert quantize(geometry, (-265.0, -275.0, 0.0)) == CellIndex(1, 0, 0)

    def test_upper_edge_inclusive(self, geometry):
        """Test that the global upper edge belongs to the last cell."""
        assert quantize(geometry, geometry.upper_edges) == CellIndex(54, 54, 54)

    def test_outside_lattice(self, geometry):
        """Test that positions outside the lattice raise."""
        with pytest.raises(OutOfAcceptanceError):
            quantize(geometry, (300.0, 0.0, 10.0))
        with pytest.raises(OutOfAcceptanceError):
            quantize(geometry, (0.0, 0.0, -0.01))

    def test_nan_is_rejected(self, geometry):
        """Test that NaN coordinates raise instead of landing in a cell."""
        with pytest.raises(OutOfAcceptanceError):
            quantize(geometry, (float("nan"), 0.0, 10.0))


class TestSmear:
    """Test uniform within-cell smearing."""

    def test_smeared_hit_stays_in_cell(self, geometry):
        """Test that smearing keeps cell, energy and marks the hit."""
        rng = np.random.default_rng(3)
        center = cell_center(geometry, (10, 20, 30))
        hit = CellHit(position=tuple(center), energy=1.5)
        for _ in range(50):
            moved = smear(geometry, hit, rng)
            assert moved.is_smeared
            assert moved.energy == 1.5
            assert quantize(geometry, moved.position) == CellIndex(10, 20, 30)

    def test_smearing_twice_is_an_error(self, geometry):
        """Test that a smeared hit cannot be smeared again."""
        hit = CellHit(position=(5.0, 5.0, 1.15), energy=1.0, is_smeared=True)
        with pytest.raises(ContractError):
            smear(geometry, hit, np.random.default_rng(0))

    def test_smearing_preserves_cell_histogram(self, geometry):
        """Test that cell-width histograms are unchanged by smearing."""
        rng = np.random.default_rng(5)
        idx = rng.integers(0, 55, size=(2000, 3))
        centers = cell_centers(geometry, idx)
        moved = smear_positions(geometry, centers, rng)
        assert not np.array_equal(moved, centers)
        assert np.array_equal(quantize_many(geometry, moved), idx)

    def test_smearing_covers_the_cell(self, geometry):
        """Test that displacements spread over the whole cell width."""
        rng = np.random.default_rng(9)
        centers = np.repeat(cell_centers(geometry, np.array([[27, 27, 27]])), 4000, axis=0)
        offsets = smear_positions(geometry, centers, rng) - centers
        assert offsets[:, 0].min() < -4.5 and offsets[:, 0].max() > 4.5
        assert np.abs(offsets[:, 2]).max() <= 1.15


class TestThreshold:
    """Test the inclusive energy threshold."""

    def test_threshold_is_inclusive(self, geometry):
        """Test that a hit exactly at threshold survives."""
        mask = threshold_mask(geometry, np.array([0.3, 0.29999, 5.0, 0.0]))
        assert mask.tolist() == [True, False, True, False]

    def test_apply_threshold_keeps_order(self, geometry):
        """Test that surviving hits keep their relative order."""
        hits = [
            CellHit(position=(0.0, 0.0, 1.15), energy=e)
            for e in (2.0, 0.1, 0.3, 0.2, 1.0)
        ]
        kept = apply_threshold(geometry, hits)
        assert [h.energy for h in kept] == [2.0, 0.3, 1.0]

    def test_apply_threshold_is_idempotent(self, geometry):
        """Test that thresholding twice changes nothing more."""
        rng = np.random.default_rng(4)
        hits = [CellHit(position=(0.0, 0.0, 1.15), energy=float(e))
                for e in rng.exponential(0.5, size=40)]
        once = apply_threshold(geometry, hits)
        assert apply_threshold(geometry, once) == once
        assert 0 < len(once) < len(hits)
