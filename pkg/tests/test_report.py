"""
Tests for the comparison report.
"""

import json

import pytest

from calo_diffsim.container import write_dataset
from calo_diffsim.models import ClassifierConfig, DatasetFormat, EvaluationConfig
from calo_diffsim.report import GeneratedSet, build_report, encoded_size, render_table, write_report
from calo_diffsim.representation import voxelize

CLF = ClassifierConfig(hidden=8, max_epochs=2)


@pytest.fixture(scope="module")
def report(geometry, events, other_events):
    images = [voxelize(geometry, e) for e in other_events]
    generated = [
        GeneratedSet(name="pc", representation="pointcloud", events=list(other_events)),
        GeneratedSet(name="img", representation="image", images=images, n_parameters=1234,
                     disk_size_bytes=2048, sample_seconds_per_1k=1.5),
        GeneratedSet(name="nothing", representation="image"),
    ]
    return build_report(geometry, events, generated, EvaluationConfig(), CLF, seed=0,
                        reference_disk_size_bytes=4096)


class TestBuildReport:
    """Test the content of a report."""

    def test_point_cloud_comparisons(self, report):
        """Test that point-cloud sets are compared as images and cell by cell."""
        pc = report.models[0]
        assert [c.observable for c in pc.comparisons] == [
            "total_energy", "n_voxel_hits", "mean_profile_x", "mean_profile_y", "mean_profile_z",
            "n_cell_hits", "cell_mean_profile_x", "cell_mean_profile_y", "cell_mean_profile_z",
            "cell_log10_energy",
        ]
        assert pc.auc is not None and 0.0 <= pc.auc <= 1.0
        assert all(c.emd >= 0.0 for c in pc.comparisons)

    def test_missing_figures_are_gaps(self, report):
        """Test that unknown parameter counts and sizes are listed, not invented."""
        pc = report.models[0]
        assert pc.n_parameters is None
        assert "n_parameters: not available" in pc.gaps
        assert "disk_size_bytes: not available" in pc.gaps

    def test_image_set(self, report):
        """Test that image sets get voxel comparisons only."""
        img = report.models[1]
        assert len(img.comparisons) == 5
        assert img.gaps == []
        assert img.n_parameters == 1234

    def test_empty_set(self, report):
        """Test that a set without samples is reported as a gap."""
        nothing = report.models[2]
        assert nothing.comparisons == []
        assert nothing.auc is None
        assert any(g.startswith("voxel comparisons") for g in nothing.gaps)

    def test_layer_maps(self, report):
        """Test mean layer maps for the reference and each generated set."""
        assert "reference/layer0" in report.layer_maps
        assert "pc/layer9" in report.layer_maps
        assert "nothing/layer0" not in report.layer_maps
        assert len(report.layer_maps["img/layer4"]) == 11

    def test_self_comparison_has_zero_emd(self, geometry, events):
        """Test that the reference compared with itself scores zero EMD everywhere."""
        result = build_report(geometry, events,
                              [GeneratedSet(name="self", representation="pointcloud",
                                            events=list(events))],
                              EvaluationConfig(), CLF, seed=0)
        assert all(c.emd == pytest.approx(0.0, abs=1e-12) for c in result.models[0].comparisons)
        assert not any(any(c.out_of_band) for c in result.models[0].comparisons)


class TestRendering:
    """Test the table and files written from a report."""

    def test_table(self, report):
        """Test that the table lists every model with n/a for unknown figures."""
        table = render_table(report)
        assert "pc" in table and "img" in table
        assert "1,234" in table
        assert "n/a" in table
        assert "Full-scale reference" in table
        assert "gap: n_parameters: not available" in table

    def test_write_is_deterministic(self, report, tmp_path):
        """Test that writing the same report twice gives identical files."""
        first = write_report(report, tmp_path / "a")
        second = write_report(report, tmp_path / "b")
        assert set(first) == set(second)
        for key in first:
            assert first[key].read_bytes() == second[key].read_bytes()
        assert "pc_cell_log10_energy" in first
        assert "map_reference_layer0" in first
        data = json.loads(first["data"].read_text())
        assert data["n_reference"] == report.n_reference

    def test_plot_series(self, report, tmp_path):
        """Test the per-bin rows of one plot series."""
        written = write_report(report, tmp_path)
        rows = written["img_mean_profile_z"].read_text().splitlines()
        assert rows[0] == "bin_lo,bin_hi,reference,generated,ratio,out_of_band"
        assert len(rows) == 1 + 11


class TestEncodedSize:
    """Test on-disk size accounting."""

    def test_matches_written_file(self, geometry, events, tmp_path):
        """Test that the computed size is the size of the written file."""
        path = write_dataset(events, tmp_path / "events.calo", DatasetFormat.POINTCLOUD, geometry)
        assert encoded_size(events, DatasetFormat.POINTCLOUD, geometry) == path.stat().st_size
