"""
Tests for checkpoint discovery and pipeline assembly.
"""

import pytest
import torch

from calo_diffsim.checkpoint import save_checkpoint
from calo_diffsim.discovery import discover_checkpoints, load_bundle
from calo_diffsim.errors import FormatError
from calo_diffsim.models import ModelKind
from calo_diffsim.networks import build_network, parameter_count
from calo_diffsim.pipelines import bundle_kinds, prepare_training


def _write_pipeline(model_dir, representation, geometry, events, hyper):
    kinds = bundle_kinds(representation)
    _, stats = prepare_training(kinds[1], geometry, events, seed=0)
    total = 0
    for kind in kinds:
        torch.manual_seed(0)
        model = build_network(kind, hyper, geometry)
        save_checkpoint(model_dir / f"{kind.value}.ckpt", kind, model, geometry, stats, hyper)
        total += parameter_count(model)
    return total


class TestDiscoverCheckpoints:
    """Test scanning a model directory."""

    def test_missing_directory(self, tmp_path):
        """Test that a missing directory holds no checkpoints."""
        assert discover_checkpoints(tmp_path / "nowhere") == []

    def test_skips_foreign_files(self, tmp_path, geometry, events, tiny_hyper):
        """Test that other suffixes and unreadable checkpoints are ignored."""
        _write_pipeline(tmp_path, "pointcloud", geometry, events, tiny_hyper)
        (tmp_path / "notes.txt").write_text("hello")
        (tmp_path / "broken.ckpt").write_bytes(b"garbage")
        (tmp_path / "sub.ckpt").mkdir()

        found = discover_checkpoints(tmp_path)
        assert sorted(info.kind.value for info in found) == ["cloud", "multiplicity"]
        assert all(info.geometry_hash == geometry.geometry_hash().hex() for info in found)


class TestLoadBundle:
    """Test assembling a two-stage pipeline from disk."""

    def test_pointcloud_pipeline(self, tmp_path, geometry, events, tiny_hyper):
        """Test that a complete point-cloud directory loads as one bundle."""
        total = _write_pipeline(tmp_path, "pointcloud", geometry, events, tiny_hyper)
        bundle = load_bundle(tmp_path, geometry)
        assert bundle.representation == "pointcloud"
        assert bundle.n_parameters == total

    def test_image_pipeline(self, tmp_path, geometry, events, tiny_hyper):
        """Test the image pipeline."""
        _write_pipeline(tmp_path, "image", geometry, events, tiny_hyper)
        assert load_bundle(tmp_path, geometry).representation == "image"

    def test_empty_directory(self, tmp_path, geometry):
        """Test that a directory without checkpoints is refused."""
        with pytest.raises(FormatError):
            load_bundle(tmp_path, geometry)

    def test_missing_stage(self, tmp_path, geometry, events, tiny_hyper):
        """Test that a lone second-stage model is not a pipeline."""
        _write_pipeline(tmp_path, "pointcloud", geometry, events, tiny_hyper)
        (tmp_path / "multiplicity.ckpt").unlink()
        with pytest.raises(FormatError):
            load_bundle(tmp_path, geometry)

    def test_ambiguous_directory(self, tmp_path, geometry, events, tiny_hyper):
        """Test that two complete pipelines need an explicit choice."""
        _write_pipeline(tmp_path, "pointcloud", geometry, events, tiny_hyper)
        _write_pipeline(tmp_path, "image", geometry, events, tiny_hyper)
        with pytest.raises(FormatError):
            load_bundle(tmp_path, geometry)
        assert load_bundle(tmp_path, geometry, representation="image").representation == "image"

    def test_normalization_mismatch(self, tmp_path, geometry, events, other_events, tiny_hyper):
        """Test that the two stages must share their statistics."""
        _write_pipeline(tmp_path, "pointcloud", geometry, events, tiny_hyper)
        _, other = prepare_training(ModelKind.CLOUD, geometry, other_events, seed=0)
        model = build_network(ModelKind.CLOUD, tiny_hyper, geometry)
        save_checkpoint(tmp_path / "cloud.ckpt", ModelKind.CLOUD, model, geometry, other,
                        tiny_hyper)
        with pytest.raises(FormatError):
            load_bundle(tmp_path, geometry)
