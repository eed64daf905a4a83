"""
Unit tests for the two-sample classifier and its AUC.
"""

import itertools

import numpy as np
import pytest

from calo_diffsim.classifier import auc, image_features, stratified_split, train_classifier
from calo_diffsim.errors import ContractError
from calo_diffsim.models import ClassifierConfig, IncidentParticle
from calo_diffsim.representation import VoxelImage


def _brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def _images(n, layer, seed):
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(n):
        energies = rng.uniform(0.0, 0.5, size=(11, 11, 11))
        energies[5, 5, layer] += rng.uniform(80.0, 120.0)
        images.append(VoxelImage(energies=energies, incident=IncidentParticle(momentum=20.0)))
    return images


class TestAUC:
    """Test the rank-based AUC."""

    def test_matches_pair_counting(self):
        """Test agreement with counting all positive-negative pairs, ties included."""
        rng = np.random.default_rng(0)
        scores = rng.integers(0, 5, size=40).astype(float)
        labels = rng.integers(0, 2, size=40)
        assert auc(scores, labels) == pytest.approx(_brute_force_auc(scores, labels))

    def test_perfect_and_inverted(self):
        """Test the extreme values."""
        labels = np.array([0, 0, 1, 1])
        assert auc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert auc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_all_tied(self):
        """Test that constant scores give one half."""
        assert auc(np.zeros(6), np.array([0, 1, 0, 1, 1, 0])) == 0.5

    def test_single_class(self):
        """Test that AUC needs both classes."""
        with pytest.raises(ContractError):
            auc(np.array([0.1, 0.2]), np.array([1, 1]))


class TestStratifiedSplit:
    """Test the class-balanced split."""

    def test_proportions_and_partition(self):
        """Test that each class is split in the same proportions without overlap."""
        labels = np.array([1] * 10 + [0] * 20)
        train, val, test = stratified_split(labels, 0.6, 0.2, np.random.default_rng(0))
        assert (labels[train] == 1).sum() == 6 and (labels[train] == 0).sum() == 12
        assert (labels[val] == 1).sum() == 2 and (labels[val] == 0).sum() == 4
        assert (labels[test] == 1).sum() == 2 and (labels[test] == 0).sum() == 4
        assert sorted(np.concatenate([train, val, test]).tolist()) == list(range(30))


class TestTrainClassifier:
    """Test training on real versus generated images."""

    def test_features(self):
        """Test the flattened log(1 + E) features."""
        images = _images(2, layer=0, seed=0)
        features = image_features(images)
        assert features.shape == (2, 1331)
        assert features[0] == pytest.approx(np.log1p(images[0].energies).reshape(-1), rel=1e-6)

    def test_separable_samples(self):
        """Test that showers in different layers are told apart."""
        cfg = ClassifierConfig(hidden=16, learning_rate=1e-2, batch_size=16, max_epochs=30,
                               patience=30)
        result = train_classifier(_images(40, 0, 1), _images(40, 10, 2), cfg, seed=0)
        assert result.auc > 0.9
        assert len(result.test_labels) == 16
        assert set(result.test_labels.tolist()) == {0, 1}

    def test_showers_vs_empty_images(self):
        """Test that empty images are told apart from showers."""
        cfg = ClassifierConfig(hidden=16, learning_rate=1e-2, batch_size=16, max_epochs=30,
                               patience=30)
        real = _images(40, 5, 6)
        empty = [VoxelImage(energies=np.zeros((11, 11, 11)), incident=img.incident)
                 for img in real]
        assert train_classifier(real, empty, cfg, seed=1).auc > 0.99

    def test_same_seed_same_auc(self):
        """Test that a fixed seed reproduces the scores."""
        cfg = ClassifierConfig(hidden=8, max_epochs=2)
        real, fake = _images(10, 0, 3), _images(10, 1, 4)
        a = train_classifier(real, fake, cfg, seed=5)
        b = train_classifier(real, fake, cfg, seed=5)
        assert np.array_equal(a.test_scores, b.test_scores)

    def test_empty_sample(self):
        """Test that both classes must be present."""
        with pytest.raises(ContractError):
            train_classifier(_images(4, 0, 0), [], ClassifierConfig(), seed=0)
