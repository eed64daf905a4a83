"""
Two-sample classifier test: real versus generated voxel images.
"""

import copy
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from loguru import logger
from scipy.stats import rankdata

from .errors import ContractError
from .models import ClassifierConfig
from .representation import VoxelImage

__all__ = [
    "ClassifierNet",
    "ClassifierResult",
    "image_features",
    "stratified_split",
    "train_classifier",
    "auc",
]

IMBALANCE_WARNING_RATIO = 10.0


class ClassifierNet(nn.Module):
    """Two hidden layers with ReLU and a single logit."""

    def __init__(self, n_inputs: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(n_inputs, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)[:, 0]


@dataclass(eq=False)
class ClassifierResult:
    model: ClassifierNet
    test_scores: np.ndarray
    test_labels: np.ndarray
    auc: float
    epochs: int
    val_losses: List[float]


def image_features(images: Sequence[VoxelImage]) -> np.ndarray:
    """Flattened log(1 + E[MeV]) per voxel."""
    return np.stack([np.log1p(img.energies).reshape(-1) for img in images]).astype(np.float32)


def stratified_split(labels: np.ndarray, train_fraction: float, val_fraction: float,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays (train, val, test) with each class split in the same proportions."""
    parts = ([], [], [])
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_train = int(round(train_fraction * len(idx)))
        n_val = int(round(val_fraction * len(idx)))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train: n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """
    Probability that a random positive scores above a random negative.

    Computed from average ranks, so tied scores count one half.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels differ in length")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs both classes in the test set")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for lo in range(0, n, batch_size):
        yield order[lo: lo + batch_size]


def _mean_loss(model: nn.Module, x: torch.Tensor, y: torch.Tensor, loss_fn) -> float:
    with torch.no_grad():
        return float(loss_fn(model(x), y))


def train_classifier(real: Sequence[VoxelImage], generated: Sequence[VoxelImage],
                     cfg: ClassifierConfig, seed: int) -> ClassifierResult:
    """
    Train a real-vs-generated classifier and score its held-out test split.

    Real images are the positive class. Early stopping keeps the weights with
    the lowest validation loss.
    """
    if not real or not generated:
        raise ContractError("classifier needs both real and generated images")
    ratio = max(len(real), len(generated)) / min(len(real), len(generated))
    if ratio > IMBALANCE_WARNING_RATIO:
        logger.warning(f"Class imbalance {ratio:.1f}:1 between real and generated images")

    x = np.concatenate([image_features(real), image_features(generated)])
    y = np.concatenate([np.ones(len(real)), np.zeros(len(generated))]).astype(np.float32)
    rng = np.random.default_rng(seed)
    train_idx, val_idx, test_idx = stratified_split(y, cfg.train_fraction, cfg.val_fraction, rng)
    if len(np.unique(y[test_idx])) < 2 or len(train_idx) == 0:
        raise ContractError("too few images to give every split both classes")

    x_t, y_t = torch.from_numpy(x), torch.from_numpy(y)
    x_train, y_train = x_t[train_idx], y_t[train_idx]
    x_val, y_val = x_t[val_idx], y_t[val_idx]

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ClassifierNet(x.shape[1], cfg.hidden)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()
    generator = torch.Generator().manual_seed(seed)

    best_loss, best_state, stale = float("inf"), copy.deepcopy(model.state_dict()), 0
    val_losses: List[float] = []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        for index in _batches(len(train_idx), cfg.batch_size, generator):
            optimizer.zero_grad()
            loss_fn(model(x_train[index]), y_train[index]).backward()
            optimizer.step()
        model.eval()
        val_loss = _mean_loss(model, x_val, y_val, loss_fn) if len(val_idx) else 0.0
        val_losses.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_state, stale = val_loss, copy.deepcopy(model.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug(f"Early stopping after epoch {epoch}")
                break

    model.load_state_dict(best_state)
    model.eval()
    with torch.no_grad():
        scores = model(x_t[test_idx]).double().numpy()
    labels = y[test_idx].astype(np.int64)
    value = auc(scores, labels)
    logger.info(f"🎯 Classifier AUC {value:.3f} on {len(test_idx)} test images")
    return ClassifierResult(model=model, test_scores=scores, test_labels=labels, auc=value,
                            epochs=epoch, val_losses=val_losses)
