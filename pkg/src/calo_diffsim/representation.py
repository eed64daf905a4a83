"""
Point-cloud and image representations of calorimeter showers.

Covers voxelization, the fixed-capacity masked cloud used for training, and the
normalizations each model learns in. Voxelization is lossy and is never
inverted.
"""

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import numpy.typing as npt
from loguru import logger

from .errors import CapacityError, ContractError, DomainError
from .geometry import cell_centers, flat_index, quantize_many, smear_positions
from .models import (
    MOMENTUM_MAX_GEV,
    CellHit,
    CloudNormalization,
    GeometrySpec,
    ImageNormalization,
    IncidentParticle,
)

__all__ = [
    "PointCloudEvent",
    "VoxelImage",
    "MaskedCloud",
    "NormalizedImage",
    "LayerEnergyVector",
    "validate_event",
    "smear_event",
    "voxelize",
    "voxel_hits",
    "layer_energies",
    "to_masked",
    "from_masked",
    "compute_cloud_normalization",
    "normalize_cloud",
    "denormalize_cloud",
    "normalize_momentum",
    "normalize_image",
    "denormalize_image",
    "compute_image_normalization",
]

LayerEnergyVector = npt.NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class PointCloudEvent:
    """Variable-length set of cell hits; ``hits`` rows are (x, y, z, E[MeV])."""

    incident: IncidentParticle
    hits: np.ndarray
    is_smeared: bool = False

    def __post_init__(self):
        hits = np.asarray(self.hits, dtype=np.float64).reshape(-1, 4)
        object.__setattr__(self, "hits", hits)

    @property
    def n_hits(self) -> int:
        return int(self.hits.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return self.hits[:, :3]

    @property
    def energies(self) -> np.ndarray:
        return self.hits[:, 3]

    @property
    def total_energy(self) -> float:
        return float(self.energies.sum())

    def iter_hits(self) -> Iterator[CellHit]:
        for row in self.hits:
            yield CellHit(position=(float(row[0]), float(row[1]), float(row[2])),
                          energy=float(row[3]), is_smeared=self.is_smeared)

    def same_as(self, other: "PointCloudEvent") -> bool:
        """Field-for-field equality with hits compared as a multiset."""
        if self.incident != other.incident or self.is_smeared != other.is_smeared:
            return False
        if self.n_hits != other.n_hits:
            return False
        a = self.hits[np.lexsort(self.hits.T[::-1])]
        b = other.hits[np.lexsort(other.hits.T[::-1])]
        return bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class VoxelImage:
    """Dense non-negative energy grid indexed ``[x, y, z]``, MeV per voxel."""

    energies: np.ndarray
    incident: IncidentParticle

    def __post_init__(self):
        energies = np.asarray(self.energies, dtype=np.float64)
        if energies.ndim != 3 or len(set(energies.shape)) != 1:
            raise ContractError(f"image must be a cube, got shape {energies.shape}")
        if not np.all(np.isfinite(energies)) or np.any(energies < 0):
            raise DomainError("image energies must be finite and non-negative")
        object.__setattr__(self, "energies", energies)

    @property
    def resolution(self) -> int:
        return int(self.energies.shape[0])

    @property
    def total_energy(self) -> float:
        return float(self.energies.sum())

    def same_as(self, other: "VoxelImage") -> bool:
        return self.incident == other.incident and bool(
            np.array_equal(self.energies, other.energies)
        )


@dataclass(frozen=True, eq=False)
class MaskedCloud:
    """Fixed-capacity padded cloud; masked rows are exactly zero."""

    features: np.ndarray
    mask: np.ndarray
    incident: IncidentParticle
    condition: np.ndarray = field(default=None)

    @property
    def n_hits(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class NormalizedImage:
    """Per-layer-normalized voxels with the layer energies needed to undo it."""

    voxels: np.ndarray
    layers: LayerEnergyVector
    empty_layers: np.ndarray


def validate_event(g: GeometrySpec, event: PointCloudEvent) -> None:
    """Raise ContractError unless every PointCloudEvent invariant holds."""
    if event.n_hits > g.max_points:
        raise ContractError(f"{event.n_hits} hits exceed max_points={g.max_points}")
    if event.n_hits == 0:
        return
    if np.any(event.energies < g.energy_threshold):
        raise ContractError("event holds hits below threshold")
    cells = flat_index(g, quantize_many(g, event.positions))
    if len(np.unique(cells)) != len(cells):
        raise ContractError("two hits share one cell")
    if not event.is_smeared:
        centers = cell_centers(g, quantize_many(g, event.positions))
        if not np.allclose(centers, event.positions, rtol=0.0, atol=1e-9):
            raise ContractError("discrete event has positions off cell centers")


def smear_event(g: GeometrySpec, event: PointCloudEvent,
                rng: np.random.Generator) -> PointCloudEvent:
    """Uniformly smear every hit of a discrete event inside its cell."""
    if event.is_smeared:
        raise ContractError("event is already smeared")
    hits = event.hits.copy()
    if event.n_hits:
        hits[:, :3] = smear_positions(g, event.positions, rng)
    return PointCloudEvent(incident=event.incident, hits=hits, is_smeared=True)


def voxelize(g: GeometrySpec, event: PointCloudEvent, group: Optional[int] = None) -> VoxelImage:
    """
    Sum cell energies into ``group``-cubed voxels (default ``g.voxel_group``).

    ``group=1`` gives the full-granularity image. Smeared positions are quantized
    first, so a smeared event voxelizes exactly like its discrete parent.
    """
    group = g.voxel_group if group is None else group
    if g.n_cells_per_axis % group:
        raise ContractError(f"group {group} does not divide {g.n_cells_per_axis}")
    m = g.n_cells_per_axis // group
    grid = np.zeros(m ** 3, dtype=np.float64)
    if event.n_hits:
        vidx = quantize_many(g, event.positions) // group
        flat = (vidx[:, 0] * m + vidx[:, 1]) * m + vidx[:, 2]
        grid = np.bincount(flat, weights=event.energies, minlength=m ** 3)
    return VoxelImage(energies=grid.reshape(m, m, m), incident=event.incident)


def voxel_hits(img: VoxelImage, threshold: float) -> int:
    """Number of voxels at or above threshold."""
    return int(np.count_nonzero(img.energies >= threshold))


def layer_energies(img: VoxelImage) -> LayerEnergyVector:
    """Energy per z layer of the image."""
    return img.energies.sum(axis=(0, 1))


def to_masked(g: GeometrySpec, event: PointCloudEvent) -> MaskedCloud:
    """Pad an event to ``g.max_points`` rows with an explicit mask."""
    if event.n_hits > g.max_points:
        raise CapacityError(f"{event.n_hits} hits exceed capacity {g.max_points}")
    features = np.zeros((g.max_points, 4), dtype=np.float64)
    features[: event.n_hits] = event.hits
    mask = np.zeros(g.max_points, dtype=bool)
    mask[: event.n_hits] = True
    condition = np.array([event.incident.log_momentum, float(event.n_hits)])
    return MaskedCloud(features=features, mask=mask, incident=event.incident,
                       condition=condition)


def from_masked(mc: MaskedCloud, is_smeared: bool = False) -> PointCloudEvent:
    return PointCloudEvent(incident=mc.incident, hits=mc.features[mc.mask].copy(),
                           is_smeared=is_smeared)


def _log_energies(energies: np.ndarray) -> np.ndarray:
    if np.any(energies <= 0):
        raise DomainError("cloud energies must be strictly positive")
    return np.log10(energies)


def compute_cloud_normalization(clouds: Sequence[MaskedCloud]) -> CloudNormalization:
    """Dataset statistics for the cloud and multiplicity models."""
    log_e = np.concatenate([_log_energies(mc.features[mc.mask, 3]) for mc in clouds])
    log_n = np.log(np.array([max(mc.n_hits, 1) for mc in clouds], dtype=np.float64))
    return CloudNormalization(
        log_energy_mean=float(log_e.mean()),
        log_energy_std=float(max(log_e.std(), 1e-6)),
        log_hits_mean=float(log_n.mean()),
        log_hits_std=float(max(log_n.std(), 1e-6)),
    )


def _extent(g: GeometrySpec):
    return np.asarray(g.lower_edges), np.asarray(g.upper_edges)


def normalize_cloud(g: GeometrySpec, mc: MaskedCloud, stats: CloudNormalization) -> MaskedCloud:
    """Coordinates to [-1, 1] over the lattice, log10 energy standardized."""
    lo, hi = _extent(g)
    out = np.zeros_like(mc.features)
    rows = mc.features[mc.mask]
    out[mc.mask, :3] = 2.0 * (rows[:, :3] - lo) / (hi - lo) - 1.0
    out[mc.mask, 3] = (_log_energies(rows[:, 3]) - stats.log_energy_mean) / stats.log_energy_std
    return MaskedCloud(features=out, mask=mc.mask.copy(), incident=mc.incident,
                       condition=mc.condition)


def denormalize_cloud(g: GeometrySpec, mc: MaskedCloud, stats: CloudNormalization) -> MaskedCloud:
    """Exact inverse of ``normalize_cloud``; masked rows stay zero."""
    lo, hi = _extent(g)
    out = np.zeros_like(mc.features)
    rows = mc.features[mc.mask]
    out[mc.mask, :3] = (rows[:, :3] + 1.0) * 0.5 * (hi - lo) + lo
    out[mc.mask, 3] = 10.0 ** (rows[:, 3] * stats.log_energy_std + stats.log_energy_mean)
    return MaskedCloud(features=out, mask=mc.mask.copy(), incident=mc.incident,
                       condition=mc.condition)


def normalize_momentum(momentum: np.ndarray) -> np.ndarray:
    """log10 P over [0, log10 125] mapped to [-1, 1]."""
    return 2.0 * np.log10(np.asarray(momentum, dtype=np.float64)) / np.log10(MOMENTUM_MAX_GEV) - 1.0


def normalize_image(img: VoxelImage) -> NormalizedImage:
    """Divide every z layer by its sum; empty layers stay zero and are flagged."""
    if np.any(img.energies < 0):
        raise DomainError("negative voxel energy")
    layers = layer_energies(img)
    empty = layers <= 0.0
    safe = np.where(empty, 1.0, layers)
    voxels = np.where(empty[None, None, :], 0.0, img.energies / safe[None, None, :])
    if empty.any():
        logger.debug(f"{int(empty.sum())} empty layers in image")
    return NormalizedImage(voxels=voxels, layers=layers, empty_layers=empty)


def denormalize_image(voxels: np.ndarray, layers: LayerEnergyVector,
                      incident: IncidentParticle) -> VoxelImage:
    """Scale per-layer-normalized voxels back by the layer energies."""
    return VoxelImage(energies=np.asarray(voxels) * np.asarray(layers)[None, None, :],
                      incident=incident)


def compute_image_normalization(images: Sequence[VoxelImage],
                                layer_floor: float = 0.01) -> ImageNormalization:
    """Per-layer log-energy statistics and scalar voxel statistics."""
    layers = np.stack([layer_energies(img) for img in images])
    log_layers = np.log10(layers + layer_floor)
    voxels = np.stack([normalize_image(img).voxels for img in images])
    return ImageNormalization(
        layer_floor=layer_floor,
        layer_log_mean=[float(v) for v in log_layers.mean(axis=0)],
        layer_log_std=[float(max(v, 1e-6)) for v in log_layers.std(axis=0)],
        voxel_mean=float(voxels.mean()),
        voxel_std=float(max(voxels.std(), 1e-6)),
    )
