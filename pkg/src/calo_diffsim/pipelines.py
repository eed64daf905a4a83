"""
Two-stage generation pipelines.

Point clouds: a multiplicity model samples the number of hits, then the set
model samples that many (x, y, z, E) points. Images: a layer model samples the
energy per z layer, then the grid model samples per-layer-normalized voxels.
This module also turns datasets into the normalized tensors each model trains
on.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from .errors import ContractError, FormatError
from .geometry import cell_centers, flat_index, quantize_many, threshold_mask, unflatten_index
from .models import (
    CloudNormalization,
    GeometrySpec,
    ImageNormalization,
    IncidentParticle,
    ModelKind,
)
from .representation import (
    MaskedCloud,
    PointCloudEvent,
    VoxelImage,
    compute_cloud_normalization,
    compute_image_normalization,
    denormalize_image,
    layer_energies,
    normalize_cloud,
    normalize_image,
    normalize_momentum,
    smear_event,
    to_masked,
    voxelize,
)
from .sampler import sample
from .schedule import DiffusionSchedule
from .showergen import event_rng, sample_incident
from .trainer import TrainingSet

__all__ = [
    "GenerationLog",
    "ModelBundle",
    "prepare_cloud_training",
    "prepare_multiplicity_training",
    "prepare_layer_training",
    "prepare_voxel_training",
    "round_multiplicity",
    "generate_pointcloud_events",
    "generate_pointcloud_event",
    "generate_image_events",
    "generate_image_event",
    "sample_incidents",
    "destandardize",
    "bundle_kinds",
    "prepare_training",
]

# independent noise streams of the two stages
STAGE_ONE = 1
STAGE_TWO = 2
# smearing of training events draws from its own stream
SMEAR_STREAM = 3
# generated standardized log values are clipped to this many training stds
STANDARDIZED_CLIP = 8.0


@dataclass
class GenerationLog:
    """Anomalies corrected while post-processing generated events."""

    clamped_low: int = 0
    clamped_high: int = 0
    clipped_values: int = 0
    degenerate: List[int] = field(default_factory=list)

    def as_metadata(self) -> dict:
        return {
            "clamped_low": float(self.clamped_low),
            "clamped_high": float(self.clamped_high),
            "clipped_values": float(self.clipped_values),
            "degenerate_events": float(len(self.degenerate)),
        }


@dataclass(eq=False)
class ModelBundle:
    """The two trained networks of one pipeline plus their shared statistics."""

    representation: str
    stage_one: nn.Module
    stage_two: nn.Module
    normalization: object
    geometry: GeometrySpec
    n_parameters: int = 0

    def __post_init__(self):
        if self.representation not in ("pointcloud", "image"):
            raise ContractError(f"unknown representation {self.representation!r}")
        expected = CloudNormalization if self.representation == "pointcloud" else ImageNormalization
        if not isinstance(self.normalization, expected):
            raise FormatError(f"{self.representation} bundle needs {expected.__name__}")


def _momenta(incidents: Sequence[IncidentParticle]) -> np.ndarray:
    return np.array([inc.momentum for inc in incidents], dtype=np.float64)


# -- training sets -----------------------------------------------------------


def _cloud_condition(momentum: np.ndarray, n_hits: np.ndarray,
                     stats: CloudNormalization) -> np.ndarray:
    log_n = (np.log(np.maximum(n_hits, 1)) - stats.log_hits_mean) / stats.log_hits_std
    return np.column_stack([normalize_momentum(momentum), log_n])


def prepare_cloud_training(g: GeometrySpec, events: Sequence[PointCloudEvent], seed: int,
                           stats: Optional[CloudNormalization] = None
                           ) -> Tuple[TrainingSet, CloudNormalization]:
    """Smear discrete events, pad them and normalize into set-model tensors."""
    events = [e for e in events if e.n_hits > 0]
    if not events:
        raise ContractError("no non-empty events to train on")
    smeared = [
        e if e.is_smeared else smear_event(g, e, np.random.default_rng([seed, i, SMEAR_STREAM]))
        for i, e in enumerate(events)
    ]
    clouds = [to_masked(g, e) for e in smeared]
    stats = stats or compute_cloud_normalization(clouds)
    normalized: List[MaskedCloud] = [normalize_cloud(g, mc, stats) for mc in clouds]
    x = np.stack([mc.features for mc in normalized])
    mask = np.stack([mc.mask for mc in normalized])
    cond = _cloud_condition(_momenta([e.incident for e in events]),
                            mask.sum(axis=1), stats)
    data = TrainingSet(x=torch.from_numpy(x).float(), cond=torch.from_numpy(cond).float(),
                       mask=torch.from_numpy(mask))
    return data, stats


def prepare_multiplicity_training(events: Sequence[PointCloudEvent],
                                  stats: CloudNormalization) -> TrainingSet:
    """Standardized log hit counts conditioned on the momentum."""
    events = [e for e in events if e.n_hits > 0]
    if not events:
        raise ContractError("no non-empty events to train on")
    n_hits = np.array([e.n_hits for e in events], dtype=np.float64)
    x = ((np.log(n_hits) - stats.log_hits_mean) / stats.log_hits_std)[:, None]
    cond = normalize_momentum(_momenta([e.incident for e in events]))[:, None]
    return TrainingSet(x=torch.from_numpy(x).float(), cond=torch.from_numpy(cond).float())


def _normalized_layers(layers: np.ndarray, stats: ImageNormalization) -> np.ndarray:
    mean = np.asarray(stats.layer_log_mean)
    std = np.asarray(stats.layer_log_std)
    return (np.log10(layers + stats.layer_floor) - mean) / std


def destandardize(y: np.ndarray, mean, std, log: Optional[GenerationLog] = None) -> np.ndarray:
    """``y * std + mean`` with ``y`` clipped to the range a training set can produce."""
    y = np.asarray(y, dtype=np.float64)
    outside = np.abs(y) > STANDARDIZED_CLIP
    if log is not None:
        log.clipped_values += int(outside.sum())
    return np.clip(y, -STANDARDIZED_CLIP, STANDARDIZED_CLIP) * std + mean


def _denormalized_layers(y: np.ndarray, stats: ImageNormalization,
                         log: Optional[GenerationLog] = None) -> np.ndarray:
    mean = np.asarray(stats.layer_log_mean)
    std = np.asarray(stats.layer_log_std)
    return 10.0 ** destandardize(y, mean, std, log) - stats.layer_floor


def _check_images(g: GeometrySpec, images: Sequence[VoxelImage]) -> None:
    if not images:
        raise ContractError("no images to train on")
    m = g.n_voxels_per_axis
    for img in images:
        if img.resolution != m:
            raise ContractError(f"expected {m}^3 images, got {img.resolution}^3")


def prepare_layer_training(g: GeometrySpec, images: Sequence[VoxelImage],
                           stats: Optional[ImageNormalization] = None
                           ) -> Tuple[TrainingSet, ImageNormalization]:
    """Standardized log10 layer energies conditioned on the momentum."""
    _check_images(g, images)
    stats = stats or compute_image_normalization(images)
    layers = np.stack([layer_energies(img) for img in images])
    x = _normalized_layers(layers, stats)
    cond = normalize_momentum(_momenta([img.incident for img in images]))[:, None]
    data = TrainingSet(x=torch.from_numpy(x).float(), cond=torch.from_numpy(cond).float())
    return data, stats


def prepare_voxel_training(g: GeometrySpec, images: Sequence[VoxelImage],
                           stats: Optional[ImageNormalization] = None
                           ) -> Tuple[TrainingSet, ImageNormalization]:
    """Standardized per-layer-normalized voxels conditioned on momentum and layers."""
    _check_images(g, images)
    stats = stats or compute_image_normalization(images)
    normalized = [normalize_image(img) for img in images]
    x = (np.stack([n.voxels for n in normalized]) - stats.voxel_mean) / stats.voxel_std
    layers = _normalized_layers(np.stack([n.layers for n in normalized]), stats)
    momentum = normalize_momentum(_momenta([img.incident for img in images]))
    cond = np.column_stack([momentum, layers])
    data = TrainingSet(x=torch.from_numpy(x).float(), cond=torch.from_numpy(cond).float())
    return data, stats


# -- point-cloud generation --------------------------------------------------


def round_multiplicity(values: np.ndarray, max_points: int,
                       log: Optional[GenerationLog] = None) -> np.ndarray:
    """Round half-up to integers and clamp to [1, max_points]."""
    n = np.floor(np.asarray(values, dtype=np.float64) + 0.5)
    n = np.where(np.isfinite(n), n, max_points)
    low, high = n < 1, n > max_points
    if log is not None:
        log.clamped_low += int(low.sum())
        log.clamped_high += int(high.sum())
    return np.clip(n, 1, max_points).astype(np.int64)


def _cloud_to_event(g: GeometrySpec, features: np.ndarray, incident: IncidentParticle,
                    log: GenerationLog) -> PointCloudEvent:
    """Quantize generated points, sum per cell, digitize and threshold."""
    lo = np.asarray(g.lower_edges)
    hi = np.asarray(g.upper_edges)
    positions = np.clip(features[:, :3], lo, hi)
    energies = features[:, 3]
    negative = energies < 0
    log.clipped_values += int(negative.sum())
    energies = np.where(negative, 0.0, energies)
    if len(energies) == 0:
        return PointCloudEvent(incident=incident, hits=np.zeros((0, 4)))

    cells, inverse = np.unique(flat_index(g, quantize_many(g, positions)), return_inverse=True)
    summed = np.bincount(inverse.reshape(-1), weights=energies, minlength=len(cells))
    summed = summed.astype(np.float32).astype(np.float64)
    keep = threshold_mask(g, summed)
    cells, summed = cells[keep], summed[keep]
    hits = np.column_stack([cell_centers(g, unflatten_index(g, cells)), summed])
    return PointCloudEvent(incident=incident, hits=hits.reshape(-1, 4), is_smeared=False)


def generate_pointcloud_events(bundle: ModelBundle, incidents: Sequence[IncidentParticle],
                               seed: int, sched: Optional[DiffusionSchedule] = None,
                               batch_size: int = 128, first_index: int = 0
                               ) -> Tuple[List[PointCloudEvent], GenerationLog]:
    """
    Sample one event per incident particle.

    Event ``k`` draws its noise from streams keyed on ``(seed, first_index + k)``,
    so results depend only on the seed, the models and the batch size.
    """
    if bundle.representation != "pointcloud":
        raise ContractError("point-cloud generation needs a point-cloud bundle")
    sched = sched or DiffusionSchedule()
    g, stats = bundle.geometry, bundle.normalization
    log = GenerationLog()
    events: List[PointCloudEvent] = []
    lo = np.asarray(g.lower_edges)
    hi = np.asarray(g.upper_edges)

    for start in range(0, len(incidents), batch_size):
        chunk = list(incidents[start: start + batch_size])
        b = len(chunk)
        first = first_index + start
        momentum = normalize_momentum(_momenta(chunk))

        cond1 = torch.from_numpy(momentum[:, None])
        y = sample(sched, bundle.stage_one, cond1, b, seed, (1,), first_index=first,
                   stream=STAGE_ONE).double().numpy()[:, 0]
        log_n = destandardize(y, stats.log_hits_mean, stats.log_hits_std, log)
        n_hits = round_multiplicity(np.exp(log_n), g.max_points, log)

        mask = torch.from_numpy(np.arange(g.max_points)[None, :] < n_hits[:, None])
        cond2 = torch.from_numpy(_cloud_condition(_momenta(chunk), n_hits, stats))
        x = sample(sched, bundle.stage_two, cond2, b, seed, (g.max_points, 4), mask=mask,
                   first_index=first, stream=STAGE_TWO).double().numpy()

        for k, inc in enumerate(chunk):
            rows = x[k, : n_hits[k]]
            positions = (rows[:, :3] + 1.0) * 0.5 * (hi - lo) + lo
            energies = 10.0 ** destandardize(rows[:, 3], stats.log_energy_mean,
                                             stats.log_energy_std, log)
            features = np.column_stack([positions, energies])
            events.append(_cloud_to_event(g, features, inc, log))

    if log.clamped_low or log.clamped_high:
        logger.warning(
            f"Multiplicity clamped to [1, {g.max_points}] for "
            f"{log.clamped_low + log.clamped_high} events"
        )
    return events, log


def generate_pointcloud_event(bundle: ModelBundle, incident: IncidentParticle, seed: int,
                              index: int = 0, sched: Optional[DiffusionSchedule] = None
                              ) -> PointCloudEvent:
    events, _ = generate_pointcloud_events(bundle, [incident], seed, sched, batch_size=1,
                                           first_index=index)
    return events[0]


# -- image generation ----------------------------------------------------------


def _renormalize_layers(voxels: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Clip at zero and make every layer sum to one."""
    voxels = np.clip(voxels, 0.0, None)
    sums = voxels.sum(axis=(0, 1))
    for z in np.flatnonzero(sums <= 0):
        # empty sampled layer: all its energy goes to the largest raw sample
        plane = raw[:, :, z]
        ix, iy = np.unravel_index(int(np.argmax(plane)), plane.shape)
        voxels[:, :, z] = 0.0
        voxels[ix, iy, z] = 1.0
    sums = voxels.sum(axis=(0, 1))
    return voxels / sums[None, None, :]


def generate_image_events(bundle: ModelBundle, incidents: Sequence[IncidentParticle],
                          seed: int, sched: Optional[DiffusionSchedule] = None,
                          batch_size: int = 128, first_index: int = 0
                          ) -> Tuple[List[VoxelImage], GenerationLog]:
    """Sample one voxel image per incident particle."""
    if bundle.representation != "image":
        raise ContractError("image generation needs an image bundle")
    sched = sched or DiffusionSchedule()
    g, stats = bundle.geometry, bundle.normalization
    m = g.n_voxels_per_axis
    log = GenerationLog()
    images: List[VoxelImage] = []

    for start in range(0, len(incidents), batch_size):
        chunk = list(incidents[start: start + batch_size])
        b = len(chunk)
        first = first_index + start
        momentum = normalize_momentum(_momenta(chunk))

        cond1 = torch.from_numpy(momentum[:, None])
        y = sample(sched, bundle.stage_one, cond1, b, seed, (m,), first_index=first,
                   stream=STAGE_ONE).double().numpy()
        layers = _denormalized_layers(y, stats, log)
        log.clipped_values += int((layers < 0).sum())
        layers = np.clip(layers, 0.0, None)

        cond2 = torch.from_numpy(np.column_stack([momentum, _normalized_layers(layers, stats)]))
        raw = sample(sched, bundle.stage_two, cond2, b, seed, (m, m, m), first_index=first,
                     stream=STAGE_TWO).double().numpy()
        raw = raw * stats.voxel_std + stats.voxel_mean

        for k, inc in enumerate(chunk):
            if not np.any(layers[k] > 0):
                log.degenerate.append(first + k)
            voxels = _renormalize_layers(raw[k].copy(), raw[k])
            images.append(denormalize_image(voxels, layers[k], inc))

    if log.degenerate:
        logger.warning(f"{len(log.degenerate)} generated images have no energy in any layer")
    if log.clipped_values:
        logger.debug(f"Clipped {log.clipped_values} negative layer energies")
    return images, log


def generate_image_event(bundle: ModelBundle, incident: IncidentParticle, seed: int,
                         index: int = 0, sched: Optional[DiffusionSchedule] = None) -> VoxelImage:
    images, _ = generate_image_events(bundle, [incident], seed, sched, batch_size=1,
                                      first_index=index)
    return images[0]


def sample_incidents(n: int, seed: int) -> List[IncidentParticle]:
    """Conditioning particles for generation, drawn like the generator draws them."""
    return [sample_incident(event_rng(seed, i)) for i in range(n)]


def bundle_kinds(representation: str) -> Tuple[ModelKind, ModelKind]:
    """(stage one, stage two) model kinds of a representation."""
    if representation == "pointcloud":
        return ModelKind.MULTIPLICITY, ModelKind.CLOUD
    if representation == "image":
        return ModelKind.LAYERS, ModelKind.IMAGE
    raise ContractError(f"unknown representation {representation!r}")


def prepare_training(kind: ModelKind, g: GeometrySpec,
                     items: Sequence[Union[PointCloudEvent, VoxelImage]], seed: int
                     ) -> Tuple[TrainingSet, Union[CloudNormalization, ImageNormalization]]:
    """
    Training tensors and normalization for one model kind.

    The two models of a pipeline compute identical statistics from the same
    dataset, which is what lets them be paired at sampling time.
    """
    kind = ModelKind(kind)
    if kind in (ModelKind.CLOUD, ModelKind.MULTIPLICITY):
        if not all(isinstance(item, PointCloudEvent) for item in items):
            raise ContractError(f"{kind.value} model trains on point clouds, not images")
        if kind is ModelKind.CLOUD:
            return prepare_cloud_training(g, items, seed)
        stats = compute_cloud_normalization([to_masked(g, e) for e in items if e.n_hits > 0])
        return prepare_multiplicity_training(items, stats), stats
    images = [voxelize(g, item) if isinstance(item, PointCloudEvent) else item for item in items]
    if kind is ModelKind.LAYERS:
        return prepare_layer_training(g, images)
    return prepare_voxel_training(g, images)
