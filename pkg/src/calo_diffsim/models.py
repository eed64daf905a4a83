"""
Data models for calo-diffsim.

Validated records shared by every module: detector geometry, incident particles,
generator parameters, normalization statistics, hyperparameters, run manifests
and evaluation reports. Array-valued carriers (events, images, masked clouds)
live in ``representation`` as dataclasses; everything here is plain data that
serializes to JSON.
"""

import hashlib
import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

__all__ = [
    "ModelKind",
    "DatasetFormat",
    "GeometrySpec",
    "IncidentParticle",
    "CellHit",
    "ShowerModelParams",
    "CloudNormalization",
    "ImageNormalization",
    "TrainingHyper",
    "SamplingConfig",
    "ClassifierConfig",
    "EvaluationConfig",
    "TrainingLogEntry",
    "GradCheckResult",
    "ArtifactRecord",
    "RunManifest",
    "ObservableComparison",
    "ModelSummary",
    "EvalReport",
]

PION_MASS_GEV = 0.13957
MOMENTUM_MIN_GEV = 1.0
MOMENTUM_MAX_GEV = 125.0
FIXED_THETA_DEG = 17.0


def _canonical_hash(model: BaseModel) -> str:
    payload = model.model_dump_json().encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class ModelKind(str, Enum):
    """The four networks of the two generation pipelines."""
    CLOUD = "cloud"
    IMAGE = "image"
    MULTIPLICITY = "multiplicity"
    LAYERS = "layers"


class DatasetFormat(str, Enum):
    """On-disk event encodings."""
    POINTCLOUD = "pointcloud"
    IMAGE_11 = "image_11"
    IMAGE_FULL = "image_full"

    @property
    def code(self) -> int:
        return {"pointcloud": 1, "image_11": 2, "image_full": 3}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "DatasetFormat":
        for fmt in cls:
            if fmt.code == code:
                return fmt
        raise ValueError(f"Unknown dataset format code {code}")


class GeometrySpec(BaseModel):
    """Cubic cell lattice of the sampling calorimeter."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_cells_per_axis: int = Field(default=55, ge=1, description="Cells along each axis")
    cell_pitch_xy: float = Field(default=10.0, gt=0, description="Transverse cell pitch in cm")
    cell_pitch_z: float = Field(default=2.3, gt=0, description="Layer pitch in cm (absorber + scintillator)")
    front_face_z: float = Field(default=3.8, gt=0, description="Front face position in m (metadata)")
    energy_threshold: float = Field(default=0.3, ge=0, description="Hit threshold in MeV, inclusive")
    voxel_group: int = Field(default=5, ge=1, description="Cells per voxel along each axis")
    max_points: int = Field(default=200, ge=1, description="Fixed point-cloud capacity")

    @model_validator(mode="after")
    def _check_grouping(self) -> "GeometrySpec":
        if self.n_cells_per_axis % self.voxel_group != 0:
            raise ValueError(
                f"n_cells_per_axis={self.n_cells_per_axis} is not divisible by "
                f"voxel_group={self.voxel_group}"
            )
        return self

    @property
    def n_voxels_per_axis(self) -> int:
        return self.n_cells_per_axis // self.voxel_group

    @property
    def n_cells(self) -> int:
        return self.n_cells_per_axis ** 3

    @property
    def pitches(self) -> Tuple[float, float, float]:
        return (self.cell_pitch_xy, self.cell_pitch_xy, self.cell_pitch_z)

    @property
    def lower_edges(self) -> Tuple[float, float, float]:
        """Lattice minimum per axis in cm; x and y centered, z from the front face."""
        half = 0.5 * self.n_cells_per_axis * self.cell_pitch_xy
        return (-half, -half, 0.0)

    @property
    def upper_edges(self) -> Tuple[float, float, float]:
        half = 0.5 * self.n_cells_per_axis * self.cell_pitch_xy
        return (half, half, self.n_cells_per_axis * self.cell_pitch_z)

    def geometry_hash(self) -> bytes:
        """32-byte digest stored in dataset and checkpoint headers."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).digest()

    def config_hash(self) -> str:
        return _canonical_hash(self)


class IncidentParticle(BaseModel):
    """Conditioning record of the incident pion."""

    model_config = ConfigDict(frozen=True)

    momentum: float = Field(ge=MOMENTUM_MIN_GEV, le=MOMENTUM_MAX_GEV, description="GeV/c")
    theta: float = Field(default=FIXED_THETA_DEG, description="Polar angle in degrees")
    phi: float = Field(default=0.0, ge=0.0, lt=360.0, description="Azimuth in degrees")

    @field_validator("theta")
    @classmethod
    def _fixed_theta(cls, value: float) -> float:
        if value != FIXED_THETA_DEG:
            raise ValueError(f"theta is fixed at {FIXED_THETA_DEG} degrees, got {value}")
        return value

    @property
    def log_momentum(self) -> float:
        return math.log10(self.momentum)

    @property
    def kinetic_energy(self) -> float:
        """Kinetic energy in GeV for a charged pion."""
        return math.hypot(self.momentum, PION_MASS_GEV) - PION_MASS_GEV


class CellHit(BaseModel):
    """A single cell deposit, either at a cell center or smeared inside the cell."""

    model_config = ConfigDict(frozen=True)

    position: Tuple[float, float, float] = Field(description="x, y, z in cm")
    energy: float = Field(ge=0.0, description="Deposited energy in MeV")
    is_smeared: bool = Field(default=False, description="Position displaced within its cell")


class ShowerModelParams(BaseModel):
    """Parameters of the toy shower generator."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sampling_fraction: float = Field(default=0.02, gt=0, lt=1, description="Mean visible fraction")
    stochastic_term: float = Field(default=0.5, gt=0, description="Resolution term in sqrt(GeV)")
    constant_term: float = Field(default=0.05, gt=0, description="Constant resolution term")
    shape_a0: float = Field(default=2.0, gt=0, description="Longitudinal Gamma shape offset")
    shape_a1: float = Field(default=0.4, gt=0, description="Longitudinal shape slope in ln(E/GeV)")
    scale_b: float = Field(default=0.15, gt=0, description="Longitudinal scale in 1/layer")
    transverse_width_front: float = Field(default=12.0, gt=0, description="Gaussian width at shower start, cm")
    transverse_width_back: float = Field(default=25.0, gt=0, description="Gaussian width at the back face, cm")
    hits_per_gev: float = Field(default=40.0, gt=0, description="Spatial deposits per visible GeV")

    def relative_resolution(self, energy_gev: float) -> float:
        """sigma/E = stochastic/sqrt(E) (+) constant."""
        return math.hypot(self.stochastic_term / math.sqrt(energy_gev), self.constant_term)

    def config_hash(self) -> str:
        return _canonical_hash(self)


class CloudNormalization(BaseModel):
    """Statistics of a point-cloud training set, shared by the cloud and multiplicity models."""

    model_config = ConfigDict(frozen=True)

    log_energy_mean: float = Field(description="Mean of log10 cell energy (MeV) over unmasked hits")
    log_energy_std: float = Field(gt=0, description="Std of log10 cell energy")
    log_hits_mean: float = Field(description="Mean of log n_hits over events")
    log_hits_std: float = Field(gt=0, description="Std of log n_hits")


class ImageNormalization(BaseModel):
    """Statistics of an image training set, shared by the layer and voxel models."""

    model_config = ConfigDict(frozen=True)

    layer_floor: float = Field(default=0.01, gt=0, description="Offset in MeV inside log10(E + floor)")
    layer_log_mean: List[float] = Field(description="Per-layer mean of log10(E + floor)")
    layer_log_std: List[float] = Field(description="Per-layer std of log10(E + floor)")
    voxel_mean: float = Field(description="Mean of per-layer-normalized voxel values")
    voxel_std: float = Field(gt=0, description="Std of per-layer-normalized voxel values")


class TrainingHyper(BaseModel):
    """Optimizer and architecture settings for one training run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=128, ge=1)
    steps: int = Field(default=2000, ge=0, description="Optimizer steps")
    min_learning_rate: float = Field(default=0.0, ge=0, description="Floor of the cosine decay")
    eval_every: int = Field(default=100, ge=1, description="Held-out loss cadence in steps")
    checkpoint_every: int = Field(default=500, ge=1)
    holdout_fraction: float = Field(default=0.1, ge=0, lt=1)
    shards: int = Field(default=1, ge=1, description="Fixed-order gradient shards per batch")
    width: int = Field(default=64, ge=1, description="Set network feature width")
    time_embedding_dim: int = Field(default=16, ge=2)
    grid_channels: Tuple[int, int] = Field(default=(16, 32))
    dense_width: int = Field(default=128, ge=1, description="Width of the dense conditioning nets")

    @field_validator("time_embedding_dim")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("time_embedding_dim must be even")
        return value

    def config_hash(self) -> str:
        return _canonical_hash(self)


class SamplingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(default=512, ge=1, description="DDIM steps")
    batch_size: int = Field(default=128, ge=1, description="Events sampled together")


class ClassifierConfig(BaseModel):
    """Two-sample classifier used for the AUC figure of merit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    hidden: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=256, ge=1)
    max_epochs: int = Field(default=50, ge=1)
    patience: int = Field(default=5, ge=1)
    train_fraction: float = Field(default=0.6, gt=0, lt=1)
    val_fraction: float = Field(default=0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _fractions(self) -> "ClassifierConfig":
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ValueError("train_fraction + val_fraction must leave a test split")
        return self


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    deviation_tolerance: float = Field(default=0.10, gt=0)
    energy_bins: int = Field(default=50, ge=1)
    energy_range_gev: Tuple[float, float] = Field(default=(0.05, 150.0))
    log_energy_bins: int = Field(default=40, ge=1)
    log_energy_range: Tuple[float, float] = Field(default=(-1.0, 3.0))
    map_layers: Tuple[int, ...] = Field(default=(0, 4, 9), description="Voxel layers for mean maps")


class TrainingLogEntry(BaseModel):
    step: int
    loss: float
    learning_rate: float
    holdout_loss: Optional[float] = None


class GradCheckResult(BaseModel):
    """Outcome of an analytic vs. finite-difference gradient comparison."""

    max_rel_error: float = Field(description="Worst relative error over checked coordinates")
    n_coordinates: int
    worst_parameter: str = Field(description="Name of the tensor holding the worst coordinate")
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


class ArtifactRecord(BaseModel):
    path: str
    sha256: str
    size_bytes: int


class RunManifest(BaseModel):
    """What a CLI invocation read, wrote and how long it took."""

    command: str
    argv: List[str]
    tool_version: str
    format_version: int
    seeds: Dict[str, int] = Field(default_factory=dict)
    config_hashes: Dict[str, str] = Field(default_factory=dict)
    inputs: List[ArtifactRecord] = Field(default_factory=list)
    outputs: List[ArtifactRecord] = Field(default_factory=list)
    wall_times: Dict[str, float] = Field(default_factory=dict, description="Seconds per stage")
    metadata: Dict[str, float] = Field(default_factory=dict)


class ObservableComparison(BaseModel):
    """One observable compared between the reference and a generated set."""

    observable: str
    unit: str
    bin_edges: List[float]
    reference: List[float] = Field(description="Reference density (or profile) per bin")
    generated: List[float]
    ratio: List[Optional[float]] = Field(description="generated/reference, None where undefined")
    out_of_band: List[bool]
    emd: float = Field(ge=0)


class ModelSummary(BaseModel):
    """One summary-table row plus per-observable comparisons."""

    name: str
    representation: str
    n_parameters: Optional[int] = None
    disk_size_bytes: Optional[int] = None
    disk_size_full_bytes: Optional[int] = None
    sample_seconds_per_1k: Optional[float] = None
    auc: Optional[float] = Field(default=None, ge=0, le=1)
    comparisons: List[ObservableComparison] = Field(default_factory=list)
    gaps: List[str] = Field(default_factory=list, description="Sections that could not be computed")


class EvalReport(BaseModel):
    """Full comparison of generated samples against a reference set."""

    seed: int
    n_reference: int
    classifier: ClassifierConfig
    emd_convention: str = "unbinned samples for scalars; bin-center weighted for profiles"
    reference_disk_size_bytes: Optional[int] = None
    reference_disk_size_full_bytes: Optional[int] = None
    models: List[ModelSummary] = Field(default_factory=list)
    layer_maps: Dict[str, List[List[float]]] = Field(default_factory=dict)
