"""
calo-diffsim - desk-scale diffusion fast simulation of calorimeter showers

Generates toy pion showers on a 55^3 cell lattice, trains two-stage diffusion
pipelines on point-cloud and voxel-image representations, samples with DDIM and
compares both against the reference showers.
"""

__version__ = "0.1.0"

from .errors import CaloSimError
from .models import GeometrySpec, IncidentParticle, ModelKind, ShowerModelParams
from .pipelines import generate_image_events, generate_pointcloud_events
from .representation import PointCloudEvent, VoxelImage, voxelize
from .showergen import generate_events, generate_shower

__all__ = [
    "CaloSimError",
    "GeometrySpec",
    "IncidentParticle",
    "ModelKind",
    "ShowerModelParams",
    "PointCloudEvent",
    "VoxelImage",
    "voxelize",
    "generate_events",
    "generate_shower",
    "generate_pointcloud_events",
    "generate_image_events",
]
