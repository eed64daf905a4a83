"""
Shower observables, Earth mover's distances and deviation bands.

Scalar observables are compared on unbinned samples; profile observables
(mean deposited energy per spatial bin) are compared as weighted
distributions over their bin centers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.stats import wasserstein_distance

from .errors import ContractError
from .geometry import quantize_many
from .models import EvaluationConfig, GeometrySpec, ObservableComparison
from .representation import PointCloudEvent, VoxelImage, voxel_hits

__all__ = [
    "ObservableKind",
    "Histogram",
    "DeviationBand",
    "observable",
    "sample_observable",
    "emd_1d",
    "profile_emd",
    "deviation_band",
    "default_edges",
    "compare_observable",
    "OBSERVABLE_UNITS",
]

Item = Union[PointCloudEvent, VoxelImage]


class ObservableKind(str, Enum):
    TOTAL_ENERGY = "total_energy"
    N_VOXEL_HITS = "n_voxel_hits"
    N_CELL_HITS = "n_cell_hits"
    MEAN_PROFILE_X = "mean_profile_x"
    MEAN_PROFILE_Y = "mean_profile_y"
    MEAN_PROFILE_Z = "mean_profile_z"
    CELL_LOG10_ENERGY = "cell_log10_energy"
    LAYER_MAP = "layer_map"

    @property
    def is_profile(self) -> bool:
        return self in (ObservableKind.MEAN_PROFILE_X, ObservableKind.MEAN_PROFILE_Y,
                        ObservableKind.MEAN_PROFILE_Z)

    @property
    def axis(self) -> int:
        return {"mean_profile_x": 0, "mean_profile_y": 1, "mean_profile_z": 2}[self.value]


OBSERVABLE_UNITS = {
    ObservableKind.TOTAL_ENERGY: "GeV",
    ObservableKind.N_VOXEL_HITS: "count",
    ObservableKind.N_CELL_HITS: "count",
    ObservableKind.MEAN_PROFILE_X: "MeV per bin",
    ObservableKind.MEAN_PROFILE_Y: "MeV per bin",
    ObservableKind.MEAN_PROFILE_Z: "MeV per bin",
    ObservableKind.CELL_LOG10_ENERGY: "log10(E/MeV)",
    ObservableKind.LAYER_MAP: "MeV per voxel",
}


@dataclass(frozen=True, eq=False)
class Histogram:
    """Binned counts over strictly increasing edges."""

    edges: np.ndarray
    counts: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.float64)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ContractError("histogram edges must be strictly increasing")
        if counts.shape != (len(edges) - 1,):
            raise ContractError(f"{len(edges) - 1} bins need as many counts, got {counts.shape}")
        if np.any(counts < 0):
            raise ContractError("histogram counts must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_samples(cls, values: np.ndarray, edges: np.ndarray,
                     weights: Optional[np.ndarray] = None) -> "Histogram":
        counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges,
                                 weights=weights)
        return cls(edges=edges, counts=counts)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def density(self) -> np.ndarray:
        """Counts scaled to unit area; an empty histogram stays zero."""
        if self.normalized:
            return self.counts.copy()
        area = float((self.counts * self.widths).sum())
        return self.counts / area if area > 0 else np.zeros_like(self.counts)


@dataclass(frozen=True, eq=False)
class DeviationBand:
    ratio: np.ndarray
    out_of_band: np.ndarray
    undefined: np.ndarray

    def fraction_inside(self) -> float:
        """Share of populated bins whose ratio is inside the band."""
        populated = ~self.undefined
        if not populated.any():
            return 0.0
        return float((~self.out_of_band[populated]).mean())


def _require(item: Item, cls, kind: ObservableKind):
    if not isinstance(item, cls):
        raise ContractError(f"{kind.value} needs a {cls.__name__}, got {type(item).__name__}")


def observable(kind: Union[str, ObservableKind], item: Item, g: Optional[GeometrySpec] = None,
               layer: Optional[int] = None) -> Union[float, np.ndarray]:
    """
    One observable of one event or image.

    total_energy is in GeV; hit counts use the inclusive threshold of ``g``;
    profiles return the energy (MeV) per bin along the axis, one bin per voxel
    for images and per cell for point clouds; cell_log10_energy returns the
    log10 of every hit energy in MeV; layer_map returns the x-y energy plane of
    voxel layer ``layer``.
    """
    kind = ObservableKind(kind)
    g = g or GeometrySpec()
    if kind is ObservableKind.TOTAL_ENERGY:
        return item.total_energy / 1000.0
    if kind is ObservableKind.N_VOXEL_HITS:
        _require(item, VoxelImage, kind)
        return float(voxel_hits(item, g.energy_threshold))
    if kind is ObservableKind.N_CELL_HITS:
        _require(item, PointCloudEvent, kind)
        return float(np.count_nonzero(item.energies >= g.energy_threshold))
    if kind is ObservableKind.CELL_LOG10_ENERGY:
        _require(item, PointCloudEvent, kind)
        energies = item.energies[item.energies > 0]
        return np.log10(energies)
    if kind is ObservableKind.LAYER_MAP:
        _require(item, VoxelImage, kind)
        if layer is None or not 0 <= layer < item.resolution:
            raise ContractError(f"layer_map needs a layer in [0, {item.resolution})")
        return item.energies[:, :, layer].copy()

    axis = kind.axis
    if isinstance(item, VoxelImage):
        others = tuple(a for a in range(3) if a != axis)
        return item.energies.sum(axis=others)
    n = g.n_cells_per_axis
    if item.n_hits == 0:
        return np.zeros(n)
    idx = quantize_many(g, item.positions)[:, axis]
    return np.bincount(idx, weights=item.energies, minlength=n).astype(np.float64)


def sample_observable(kind: Union[str, ObservableKind], items: Sequence[Item],
                      g: Optional[GeometrySpec] = None, layer: Optional[int] = None) -> np.ndarray:
    """
    An observable over a whole sample.

    Scalars give one value per item, cell_log10_energy the concatenated
    spectrum, profiles and layer maps the mean over items.
    """
    kind = ObservableKind(kind)
    if not items:
        raise ContractError("empty sample")
    values = [observable(kind, item, g, layer) for item in items]
    if kind is ObservableKind.CELL_LOG10_ENERGY:
        return np.concatenate(values)
    if kind.is_profile or kind is ObservableKind.LAYER_MAP:
        return np.mean(np.stack(values), axis=0)
    return np.asarray(values, dtype=np.float64)


def _check_samples(values: np.ndarray, label: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ContractError(f"{label} is empty")
    if not np.all(np.isfinite(values)):
        raise ContractError(f"{label} holds non-finite values")
    return values


def emd_1d(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """1-Wasserstein distance between two empirical distributions."""
    a = _check_samples(samples_a, "first sample")
    b = _check_samples(samples_b, "second sample")
    return float(wasserstein_distance(a, b))


def profile_emd(centers: np.ndarray, profile_a: np.ndarray, profile_b: np.ndarray) -> float:
    """EMD between two profiles treated as distributions over the bin centers."""
    centers = _check_samples(centers, "bin centers")
    a = _check_samples(profile_a, "first profile")
    b = _check_samples(profile_b, "second profile")
    if a.shape != centers.shape or b.shape != centers.shape:
        raise ContractError("profiles and bin centers differ in length")
    if np.any(a < 0) or np.any(b < 0) or a.sum() <= 0 or b.sum() <= 0:
        raise ContractError("profiles must be non-negative with positive total")
    return float(wasserstein_distance(centers, centers, u_weights=a, v_weights=b))


def deviation_band(gen_hist: Histogram, ref_hist: Histogram,
                   tolerance: float = 0.10) -> DeviationBand:
    """Per-bin density ratio gen/ref with bins outside 1 +- tolerance flagged."""
    if gen_hist.edges.shape != ref_hist.edges.shape or not np.array_equal(
        gen_hist.edges, ref_hist.edges
    ):
        raise ContractError("histograms use different binnings")
    gen = gen_hist.density()
    ref = ref_hist.density()
    undefined = ref <= 0
    ratio = np.full_like(ref, np.nan)
    np.divide(gen, ref, out=ratio, where=~undefined)
    out_of_band = np.zeros_like(undefined)
    out_of_band[~undefined] = np.abs(ratio[~undefined] - 1.0) > tolerance
    return DeviationBand(ratio=ratio, out_of_band=out_of_band, undefined=undefined)


def default_edges(kind: Union[str, ObservableKind], cfg: EvaluationConfig, g: GeometrySpec,
                  granularity: str = "voxel", values: Optional[Sequence[np.ndarray]] = None
                  ) -> np.ndarray:
    """Bin edges used for plots and deviation bands."""
    kind = ObservableKind(kind)
    if kind is ObservableKind.TOTAL_ENERGY:
        lo, hi = cfg.energy_range_gev
        return np.geomspace(lo, hi, cfg.energy_bins + 1)
    if kind is ObservableKind.CELL_LOG10_ENERGY:
        lo, hi = cfg.log_energy_range
        return np.linspace(lo, hi, cfg.log_energy_bins + 1)
    if kind in (ObservableKind.N_VOXEL_HITS, ObservableKind.N_CELL_HITS):
        top = max((float(np.max(v)) for v in values or [] if len(v)), default=1.0)
        return np.arange(-0.5, top + 1.5, 1.0)
    if kind.is_profile:
        axis = kind.axis
        n = g.n_voxels_per_axis if granularity == "voxel" else g.n_cells_per_axis
        return np.linspace(g.lower_edges[axis], g.upper_edges[axis], n + 1)
    raise ContractError(f"{kind.value} has no one-dimensional binning")


def _ratio_list(band: DeviationBand) -> List[Optional[float]]:
    return [None if u else float(r) for r, u in zip(band.ratio, band.undefined)]


def compare_observable(name: str, kind: Union[str, ObservableKind], reference: np.ndarray,
                       generated: np.ndarray, edges: np.ndarray,
                       tolerance: float = 0.10) -> ObservableComparison:
    """
    Histogram pair, ratio series and EMD for one observable.

    For profiles ``reference`` and ``generated`` are the mean profiles, one value
    per bin; otherwise they are the unbinned samples.
    """
    kind = ObservableKind(kind)
    if kind.is_profile:
        ref_hist = Histogram(edges=edges, counts=reference)
        gen_hist = Histogram(edges=edges, counts=generated)
        emd = profile_emd(ref_hist.centers, reference, generated)
    else:
        ref_hist = Histogram.from_samples(reference, edges)
        gen_hist = Histogram.from_samples(generated, edges)
        emd = emd_1d(reference, generated)
    band = deviation_band(gen_hist, ref_hist, tolerance)
    return ObservableComparison(
        observable=name,
        unit=OBSERVABLE_UNITS[kind],
        bin_edges=[float(e) for e in edges],
        reference=[float(v) for v in ref_hist.density()],
        generated=[float(v) for v in gen_hist.density()],
        ratio=_ratio_list(band),
        out_of_band=[bool(f) for f in band.out_of_band],
        emd=emd,
    )
