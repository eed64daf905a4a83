"""
Cell lattice arithmetic: index/position maps, thresholding and within-cell smearing.

Positions are local lattice coordinates in cm. x and y are centered on the
lattice axis, z runs from the front face. Cells are half-open ``[lo, hi)`` on
every axis except the global upper edge, which belongs to the last cell.
"""

from typing import Iterable, List, NamedTuple

import numpy as np

from .errors import BoundsError, ContractError, OutOfAcceptanceError
from .models import CellHit, GeometrySpec

__all__ = [
    "CellIndex",
    "cell_center",
    "cell_centers",
    "quantize",
    "quantize_many",
    "flat_index",
    "unflatten_index",
    "smear",
    "smear_positions",
    "apply_threshold",
    "threshold_mask",
]


class CellIndex(NamedTuple):
    ix: int
    iy: int
    iz: int


def _lower(g: GeometrySpec) -> np.ndarray:
    return np.asarray(g.lower_edges, dtype=np.float64)


def _pitch(g: GeometrySpec) -> np.ndarray:
    return np.asarray(g.pitches, dtype=np.float64)


def cell_centers(g: GeometrySpec, indices: np.ndarray) -> np.ndarray:
    """Vectorized cell centers for an ``(n, 3)`` integer index array."""
    indices = np.asarray(indices)
    n = g.n_cells_per_axis
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise BoundsError(f"cell index outside [0, {n})")
    return _lower(g) + (indices.astype(np.float64) + 0.5) * _pitch(g)


def cell_center(g: GeometrySpec, idx: Iterable[int]) -> np.ndarray:
    """Geometric center of one cell in cm."""
    idx = tuple(int(i) for i in idx)
    n = g.n_cells_per_axis
    if len(idx) != 3 or any(i < 0 or i >= n for i in idx):
        raise BoundsError(f"cell index {idx} outside [0, {n}) on some axis")
    return cell_centers(g, np.asarray([idx]))[0]


def quantize_many(g: GeometrySpec, positions: np.ndarray) -> np.ndarray:
    """Cell indices of an ``(n, 3)`` position array."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lo = _lower(g)
    hi = np.asarray(g.upper_edges, dtype=np.float64)
    outside = (positions < lo) | (positions > hi) | ~np.isfinite(positions)
    if outside.any():
        bad = positions[outside.any(axis=1)][0]
        raise OutOfAcceptanceError(f"position {tuple(bad)} outside lattice extent")
    idx = np.floor((positions - lo) / _pitch(g)).astype(np.int64)
    # upper edge is inclusive
    return np.minimum(idx, g.n_cells_per_axis - 1)


def quantize(g: GeometrySpec, position: Iterable[float]) -> CellIndex:
    """Index of the cell containing ``position``."""
    idx = quantize_many(g, np.asarray(list(position), dtype=np.float64))[0]
    return CellIndex(int(idx[0]), int(idx[1]), int(idx[2]))


def flat_index(g: GeometrySpec, indices: np.ndarray) -> np.ndarray:
    n = g.n_cells_per_axis
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
    return (indices[:, 0] * n + indices[:, 1]) * n + indices[:, 2]


def unflatten_index(g: GeometrySpec, flat: np.ndarray) -> np.ndarray:
    n = g.n_cells_per_axis
    flat = np.asarray(flat, dtype=np.int64)
    return np.stack([flat // (n * n), (flat // n) % n, flat % n], axis=1)


def smear_positions(g: GeometrySpec, positions: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Displace cell-center positions uniformly within their cells."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    pitch = _pitch(g)
    idx = quantize_many(g, positions)
    cell_lo = _lower(g) + idx * pitch
    cell_hi = cell_lo + pitch
    smeared = positions + rng.uniform(-0.5, 0.5, size=positions.shape) * pitch
    # rounding may land a draw on the neighbour's edge; keep it inside its own cell
    return np.clip(smeared, cell_lo, np.nextafter(cell_hi, cell_lo))


def smear(g: GeometrySpec, hit: CellHit, rng: np.random.Generator) -> CellHit:
    """Uniform within-cell smearing of one discrete hit; energy is untouched."""
    if hit.is_smeared:
        raise ContractError("hit is already smeared")
    position = smear_positions(g, np.asarray(hit.position), rng)[0]
    return CellHit(position=tuple(float(v) for v in position), energy=hit.energy,
                   is_smeared=True)


def threshold_mask(g: GeometrySpec, energies: np.ndarray) -> np.ndarray:
    """Boolean mask of energies at or above threshold (inclusive)."""
    return np.asarray(energies) >= g.energy_threshold


def apply_threshold(g: GeometrySpec, hits: List[CellHit]) -> List[CellHit]:
    """Hits with energy >= threshold, original order preserved."""
    return [hit for hit in hits if hit.energy >= g.energy_threshold]
