"""
Parametric toy shower generator.

Produces ground-truth point-cloud events with the data shape of a
high-granularity hadronic calorimeter: single pions with log-uniform momentum,
fixed polar angle and uniform azimuth, depositing a Gamma-shaped longitudinal
profile with a widening Gaussian core. The generator is a reproducible
surrogate, not a physics model.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, List, TypeVar, Union

import numpy as np
from loguru import logger

from .container import write_dataset
from .errors import AcceptanceError, ContractError
from .geometry import cell_centers, flat_index, threshold_mask, unflatten_index
from .models import (
    FIXED_THETA_DEG,
    MOMENTUM_MAX_GEV,
    MOMENTUM_MIN_GEV,
    DatasetFormat,
    GeometrySpec,
    IncidentParticle,
    ShowerModelParams,
)
from .representation import PointCloudEvent, smear_event

T = TypeVar("T")
R = TypeVar("R")

__all__ = [
    "momentum_from_uniform",
    "sample_incident",
    "impact_point",
    "generate_shower",
    "event_rng",
    "generate_events",
    "map_events",
    "smear_events",
    "build_dataset",
]

# fluctuation factor is clipped at this many standard deviations
FLUCTUATION_CAP_SIGMA = 5.0
FLUCTUATION_FLOOR = 0.05


def momentum_from_uniform(u: float) -> float:
    """Map u in [0, 1] to a momentum log-uniform on [1, 125] GeV/c."""
    if not 0.0 <= u <= 1.0:
        raise ContractError(f"uniform draw must lie in [0, 1], got {u}")
    log_max = math.log10(MOMENTUM_MAX_GEV)
    momentum = 10.0 ** (u * log_max)
    return min(max(momentum, MOMENTUM_MIN_GEV), MOMENTUM_MAX_GEV)


def sample_incident(rng: np.random.Generator) -> IncidentParticle:
    """Draw one incident pion: log10 P uniform, theta fixed, phi uniform in [0, 360)."""
    momentum = momentum_from_uniform(float(rng.random()))
    phi = float(rng.uniform(0.0, 360.0))
    return IncidentParticle(momentum=momentum, theta=FIXED_THETA_DEG, phi=phi % 360.0)


def _direction(inc: IncidentParticle) -> np.ndarray:
    """Transverse displacement per cm of depth."""
    tan_theta = math.tan(math.radians(inc.theta))
    phi = math.radians(inc.phi)
    return np.array([tan_theta * math.cos(phi), tan_theta * math.sin(phi)])


def impact_point(g: GeometrySpec, inc: IncidentParticle) -> np.ndarray:
    """Transverse entry point (cm) of a particle from the origin on the front face."""
    radius_cm = g.front_face_z * 100.0
    return radius_cm * _direction(inc)


def _check_acceptance(g: GeometrySpec, inc: IncidentParticle) -> None:
    entry = impact_point(g, inc)
    depth = g.n_cells_per_axis * g.cell_pitch_z
    exit_point = entry + depth * _direction(inc)
    half = 0.5 * g.n_cells_per_axis * g.cell_pitch_xy
    for label, point in (("entry", entry), ("exit", exit_point)):
        if np.any(np.abs(point) >= half):
            raise AcceptanceError(
                f"shower axis {label} point {tuple(np.round(point, 2))} cm leaves the "
                f"lattice (half width {half} cm) for phi={inc.phi:.2f}"
            )


def _visible_energy(g: GeometrySpec, p: ShowerModelParams, kinetic_gev: float,
                    rng: np.random.Generator) -> float:
    """Visible energy in MeV with a clipped Gaussian fluctuation."""
    rel = p.relative_resolution(kinetic_gev)
    factor = 1.0 + rel * rng.standard_normal()
    factor = min(max(factor, FLUCTUATION_FLOOR), 1.0 + FLUCTUATION_CAP_SIGMA * rel)
    visible = p.sampling_fraction * kinetic_gev * factor * 1000.0
    # at least one hit must be able to pass threshold
    return max(visible, 2.0 * g.energy_threshold)


def generate_shower(g: GeometrySpec, p: ShowerModelParams, inc: IncidentParticle,
                    rng: np.random.Generator) -> PointCloudEvent:
    """
    Generate one discrete point-cloud event.

    Spatial deposits are drawn from the longitudinal and transverse profiles,
    summed per cell, digitized to single precision, thresholded and capped at
    ``g.max_points`` by energy rank.
    """
    _check_acceptance(g, inc)
    kinetic = inc.kinetic_energy
    visible = _visible_energy(g, p, kinetic, rng)
    n_deposits = max(1, int(rng.poisson(p.hits_per_gev * visible / 1000.0)))

    shape = p.shape_a0 + p.shape_a1 * math.log(max(kinetic, 1e-3))
    depth_layers = rng.gamma(shape, 1.0 / p.scale_b, size=n_deposits)
    n = g.n_cells_per_axis
    width = p.transverse_width_front + (
        p.transverse_width_back - p.transverse_width_front
    ) * np.minimum(depth_layers, n) / n
    depth_cm = depth_layers * g.cell_pitch_z
    axis_xy = impact_point(g, inc)[None, :] + depth_cm[:, None] * _direction(inc)[None, :]
    xy = axis_xy + rng.standard_normal((n_deposits, 2)) * width[:, None]

    weights = rng.exponential(1.0, size=n_deposits)
    deposits = visible * weights / weights.sum()

    lo = np.asarray(g.lower_edges)
    hi = np.asarray(g.upper_edges)
    positions = np.column_stack([xy, depth_cm])
    # leakage out of the lattice is lost energy
    inside = np.all((positions >= lo) & (positions < hi), axis=1)
    positions, deposits = positions[inside], deposits[inside]

    if len(deposits) == 0:
        # everything leaked: deposit at shower maximum on the axis
        t_max = max(shape - 1.0, 0.0) / p.scale_b
        z = min(t_max * g.cell_pitch_z, hi[2] - 0.5 * g.cell_pitch_z)
        positions = np.array([[*(impact_point(g, inc) + z * _direction(inc)), z]])
        deposits = np.array([visible])

    idx = np.floor((positions - lo) / np.asarray(g.pitches)).astype(np.int64)
    idx = np.minimum(idx, n - 1)
    cells, inverse = np.unique(flat_index(g, idx), return_inverse=True)
    energies = np.bincount(inverse, weights=deposits, minlength=len(cells))
    energies = energies.astype(np.float32).astype(np.float64)

    keep = threshold_mask(g, energies)
    if not keep.any():
        # merge the visible energy into the hottest cell so the event is never empty
        hottest = int(np.argmax(energies))
        energies = np.zeros_like(energies)
        energies[hottest] = np.float64(np.float32(visible))
        keep = threshold_mask(g, energies)
    cells, energies = cells[keep], energies[keep]

    if len(cells) > g.max_points:
        order = np.argsort(-energies, kind="stable")[: g.max_points]
        cells, energies = cells[order], energies[order]
        sort = np.argsort(cells, kind="stable")
        cells, energies = cells[sort], energies[sort]

    hits = np.column_stack([cell_centers(g, unflatten_index(g, cells)), energies])
    return PointCloudEvent(incident=inc, hits=hits.reshape(-1, 4), is_smeared=False)


def event_rng(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for event ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def _generate_one(index: int, g: GeometrySpec, p: ShowerModelParams,
                  seed: int) -> PointCloudEvent:
    rng = event_rng(seed, index)
    return generate_shower(g, p, sample_incident(rng), rng)


def generate_events(g: GeometrySpec, p: ShowerModelParams, n_events: int, seed: int,
                    workers: int = 1) -> List[PointCloudEvent]:
    """Generate events ``0..n_events-1``; output is independent of ``workers``."""
    if n_events < 1:
        raise ContractError(f"n_events must be >= 1, got {n_events}")
    return map_events(partial(_generate_one, g=g, p=p, seed=seed), range(n_events), workers)


def map_events(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """
    Apply a picklable per-event function, in order.

    Every event carries its own random stream, so the result does not depend on
    ``workers``; with ``workers > 1`` events are spread over a process pool.
    """
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=64))


def _smear_one(indexed, g: GeometrySpec, seed: int) -> PointCloudEvent:
    index, event = indexed
    if event.is_smeared:
        return event
    return smear_event(g, event, event_rng(seed, index))


def smear_events(g: GeometrySpec, events: List[PointCloudEvent], seed: int,
                 workers: int = 1) -> List[PointCloudEvent]:
    """Smear event ``i`` with stream ``(seed, i)``; already smeared events pass through."""
    return map_events(partial(_smear_one, g=g, seed=seed), list(enumerate(events)), workers)


def build_dataset(g: GeometrySpec, p: ShowerModelParams, n_events: int, seed: int,
                  path: Union[str, Path], workers: int = 1) -> Path:
    """Generate ``n_events`` events and write them as a point-cloud dataset."""
    events = generate_events(g, p, n_events, seed, workers=workers)
    mean_hits = float(np.mean([e.n_hits for e in events]))
    logger.info(f"Generated {n_events} events (mean n_hits {mean_hits:.1f})")
    return write_dataset(events, path, DatasetFormat.POINTCLOUD, g)
