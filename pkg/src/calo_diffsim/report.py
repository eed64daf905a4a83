"""
Comparison report: summary table plus per-observable EMDs and plot data.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from loguru import logger

from .classifier import train_classifier
from .container import encode_dataset
from .errors import CaloSimError
from .evaluation import (
    ObservableKind,
    compare_observable,
    default_edges,
    sample_observable,
)
from .models import (
    ClassifierConfig,
    DatasetFormat,
    EvalReport,
    EvaluationConfig,
    GeometrySpec,
    ModelSummary,
)
from .representation import PointCloudEvent, VoxelImage, voxelize

__all__ = [
    "GeneratedSet",
    "encoded_size",
    "build_report",
    "render_table",
    "write_report",
    "FULL_SCALE_REFERENCE",
]

# published full-scale figures (1.7M training events), printed as context only
FULL_SCALE_REFERENCE = [
    ("image model", "2,572,161", "1016 MB (62 GB)", "8036.19 s", "0.673"),
    ("point-cloud model", "620,678", "509 MB", "2631.41 s", "0.726"),
]

VOXEL_OBSERVABLES = (
    ObservableKind.TOTAL_ENERGY,
    ObservableKind.N_VOXEL_HITS,
    ObservableKind.MEAN_PROFILE_X,
    ObservableKind.MEAN_PROFILE_Y,
    ObservableKind.MEAN_PROFILE_Z,
)
CELL_OBSERVABLES = (
    ObservableKind.N_CELL_HITS,
    ObservableKind.MEAN_PROFILE_X,
    ObservableKind.MEAN_PROFILE_Y,
    ObservableKind.MEAN_PROFILE_Z,
    ObservableKind.CELL_LOG10_ENERGY,
)


@dataclass(eq=False)
class GeneratedSet:
    """One generated sample and what is known about the model that made it."""

    name: str
    representation: str
    images: Optional[List[VoxelImage]] = None
    events: Optional[List[PointCloudEvent]] = None
    n_parameters: Optional[int] = None
    disk_size_bytes: Optional[int] = None
    disk_size_full_bytes: Optional[int] = None
    sample_seconds_per_1k: Optional[float] = None


def encoded_size(items: Iterable[Union[PointCloudEvent, VoxelImage]], fmt: DatasetFormat,
                 g: GeometrySpec) -> int:
    """Bytes the items would occupy on disk in ``fmt``."""
    return len(encode_dataset(items, fmt, g))


def _voxel_images(g: GeometrySpec, items: Sequence) -> List[VoxelImage]:
    return [voxelize(g, e) if isinstance(e, PointCloudEvent) else e for e in items]


def _compare_set(g: GeometrySpec, cfg: EvaluationConfig, kinds, reference: Sequence,
                 generated: Sequence, granularity: str) -> list:
    comparisons = []
    for kind in kinds:
        ref = sample_observable(kind, reference, g)
        gen = sample_observable(kind, generated, g)
        edges = default_edges(kind, cfg, g, granularity, values=[ref, gen])
        name = kind.value
        if granularity == "cell" and kind.is_profile:
            name = f"cell_{kind.value}"
        comparisons.append(
            compare_observable(name, kind, ref, gen, edges, cfg.deviation_tolerance)
        )
    return comparisons


def build_report(g: GeometrySpec, reference: Sequence[PointCloudEvent],
                 generated: Sequence[GeneratedSet], eval_cfg: EvaluationConfig,
                 clf_cfg: ClassifierConfig, seed: int,
                 reference_disk_size_bytes: Optional[int] = None,
                 reference_disk_size_full_bytes: Optional[int] = None) -> EvalReport:
    """
    Compare every generated set against the reference showers.

    All sets are compared as 11^3 voxel images; point-cloud sets are also
    compared cell by cell at full granularity. Sections that cannot be
    computed are listed as gaps instead of failing the report.
    """
    report = EvalReport(
        seed=seed,
        n_reference=len(reference),
        classifier=clf_cfg,
        reference_disk_size_bytes=reference_disk_size_bytes,
        reference_disk_size_full_bytes=reference_disk_size_full_bytes,
    )
    ref_images = _voxel_images(g, reference)
    for layer in eval_cfg.map_layers:
        if ref_images and layer < g.n_voxels_per_axis:
            report.layer_maps[f"reference/layer{layer}"] = sample_observable(
                ObservableKind.LAYER_MAP, ref_images, g, layer).tolist()

    for gen in generated:
        summary = ModelSummary(
            name=gen.name,
            representation=gen.representation,
            n_parameters=gen.n_parameters,
            disk_size_bytes=gen.disk_size_bytes,
            disk_size_full_bytes=gen.disk_size_full_bytes,
            sample_seconds_per_1k=gen.sample_seconds_per_1k,
        )
        images = gen.images
        if images is None and gen.events is not None:
            images = _voxel_images(g, gen.events)
        if not images or not ref_images:
            summary.gaps.append("voxel comparisons: missing reference or generated images")
        else:
            try:
                summary.comparisons.extend(
                    _compare_set(g, eval_cfg, VOXEL_OBSERVABLES, ref_images, images, "voxel")
                )
            except CaloSimError as e:
                summary.gaps.append(f"voxel comparisons: {e}")
            try:
                summary.auc = train_classifier(ref_images, images, clf_cfg, seed).auc
            except CaloSimError as e:
                summary.gaps.append(f"classifier: {e}")
            for layer in eval_cfg.map_layers:
                if layer < g.n_voxels_per_axis:
                    report.layer_maps[f"{gen.name}/layer{layer}"] = sample_observable(
                        ObservableKind.LAYER_MAP, images, g, layer).tolist()

        if gen.events is not None:
            try:
                summary.comparisons.extend(
                    _compare_set(g, eval_cfg, CELL_OBSERVABLES, reference, gen.events, "cell")
                )
            except CaloSimError as e:
                summary.gaps.append(f"cell comparisons: {e}")
        for field_name in ("n_parameters", "disk_size_bytes", "sample_seconds_per_1k"):
            if getattr(summary, field_name) is None:
                summary.gaps.append(f"{field_name}: not available")
        report.models.append(summary)
    return report


def _fmt_bytes(n: Optional[int]) -> str:
    if n is None:
        return "n/a"
    for unit in ("B", "KB", "MB", "GB"):
        if n < 1024 or unit == "GB":
            return f"{n:.0f} {unit}" if unit == "B" else f"{n:.1f} {unit}"
        n /= 1024.0
    return f"{n:.1f} GB"


def _fmt(value, spec: str) -> str:
    return "n/a" if value is None else format(value, spec)


def render_table(report: EvalReport) -> str:
    """Human-readable summary table (parameters, disk size, sample time, AUC) and the EMD list."""
    lines = [
        f"calo-diffsim evaluation  (seed {report.seed}, {report.n_reference} reference events)",
        f"EMD convention: {report.emd_convention}",
        (
            f"Classifier: {report.classifier.hidden}x{report.classifier.hidden} ReLU, Adam "
            f"{report.classifier.learning_rate:g}, batch {report.classifier.batch_size}, "
            f"<= {report.classifier.max_epochs} epochs, patience {report.classifier.patience}, "
            f"split {report.classifier.train_fraction:g}/{report.classifier.val_fraction:g}/"
            f"{1 - report.classifier.train_fraction - report.classifier.val_fraction:g}, "
            "inputs log(1+E)"
        ),
        "",
    ]
    header = f"{'Model':<20} {'Repr.':<11} {'# Parameters':>13} {'Disk size':>22} {'Sample s/1k':>12} {'AUC':>6}"
    lines += [header, "-" * len(header)]
    full = _fmt_bytes(report.reference_disk_size_full_bytes)
    lines.append(
        f"{'reference':<20} {'pointcloud':<11} {'-':>13} "
        f"{_fmt_bytes(report.reference_disk_size_bytes) + ' (' + full + ')':>22} {'-':>12} {'-':>6}"
    )
    for m in report.models:
        disk = _fmt_bytes(m.disk_size_bytes)
        if m.disk_size_full_bytes is not None:
            disk += f" ({_fmt_bytes(m.disk_size_full_bytes)})"
        params = "n/a" if m.n_parameters is None else f"{m.n_parameters:,}"
        lines.append(
            f"{m.name:<20} {m.representation:<11} {params:>13} {disk:>22} "
            f"{_fmt(m.sample_seconds_per_1k, '.2f'):>12} {_fmt(m.auc, '.3f'):>6}"
        )

    for m in report.models:
        lines += ["", f"EMD to reference: {m.name}"]
        for c in m.comparisons:
            flagged = sum(c.out_of_band)
            populated = sum(r is not None for r in c.ratio)
            lines.append(
                f"  {c.observable:<26} {c.emd:>12.5g} {c.unit:<14} "
                f"{populated - flagged}/{populated} bins within band"
            )
        for gap in m.gaps:
            lines.append(f"  gap: {gap}")

    lines += ["", "Full-scale reference (context only, not compared):"]
    for row in FULL_SCALE_REFERENCE:
        lines.append(f"  {row[0]:<24} params {row[1]:>10}  disk {row[2]:>16}  "
                     f"time/100k {row[3]:>10}  AUC {row[4]}")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: List[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write report.txt, report.dat and per-figure CSV series; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    table = out_dir / "report.txt"
    table.write_text(render_table(report))
    written["table"] = table

    data = out_dir / "report.dat"
    data.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    written["data"] = data

    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for m in report.models:
        for c in m.comparisons:
            path = plots / f"{m.name}_{c.observable}.csv"
            edges = c.bin_edges
            rows = (
                (repr(edges[i]), repr(edges[i + 1]), repr(c.reference[i]), repr(c.generated[i]),
                 "" if c.ratio[i] is None else repr(c.ratio[i]), int(c.out_of_band[i]))
                for i in range(len(edges) - 1)
            )
            _write_csv(path, ["bin_lo", "bin_hi", "reference", "generated", "ratio", "out_of_band"], rows)
            written[path.stem] = path
    for key, grid in sorted(report.layer_maps.items()):
        path = plots / f"map_{key.replace('/', '_')}.csv"
        arr = np.asarray(grid)
        rows = ((ix, iy, repr(float(arr[ix, iy]))) for ix in range(arr.shape[0]) for iy in range(arr.shape[1]))
        _write_csv(path, ["ix", "iy", "mean_energy_mev"], rows)
        written[path.stem] = path
    logger.info(f"📝 Wrote report and {len(written) - 2} plot series to {out_dir}")
    return written
