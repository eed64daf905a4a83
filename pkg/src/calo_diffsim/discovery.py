"""
Checkpoint discovery for finding the trained models of a generation pipeline.
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

from loguru import logger
from pydantic import BaseModel, Field

from .checkpoint import CHECKPOINT_SUFFIX, load_checkpoint, read_checkpoint_header
from .errors import CaloSimError, FormatError
from .models import GeometrySpec, ModelKind
from .pipelines import ModelBundle, bundle_kinds

__all__ = ["CheckpointInfo", "discover_checkpoints", "load_bundle"]


class CheckpointInfo(BaseModel):
    """What a checkpoint header says about the model inside."""

    path: Path
    kind: ModelKind
    geometry_hash: str
    normalization: Dict = Field(description="Normalization statistics stored with the model")
    n_parameters: int


def discover_checkpoints(model_dir: Union[str, Path]) -> List[CheckpointInfo]:
    """Scan ``model_dir`` for checkpoint files; unreadable ones are skipped."""
    model_dir = Path(model_dir)
    if not model_dir.is_dir():
        return []

    discovered = []
    for path in sorted(model_dir.iterdir()):
        if not path.is_file() or path.suffix != CHECKPOINT_SUFFIX:
            continue
        try:
            header = read_checkpoint_header(path)
        except (CaloSimError, OSError) as e:
            logger.warning(f"Skipping {path.name}: {e}")
            continue
        discovered.append(CheckpointInfo(
            path=path,
            kind=ModelKind(header["kind"]),
            geometry_hash=header["geometry_hash"],
            normalization=header["normalization"],
            n_parameters=header["n_parameters"],
        ))
    logger.debug(f"Found {len(discovered)} checkpoints in {model_dir}")
    return discovered


def _pick(found: List[CheckpointInfo], kind: ModelKind, model_dir: Path) -> CheckpointInfo:
    matches = [info for info in found if info.kind is kind]
    if not matches:
        raise FormatError(f"{model_dir}: no {kind.value} checkpoint found")
    if len(matches) > 1:
        names = ", ".join(m.path.name for m in matches)
        raise FormatError(f"{model_dir}: several {kind.value} checkpoints ({names})")
    return matches[0]


def load_bundle(model_dir: Union[str, Path], geometry: GeometrySpec,
                representation: Optional[str] = None) -> ModelBundle:
    """
    Assemble the two models of one pipeline from ``model_dir``.

    With ``representation`` unset the directory must hold exactly one complete
    pipeline. Both models must share the geometry and normalization statistics.
    """
    model_dir = Path(model_dir)
    found = discover_checkpoints(model_dir)
    if not found:
        raise FormatError(f"{model_dir}: no checkpoints found")
    kinds = {info.kind for info in found}
    if representation is None:
        complete = [r for r in ("pointcloud", "image") if set(bundle_kinds(r)) <= kinds]
        if len(complete) != 1:
            raise FormatError(
                f"{model_dir}: expected exactly one complete pipeline, found {complete or 'none'}"
            )
        representation = complete[0]

    first_kind, second_kind = bundle_kinds(representation)
    first = _pick(found, first_kind, model_dir)
    second = _pick(found, second_kind, model_dir)
    if first.geometry_hash != second.geometry_hash:
        raise FormatError(f"{model_dir}: {first_kind.value} and {second_kind.value} disagree on geometry")
    if first.normalization != second.normalization:
        raise FormatError(
            f"{model_dir}: {first_kind.value} and {second_kind.value} were trained with different "
            "normalization statistics"
        )

    stage_one = load_checkpoint(first.path, geometry)
    stage_two = load_checkpoint(second.path, geometry)
    logger.info(f"🔍 Assembled {representation} pipeline from {first.path.name} + {second.path.name}")
    return ModelBundle(
        representation=representation,
        stage_one=stage_one.model,
        stage_two=stage_two.model,
        normalization=stage_two.normalization,
        geometry=geometry,
        n_parameters=stage_one.n_parameters + stage_two.n_parameters,
    )
