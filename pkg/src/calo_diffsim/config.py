"""
Sectioned ``key = value`` configuration.

Every section maps onto one pydantic model. Values found in a file are merged
over the embedded defaults, so an empty file is a valid configuration.
"""

import configparser
import hashlib
import re
from pathlib import Path
from typing import Dict, Optional, Type, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .models import (
    ClassifierConfig,
    EvaluationConfig,
    GeometrySpec,
    SamplingConfig,
    ShowerModelParams,
    TrainingHyper,
)

__all__ = ["ToolConfig", "SECTIONS", "load_config", "load_section", "save_config", "render_config"]

SECTIONS: Dict[str, Type[BaseModel]] = {
    "geometry": GeometrySpec,
    "shower": ShowerModelParams,
    "train": TrainingHyper,
    "sampling": SamplingConfig,
    "classifier": ClassifierConfig,
    "evaluation": EvaluationConfig,
}


class ToolConfig(BaseModel):
    """Complete, validated configuration of one invocation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    geometry: GeometrySpec = Field(default_factory=GeometrySpec)
    shower: ShowerModelParams = Field(default_factory=ShowerModelParams)
    train: TrainingHyper = Field(default_factory=TrainingHyper)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    def config_hashes(self) -> Dict[str, str]:
        """sha256 of each section's canonical JSON."""
        return {
            name: hashlib.sha256(getattr(self, name).model_dump_json().encode("utf-8")).hexdigest()
            for name in SECTIONS
        }


def _parse_value(model_cls: Type[BaseModel], key: str, raw: str):
    default = model_cls.model_fields[key].default
    if isinstance(default, tuple):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw.strip()


def _section(model_cls: Type[BaseModel], name: str, values: Dict[str, str],
             base: Optional[BaseModel] = None) -> BaseModel:
    unknown = sorted(set(values) - set(model_cls.model_fields))
    if unknown:
        raise ConfigError(f"[{name}] unknown key '{unknown[0]}'")
    default_config = (base if base is not None else model_cls()).model_dump()
    loaded = {key: _parse_value(model_cls, key, raw) for key, raw in values.items()}
    try:
        return model_cls(**{**default_config, **loaded})
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "?"
        raise ConfigError(f"[{name}] invalid value for '{where}': {first['msg']}") from e


def _read_parser(path: Path, default_section: Optional[str] = None) -> configparser.ConfigParser:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if default_section is not None and not re.search(r"^\s*\[", text, re.MULTILINE):
        # bare key = value files describe a single section
        text = f"[{default_section}]\n" + text
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: malformed config: {e}") from e
    return parser


def load_config(path: Optional[Union[str, Path]] = None) -> ToolConfig:
    """Read ``path`` (or nothing) into a fully defaulted ToolConfig."""
    if path is None:
        return ToolConfig()
    path = Path(path)
    parser = _read_parser(path)

    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        sections[name] = _section(SECTIONS[name], name, dict(parser.items(name)))
    logger.debug(f"Loaded config from {path} ({', '.join(sections) or 'defaults only'})")
    return ToolConfig(**sections)


def load_section(path: Union[str, Path], name: str, base: Optional[BaseModel] = None) -> BaseModel:
    """
    Read one section from its own file, e.g. a ``--geometry`` file.

    The file may hold bare ``key = value`` lines or a single ``[name]`` section.
    Its keys override ``base`` (the section already configured), else the defaults.
    """
    if name not in SECTIONS:
        raise ConfigError(f"unknown section [{name}]")
    path = Path(path)
    parser = _read_parser(path, default_section=name)
    foreign = [s for s in parser.sections() if s != name]
    if foreign:
        raise ConfigError(f"{path}: expected only [{name}], found [{foreign[0]}]")
    values = dict(parser.items(name)) if parser.has_section(name) else {}
    section = _section(SECTIONS[name], name, values, base)
    logger.debug(f"Loaded [{name}] from {path}")
    return section


def _render_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: ToolConfig) -> str:
    """The configuration as config-file text, every key written out."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for key, value in getattr(cfg, name).model_dump().items():
            lines.append(f"{key} = {_render_value(value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: ToolConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_config(cfg))
    logger.debug(f"Saved config to {path}")
    return path
