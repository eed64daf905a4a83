"""
Chunked, deflate-compressed event container.

Layout::

    header      64 bytes  magic, version, format, flags, count, chunk size,
                          chunk count, sha256(geometry)
    chunk table n_chunks x (offset u64, length u64)
    chunks      zlib streams of length-prefixed records

Point-cloud records are zero-suppressed: only the cells that fired are stored.
Image records carry the full dense grid at their own resolution.
"""

import struct
import zlib
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .errors import ContractError, CorruptionError, FormatError
from .geometry import cell_centers, flat_index, quantize_many, unflatten_index
from .models import DatasetFormat, GeometrySpec, IncidentParticle
from .representation import PointCloudEvent, VoxelImage, voxelize

__all__ = [
    "FORMAT_VERSION",
    "MAGIC",
    "DatasetHeader",
    "DatasetReader",
    "encode_dataset",
    "write_dataset",
    "read_dataset",
    "read_header",
]

MAGIC = b"CALODS01"
FORMAT_VERSION = 1
CHUNK_SIZE = 1024
COMPRESSION_LEVEL = 6

_HEADER = struct.Struct("<8sHBBQII32s4x")
_TABLE_ENTRY = struct.Struct("<QQ")
_LENGTH = struct.Struct("<I")
_INCIDENT = struct.Struct("<ddd")
_CLOUD_HEAD = struct.Struct("<dddBH")

_FLAG_SMEARED = 1

Item = Union[PointCloudEvent, VoxelImage]


class DatasetHeader:
    """Decoded fixed-size file header."""

    def __init__(self, fmt: DatasetFormat, count: int, chunk_size: int, n_chunks: int,
                 geometry_hash: bytes, version: int = FORMAT_VERSION):
        self.format = fmt
        self.count = count
        self.chunk_size = chunk_size
        self.n_chunks = n_chunks
        self.geometry_hash = geometry_hash
        self.version = version

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.format.code, 0, self.count,
                            self.chunk_size, self.n_chunks, self.geometry_hash)

    @classmethod
    def unpack(cls, raw: bytes) -> "DatasetHeader":
        if len(raw) < _HEADER.size:
            raise CorruptionError("file shorter than the dataset header")
        magic, version, code, _flags, count, chunk_size, n_chunks, ghash = _HEADER.unpack(
            raw[: _HEADER.size]
        )
        if magic != MAGIC:
            raise FormatError(f"not a calo-diffsim dataset (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
        try:
            fmt = DatasetFormat.from_code(code)
        except ValueError as e:
            raise FormatError(str(e)) from e
        return cls(fmt, count, chunk_size, n_chunks, ghash, version)


def _image_resolution(fmt: DatasetFormat, g: GeometrySpec) -> Tuple[int, int]:
    """(voxels per axis, cell group) of an image format."""
    if fmt is DatasetFormat.IMAGE_11:
        return g.n_voxels_per_axis, g.voxel_group
    return g.n_cells_per_axis, 1


def _encode_cloud(event: PointCloudEvent, g: GeometrySpec) -> bytes:
    inc = event.incident
    flags = _FLAG_SMEARED if event.is_smeared else 0
    energies = event.energies.astype(np.float32)
    if not np.array_equal(energies.astype(np.float64), event.energies):
        raise ContractError("point-cloud energies must be digitized to single precision")
    parts = [_CLOUD_HEAD.pack(inc.momentum, inc.theta, inc.phi, flags, event.n_hits)]
    if event.is_smeared:
        parts.append(event.positions.astype("<f8").tobytes())
    else:
        cells = flat_index(g, quantize_many(g, event.positions)).astype("<u4")
        parts.append(cells.tobytes())
    parts.append(energies.astype("<f4").tobytes())
    return b"".join(parts)


def _decode_cloud(payload: bytes, g: GeometrySpec) -> PointCloudEvent:
    momentum, theta, phi, flags, n = _CLOUD_HEAD.unpack_from(payload)
    offset = _CLOUD_HEAD.size
    smeared = bool(flags & _FLAG_SMEARED)
    width = 28 if smeared else 8
    if offset + width * n != len(payload):
        raise CorruptionError("point-cloud record length does not match its hit count")
    if smeared:
        positions = np.frombuffer(payload, "<f8", 3 * n, offset).reshape(n, 3)
        offset += 24 * n
    else:
        cells = np.frombuffer(payload, "<u4", n, offset).astype(np.int64)
        positions = cell_centers(g, unflatten_index(g, cells))
        offset += 4 * n
    energies = np.frombuffer(payload, "<f4", n, offset).astype(np.float64)
    incident = IncidentParticle(momentum=momentum, theta=theta, phi=phi)
    hits = np.column_stack([positions, energies]) if n else np.zeros((0, 4))
    return PointCloudEvent(incident=incident, hits=hits, is_smeared=smeared)


def _encode_image(item: Item, fmt: DatasetFormat, g: GeometrySpec) -> bytes:
    m, group = _image_resolution(fmt, g)
    image = voxelize(g, item, group) if isinstance(item, PointCloudEvent) else item
    if image.resolution != m:
        raise ContractError(f"{fmt.value} expects {m}^3 images, got {image.resolution}^3")
    inc = image.incident
    return _INCIDENT.pack(inc.momentum, inc.theta, inc.phi) + image.energies.astype("<f8").tobytes()


def _decode_image(payload: bytes, fmt: DatasetFormat, g: GeometrySpec) -> VoxelImage:
    m, _ = _image_resolution(fmt, g)
    if len(payload) != _INCIDENT.size + 8 * m ** 3:
        raise CorruptionError("image record has the wrong size")
    momentum, theta, phi = _INCIDENT.unpack_from(payload)
    grid = np.frombuffer(payload, "<f8", m ** 3, _INCIDENT.size).reshape(m, m, m)
    return VoxelImage(energies=grid.copy(),
                      incident=IncidentParticle(momentum=momentum, theta=theta, phi=phi))


def _encode(item: Item, fmt: DatasetFormat, g: GeometrySpec) -> bytes:
    if fmt is DatasetFormat.POINTCLOUD:
        if not isinstance(item, PointCloudEvent):
            raise ContractError("images cannot be written as point clouds")
        return _encode_cloud(item, g)
    return _encode_image(item, fmt, g)


def encode_dataset(items: Iterable[Item], fmt: DatasetFormat, g: GeometrySpec,
                   chunk_size: int = CHUNK_SIZE) -> bytes:
    """Serialize items into the container byte layout."""
    fmt = DatasetFormat(fmt)
    chunks: List[bytes] = []
    count = 0
    compressor = None
    in_chunk = 0
    pieces: List[bytes] = []
    for item in items:
        if compressor is None:
            compressor = zlib.compressobj(COMPRESSION_LEVEL)
            pieces = []
        record = _encode(item, fmt, g)
        pieces.append(compressor.compress(_LENGTH.pack(len(record)) + record))
        count += 1
        in_chunk += 1
        if in_chunk == chunk_size:
            pieces.append(compressor.flush())
            chunks.append(b"".join(pieces))
            compressor, in_chunk = None, 0
    if compressor is not None:
        pieces.append(compressor.flush())
        chunks.append(b"".join(pieces))

    header = DatasetHeader(fmt, count, chunk_size, len(chunks), g.geometry_hash())
    offset = _HEADER.size + _TABLE_ENTRY.size * len(chunks)
    table = []
    for chunk in chunks:
        table.append(_TABLE_ENTRY.pack(offset, len(chunk)))
        offset += len(chunk)
    return header.pack() + b"".join(table) + b"".join(chunks)


def write_dataset(items: Iterable[Item], path: Union[str, Path], fmt: DatasetFormat,
                  g: GeometrySpec) -> Path:
    """Write items to ``path``; identical inputs give byte-identical files."""
    path = Path(path)
    data = encode_dataset(items, fmt, g)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path


class DatasetReader:
    """Random access to the chunks of a dataset file."""

    def __init__(self, path: Union[str, Path], geometry: GeometrySpec):
        self.path = Path(path)
        self.geometry = geometry
        with open(self.path, "rb") as f:
            self.header = DatasetHeader.unpack(f.read(_HEADER.size))
            raw_table = f.read(_TABLE_ENTRY.size * self.header.n_chunks)
        if len(raw_table) != _TABLE_ENTRY.size * self.header.n_chunks:
            raise CorruptionError(f"{self.path}: truncated chunk table")
        if self.header.geometry_hash != geometry.geometry_hash():
            raise FormatError(f"{self.path}: geometry does not match the configured geometry")
        self.chunks = [_TABLE_ENTRY.unpack_from(raw_table, i * _TABLE_ENTRY.size)
                       for i in range(self.header.n_chunks)]

    @property
    def format(self) -> DatasetFormat:
        return self.header.format

    def __len__(self) -> int:
        return self.header.count

    def read_chunk(self, index: int) -> List[Item]:
        offset, length = self.chunks[index]
        with open(self.path, "rb") as f:
            f.seek(offset)
            compressed = f.read(length)
        if len(compressed) != length:
            raise CorruptionError(f"{self.path}: chunk {index} is truncated")
        try:
            raw = zlib.decompress(compressed)
        except zlib.error as e:
            raise CorruptionError(f"{self.path}: chunk {index} does not inflate: {e}") from e
        items = []
        pos = 0
        while pos < len(raw):
            if pos + _LENGTH.size > len(raw):
                raise CorruptionError(f"{self.path}: dangling record length in chunk {index}")
            (n,) = _LENGTH.unpack_from(raw, pos)
            pos += _LENGTH.size
            payload = raw[pos: pos + n]
            if len(payload) != n:
                raise CorruptionError(f"{self.path}: truncated record in chunk {index}")
            pos += n
            try:
                if self.format is DatasetFormat.POINTCLOUD:
                    items.append(_decode_cloud(payload, self.geometry))
                else:
                    items.append(_decode_image(payload, self.format, self.geometry))
            except CorruptionError as e:
                raise CorruptionError(f"{self.path}: chunk {index}: {e}") from e
            except (struct.error, ValueError, IndexError) as e:
                # pydantic ValidationError and ContractError are both ValueErrors
                raise CorruptionError(f"{self.path}: malformed record in chunk {index}: {e}") from e
        return items

    def __iter__(self) -> Iterator[Item]:
        for i in range(self.header.n_chunks):
            yield from self.read_chunk(i)


def read_header(path: Union[str, Path]) -> DatasetHeader:
    with open(path, "rb") as f:
        return DatasetHeader.unpack(f.read(_HEADER.size))


def read_dataset(path: Union[str, Path], geometry: GeometrySpec,
                 expected: Optional[DatasetFormat] = None) -> List[Item]:
    """Read every item of a dataset file."""
    reader = DatasetReader(path, geometry)
    if expected is not None and reader.format is not DatasetFormat(expected):
        raise FormatError(f"{path}: holds {reader.format.value}, expected {DatasetFormat(expected).value}")
    items = list(reader)
    if len(items) != len(reader):
        raise CorruptionError(f"{path}: header promises {len(reader)} events, found {len(items)}")
    return items
