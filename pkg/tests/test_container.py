"""
Unit tests for the chunked dataset container.
"""

import struct
import zlib

import numpy as np
import pytest

from calo_diffsim.cli import dispatch
from calo_diffsim.container import (
    MAGIC,
    DatasetReader,
    encode_dataset,
    read_dataset,
    read_header,
    write_dataset,
)
from calo_diffsim.errors import ContractError, CorruptionError, FormatError
from calo_diffsim.models import DatasetFormat, GeometrySpec, IncidentParticle
from calo_diffsim.representation import PointCloudEvent, smear_event, voxelize
from calo_diffsim.showergen import event_rng, generate_events


def _rewrite_first_record(path, offset, fmt, value):
    """Pack ``value`` into record 0 of a one-chunk file and recompress it."""
    data = path.read_bytes()
    header, table = data[:64], data[64:80]
    chunk_offset, length = struct.unpack("<QQ", table)
    raw = bytearray(zlib.decompress(data[chunk_offset: chunk_offset + length]))
    struct.pack_into(fmt, raw, 4 + offset, value)
    chunk = zlib.compress(bytes(raw))
    path.write_bytes(header + struct.pack("<QQ", chunk_offset, len(chunk)) + chunk)


class TestPointCloudFiles:
    """Test zero-suppressed point-cloud datasets."""

    def test_events_survive_a_write(self, geometry, events, tmp_path):
        """Test that discrete events read back field for field."""
        path = write_dataset(events, tmp_path / "events.cds", DatasetFormat.POINTCLOUD, geometry)
        loaded = read_dataset(path, geometry, DatasetFormat.POINTCLOUD)
        assert len(loaded) == len(events)
        assert all(a.same_as(b) for a, b in zip(loaded, events))

    def test_smeared_events_keep_positions(self, geometry, events, tmp_path):
        """Test that smeared positions are stored exactly."""
        smeared = [smear_event(geometry, e, event_rng(1, i)) for i, e in enumerate(events[:5])]
        path = write_dataset(smeared, tmp_path / "smeared.cds", DatasetFormat.POINTCLOUD, geometry)
        loaded = read_dataset(path, geometry)
        assert all(e.is_smeared for e in loaded)
        assert all(a.same_as(b) for a, b in zip(loaded, smeared))

    def test_identical_inputs_identical_bytes(self, geometry, events):
        """Test that encoding is deterministic."""
        a = encode_dataset(events, DatasetFormat.POINTCLOUD, geometry)
        b = encode_dataset(events, DatasetFormat.POINTCLOUD, geometry)
        assert a == b
        assert a.startswith(MAGIC)

    def test_energies_must_be_single_precision(self, geometry):
        """Test that undigitized energies are refused."""
        event = PointCloudEvent(incident=IncidentParticle(momentum=5.0),
                                hits=np.array([[-270.0, -270.0, 1.15, 0.1234567891234]]))
        with pytest.raises(ContractError):
            encode_dataset([event], DatasetFormat.POINTCLOUD, geometry)

    def test_images_cannot_be_point_clouds(self, geometry, events):
        """Test that an image is not written as a point cloud."""
        with pytest.raises(ContractError):
            encode_dataset([voxelize(geometry, events[0])], DatasetFormat.POINTCLOUD, geometry)


class TestChunks:
    """Test chunked random access."""

    def test_chunk_access(self, geometry, events, tmp_path):
        """Test that one chunk can be read on its own."""
        path = tmp_path / "chunked.cds"
        path.write_bytes(encode_dataset(events[:10], DatasetFormat.POINTCLOUD, geometry,
                                        chunk_size=3))
        reader = DatasetReader(path, geometry)
        assert len(reader) == 10
        assert reader.header.n_chunks == 4
        chunk = reader.read_chunk(1)
        assert len(chunk) == 3
        assert chunk[0].same_as(events[3])
        assert len(reader.read_chunk(3)) == 1

    def test_header(self, geometry, events, tmp_path):
        """Test that the header describes the file."""
        path = write_dataset(events, tmp_path / "h.cds", DatasetFormat.POINTCLOUD, geometry)
        header = read_header(path)
        assert header.format is DatasetFormat.POINTCLOUD
        assert header.count == len(events)
        assert header.geometry_hash == geometry.geometry_hash()


class TestImageFiles:
    """Test dense image datasets."""

    def test_point_clouds_voxelized_on_write(self, geometry, events, tmp_path):
        """Test that point clouds written as 11^3 images read back as images."""
        path = write_dataset(events[:4], tmp_path / "img.cds", DatasetFormat.IMAGE_11, geometry)
        images = read_dataset(path, geometry, DatasetFormat.IMAGE_11)
        for image, event in zip(images, events):
            assert image.resolution == 11
            assert image.same_as(voxelize(geometry, event))

    def test_zero_suppression_saves_space(self, geometry, shower_params):
        """Test that point clouds take a tenth of the room of full-granularity images."""
        sample = generate_events(geometry, shower_params, 200, seed=31)
        clouds = encode_dataset(sample, DatasetFormat.POINTCLOUD, geometry)
        full = encode_dataset((voxelize(geometry, e, 1) for e in sample),
                              DatasetFormat.IMAGE_FULL, geometry)
        assert len(full) >= 10 * len(clouds)

    def test_wrong_resolution(self, geometry, events):
        """Test that a full image cannot go into an 11^3 file."""
        with pytest.raises(ContractError):
            encode_dataset([voxelize(geometry, events[0], 1)], DatasetFormat.IMAGE_11, geometry)


class TestDamage:
    """Test detection of foreign and damaged files."""

    def test_bad_magic(self, geometry, tmp_path):
        """Test that a foreign file is recognised as such."""
        path = tmp_path / "foreign.cds"
        path.write_bytes(b"NOTADATASET" + bytes(100))
        with pytest.raises(FormatError):
            read_dataset(path, geometry)

    def test_truncated_file(self, geometry, events, tmp_path):
        """Test that a truncated chunk is reported as corruption."""
        path = write_dataset(events, tmp_path / "cut.cds", DatasetFormat.POINTCLOUD, geometry)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 50])
        with pytest.raises(CorruptionError):
            read_dataset(path, geometry)

    def test_flipped_bytes(self, geometry, events, tmp_path):
        """Test that damaged compressed data is reported as corruption."""
        path = write_dataset(events, tmp_path / "flip.cds", DatasetFormat.POINTCLOUD, geometry)
        data = bytearray(path.read_bytes())
        for i in range(200, 260):
            data[i] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            read_dataset(path, geometry)

    def test_geometry_mismatch(self, geometry, events, tmp_path):
        """Test that a file written for another geometry is refused."""
        path = write_dataset(events, tmp_path / "g.cds", DatasetFormat.POINTCLOUD, geometry)
        with pytest.raises(FormatError):
            read_dataset(path, GeometrySpec(energy_threshold=0.5))

    def test_expected_format(self, geometry, events, tmp_path):
        """Test that asking for the wrong format raises."""
        path = write_dataset(events, tmp_path / "f.cds", DatasetFormat.POINTCLOUD, geometry)
        with pytest.raises(FormatError):
            read_dataset(path, geometry, DatasetFormat.IMAGE_11)

    def test_rewritten_hit_count(self, geometry, events, tmp_path):
        """Test that a record whose hit count disagrees with its length is corruption."""
        path = write_dataset(events[:2], tmp_path / "hits.cds", DatasetFormat.POINTCLOUD, geometry)
        # n_hits follows momentum, theta, phi and the flag byte
        _rewrite_first_record(path, 25, "<H", 60000)
        with pytest.raises(CorruptionError, match="chunk 0"):
            read_dataset(path, geometry)

    def test_impossible_incident(self, geometry, events, tmp_path):
        """Test that an out-of-range incident momentum is corruption."""
        path = write_dataset(events[:2], tmp_path / "inc.cds", DatasetFormat.POINTCLOUD, geometry)
        _rewrite_first_record(path, 0, "<d", -3.0)
        with pytest.raises(CorruptionError, match="chunk 0"):
            read_dataset(path, geometry)

    def test_corrupt_record_exits_cleanly(self, geometry, events, tmp_path):
        """Test that the command line reports a damaged record with exit code 1."""
        path = write_dataset(events[:2], tmp_path / "cli.cds", DatasetFormat.POINTCLOUD, geometry)
        _rewrite_first_record(path, 25, "<H", 60000)
        assert dispatch(["inspect", "--in", str(path)]) == 1
