"""
Tests for the calo-diffsim command line.
"""

import json

import pytest

from calo_diffsim.cli import build_parser, dispatch, effective_config, manifest_path
from calo_diffsim.container import read_dataset, read_header
from calo_diffsim.models import DatasetFormat, GeometrySpec

TINY_CONFIG = """\
[train]
steps = 2
batch_size = 4
eval_every = 1
checkpoint_every = 100
holdout_fraction = 0.25
width = 8
time_embedding_dim = 4
grid_channels = 4, 8
dense_width = 8

[sampling]
n_steps = 4
batch_size = 4

[classifier]
hidden = 8
max_epochs = 2
"""


def run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end run through every command."""
    work = tmp_path_factory.mktemp("cli")
    cfg = work / "tiny.ini"
    cfg.write_text(TINY_CONFIG)
    c = ("--config", cfg)

    assert run(*c, "generate", "--n", 8, "--seed", 1, "--out", work / "train.calo") == 0
    assert run(*c, "generate", "--n", 8, "--seed", 2, "--out", work / "ref.calo") == 0
    for model in ("multiplicity", "cloud"):
        assert run(*c, "train", "--model", model, "--data", work / "train.calo", "--seed", 3,
                   "--out", work / "pc" / f"{model}.ckpt") == 0
    assert run(*c, "voxelize", "--in", work / "train.calo", "--out", work / "train_img.calo") == 0
    for model in ("layers", "image"):
        assert run(*c, "train", "--model", model, "--data", work / "train_img.calo", "--seed", 4,
                   "--out", work / "img" / f"{model}.ckpt") == 0
    for name in ("pc", "img"):
        assert run(*c, "sample", "--model-dir", work / name, "--n", 8, "--seed", 5,
                   "--cond-from", work / "ref.calo", "--out", work / f"gen_{name}.calo") == 0
    assert run(*c, "evaluate", "--ref", work / "ref.calo", "--gen", work / "gen_pc.calo",
               "--gen2", work / "gen_img.calo", "--seed", 6, "--out", work / "report",
               "--no-full-size") == 0
    return work


class TestExitCodes:
    """Test how failures map to exit codes."""

    def test_no_command(self):
        """Test that a missing command is a usage error."""
        assert run() == 2

    def test_unknown_command(self):
        """Test that an unknown command is a usage error."""
        assert run("simulate") == 2

    def test_missing_input(self, tmp_path):
        """Test that a missing input file fails with exit code 1."""
        assert run("inspect", "--in", tmp_path / "nope.calo") == 1

    def test_bad_event_count(self, tmp_path):
        """Test that generating zero events is refused."""
        assert run("generate", "--n", 0, "--seed", 1, "--out", tmp_path / "x.calo") == 1

    def test_bad_config(self, tmp_path):
        """Test that an invalid config file fails before any work."""
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nsteps = -1\n")
        assert run("--config", cfg, "generate", "--n", 1, "--seed", 1,
                   "--out", tmp_path / "x.calo") == 1
        assert not (tmp_path / "x.calo").exists()

    def test_print_config(self, capsys):
        """Test that the effective configuration is printed."""
        assert run("--print-config") == 0
        out = capsys.readouterr().out
        assert "[geometry]" in out
        assert "n_steps = 512" in out


class TestPipeline:
    """Test the outputs of a tiny end-to-end run."""

    def test_generated_dataset(self, workdir):
        """Test the generated dataset and its manifest."""
        events = read_dataset(workdir / "train.calo", GeometrySpec())
        assert len(events) == 8
        manifest = json.loads(manifest_path(workdir / "train.calo").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seeds"] == {"generate": 1}
        assert manifest["outputs"][0]["size_bytes"] == (workdir / "train.calo").stat().st_size

    def test_generation_is_reproducible(self, workdir, tmp_path):
        """Test that the same seed writes the same bytes."""
        assert run("generate", "--n", 8, "--seed", 1, "--out", tmp_path / "again.calo") == 0
        assert (tmp_path / "again.calo").read_bytes() == (workdir / "train.calo").read_bytes()

    def test_checkpoints(self, workdir):
        """Test that training wrote one checkpoint per model with a manifest."""
        for name, model in [("pc", "cloud"), ("pc", "multiplicity"), ("img", "image"),
                            ("img", "layers")]:
            ckpt = workdir / name / f"{model}.ckpt"
            assert ckpt.is_file()
            manifest = json.loads(manifest_path(ckpt).read_text())
            assert manifest["metadata"]["n_parameters"] > 0
            assert "final_holdout_loss" in manifest["metadata"]

    def test_samples_follow_reference_conditions(self, workdir):
        """Test that sampled events reuse the reference incident particles."""
        g = GeometrySpec()
        ref = read_dataset(workdir / "ref.calo", g)
        gen_pc = read_dataset(workdir / "gen_pc.calo", g)
        assert [e.incident for e in gen_pc] == [e.incident for e in ref]
        assert read_header(workdir / "gen_img.calo").format is DatasetFormat.IMAGE_11
        meta = json.loads(manifest_path(workdir / "gen_pc.calo").read_text())["metadata"]
        assert meta["sample_seconds_per_1k"] > 0

    def test_sampling_is_reproducible(self, workdir, tmp_path):
        """Test that sampling twice with one seed writes identical files."""
        cfg = workdir / "tiny.ini"
        assert run("--config", cfg, "sample", "--model-dir", workdir / "pc", "--n", 8,
                   "--seed", 5, "--cond-from", workdir / "ref.calo",
                   "--out", tmp_path / "again.calo") == 0
        assert (tmp_path / "again.calo").read_bytes() == (workdir / "gen_pc.calo").read_bytes()

    def test_report(self, workdir):
        """Test the evaluation outputs."""
        table = (workdir / "report" / "report.txt").read_text()
        assert "pointcloud" in table and "image" in table
        data = json.loads((workdir / "report" / "report.dat").read_text())
        assert [m["name"] for m in data["models"]] == ["pointcloud", "image"]
        assert data["models"][0]["n_parameters"] > 0
        assert (workdir / "report" / "manifest.json").is_file()

    def test_empty_model_dir(self, tmp_path):
        """Test that sampling from a directory with no pipeline fails."""
        assert run("sample", "--model-dir", tmp_path, "--n", 2, "--seed", 0,
                   "--out", tmp_path / "x.calo") == 1


class TestDatasetCommands:
    """Test smear, voxelize and inspect."""

    def test_smear(self, workdir, tmp_path):
        """Test that smearing marks every event and keeps the hit counts."""
        out = tmp_path / "smeared.calo"
        assert run("smear", "--in", workdir / "train.calo", "--seed", 9, "--out", out) == 0
        g = GeometrySpec()
        smeared = read_dataset(out, g)
        original = read_dataset(workdir / "train.calo", g)
        assert all(e.is_smeared for e in smeared)
        assert [e.n_hits for e in smeared] == [e.n_hits for e in original]

    def test_voxelize_full(self, workdir, tmp_path):
        """Test full-granularity voxelization."""
        out = tmp_path / "full.calo"
        assert run("voxelize", "--in", workdir / "ref.calo", "--out", out, "--full") == 0
        assert read_header(out).format is DatasetFormat.IMAGE_FULL

    def test_inspect_dataset(self, workdir, capsys):
        """Test the dataset summary with validation."""
        assert run("inspect", "--in", workdir / "train.calo", "--validate") == 0
        out = capsys.readouterr().out
        assert "events       8" in out
        assert "invalid      0" in out

    def test_inspect_checkpoint(self, workdir, capsys):
        """Test the checkpoint summary."""
        assert run("inspect", "--in", workdir / "pc" / "cloud.ckpt") == 0
        out = capsys.readouterr().out
        assert "model        cloud" in out

    def test_validate_needs_point_clouds(self, workdir):
        """Test that image datasets cannot be validated as point clouds."""
        assert run("inspect", "--in", workdir / "train_img.calo", "--validate") == 1


class TestParameterFiles:
    """Test the per-command geometry and shower parameter files."""

    def test_generate_then_validate(self, tmp_path):
        """Test that a dataset made for a geometry file validates against that file."""
        geometry = tmp_path / "geometry.ini"
        geometry.write_text("# raised threshold\nenergy_threshold = 0.5\n")
        shower = tmp_path / "shower.ini"
        shower.write_text("[shower]\nhits_per_gev = 20.0\n")
        out = tmp_path / "events.calo"
        assert run("generate", "--n", 4, "--seed", 1, "--geometry", geometry,
                   "--shower-params", shower, "--out", out) == 0
        assert run("inspect", "--in", out, "--validate", "--geometry", geometry) == 0
        assert len(read_dataset(out, GeometrySpec(energy_threshold=0.5))) == 4
        # default geometry hashes differently
        assert run("inspect", "--in", out) == 1

    def test_shower_params_change_the_events(self, tmp_path):
        """Test that a shower parameter file reaches the generator."""
        shower = tmp_path / "shower.ini"
        shower.write_text("hits_per_gev = 10.0\n")
        assert run("generate", "--n", 4, "--seed", 1, "--out", tmp_path / "a.calo") == 0
        assert run("generate", "--n", 4, "--seed", 1, "--shower-params", shower,
                   "--out", tmp_path / "b.calo") == 0
        assert (tmp_path / "a.calo").read_bytes() != (tmp_path / "b.calo").read_bytes()

    def test_geometry_file_overrides_config(self, tmp_path):
        """Test that --geometry keys win over --config while other keys survive."""
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[geometry]\nenergy_threshold = 0.4\nmax_points = 150\n")
        geometry = tmp_path / "geometry.ini"
        geometry.write_text("energy_threshold = 0.5\n")
        args = build_parser().parse_args(["--config", str(cfg), "inspect", "--in", "x",
                                          "--geometry", str(geometry)])
        g = effective_config(args).geometry
        assert g.energy_threshold == 0.5
        assert g.max_points == 150

    def test_bad_geometry_file(self, tmp_path):
        """Test that an invalid geometry file fails with exit code 1."""
        geometry = tmp_path / "geometry.ini"
        geometry.write_text("n_cells_per_axis = 54\n")
        assert run("generate", "--n", 1, "--seed", 1, "--geometry", geometry,
                   "--out", tmp_path / "x.calo") == 1
        assert not (tmp_path / "x.calo").exists()


class TestWorkers:
    """Test that event-parallel commands do not depend on the worker count."""

    def test_smear(self, workdir, tmp_path):
        """Test that smearing with two workers writes the same bytes as with one."""
        for n in (1, 2):
            assert run("smear", "--in", workdir / "train.calo", "--seed", 9, "--workers", n,
                       "--out", tmp_path / f"s{n}.calo") == 0
        assert (tmp_path / "s1.calo").read_bytes() == (tmp_path / "s2.calo").read_bytes()

    def test_voxelize(self, workdir, tmp_path):
        """Test that voxelizing with two workers writes the same bytes as with one."""
        for n in (1, 2):
            assert run("voxelize", "--in", workdir / "train.calo", "--workers", n,
                       "--out", tmp_path / f"v{n}.calo") == 0
        assert (tmp_path / "v1.calo").read_bytes() == (tmp_path / "v2.calo").read_bytes()
