"""
Tests for loading and saving configuration files.
"""

import pytest

from calo_diffsim.config import SECTIONS, ToolConfig, load_config, render_config, save_config
from calo_diffsim.errors import ConfigError


class TestLoadConfig:
    """Test reading configuration files."""

    def test_no_file_gives_defaults(self):
        """Test that no path means the embedded defaults."""
        cfg = load_config(None)
        assert cfg == ToolConfig()
        assert cfg.sampling.n_steps == 512
        assert cfg.geometry.n_cells_per_axis == 55

    def test_empty_file_gives_defaults(self, tmp_path):
        """Test that an empty file is a valid configuration."""
        path = tmp_path / "empty.ini"
        path.write_text("")
        assert load_config(path) == ToolConfig()

    def test_overrides_merge_over_defaults(self, tmp_path):
        """Test that keys in a section replace only themselves."""
        path = tmp_path / "cfg.ini"
        path.write_text(
            "[train]\n"
            "steps = 10\n"
            "learning_rate = 5e-4\n"
            "grid_channels = 4, 8\n"
            "\n"
            "[evaluation]\n"
            "map_layers = 1, 2\n"
        )
        cfg = load_config(path)
        assert cfg.train.steps == 10
        assert cfg.train.learning_rate == 5e-4
        assert cfg.train.grid_channels == (4, 8)
        assert cfg.train.batch_size == ToolConfig().train.batch_size
        assert cfg.evaluation.map_layers == (1, 2)

    def test_missing_file(self, tmp_path):
        """Test that a named but missing file is an error."""
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.ini")

    def test_unknown_section(self, tmp_path):
        """Test that misspelled sections are refused."""
        path = tmp_path / "cfg.ini"
        path.write_text("[trian]\nsteps = 3\n")
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(path)

    def test_unknown_key(self, tmp_path):
        """Test that misspelled keys are refused."""
        path = tmp_path / "cfg.ini"
        path.write_text("[train]\nstpes = 3\n")
        with pytest.raises(ConfigError, match="stpes"):
            load_config(path)

    @pytest.mark.parametrize("text", [
        "[train]\nsteps = many\n",
        "[geometry]\nn_cells_per_axis = 54\n",
        "[train]\ntime_embedding_dim = 5\n",
        "[classifier]\ntrain_fraction = 0.9\nval_fraction = 0.2\n",
    ])
    def test_invalid_values(self, tmp_path, text):
        """Test that values failing validation are reported as config errors."""
        path = tmp_path / "cfg.ini"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_malformed_file(self, tmp_path):
        """Test that text outside any section is refused."""
        path = tmp_path / "cfg.ini"
        path.write_text("steps = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestSaveConfig:
    """Test writing configuration files."""

    def test_render_lists_every_section(self):
        """Test that rendering writes every section header."""
        text = render_config(ToolConfig())
        for name in SECTIONS:
            assert f"[{name}]" in text

    def test_save_then_load(self, tmp_path):
        """Test that a saved configuration loads back unchanged."""
        cfg = ToolConfig(train=ToolConfig().train.model_copy(update={"steps": 7}))
        path = save_config(cfg, tmp_path / "out" / "cfg.ini")
        assert load_config(path) == cfg


class TestConfigHashes:
    """Test per-section hashes recorded in manifests."""

    def test_hash_changes_with_section(self):
        """Test that only the changed section changes its hash."""
        base = ToolConfig().config_hashes()
        changed = ToolConfig(sampling={"n_steps": 64}).config_hashes()
        assert set(base) == set(SECTIONS)
        assert base["sampling"] != changed["sampling"]
        assert base["train"] == changed["train"]
