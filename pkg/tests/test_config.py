import json

import pytest

from config import get_device, get_env, guard_output_dir, parse_weights, read_config_file, resolve_seed
from errors import ConfigurationError
from services.manifest import ExperimentManifest, write_manifest


class TestSettings:
    def test_defaults(self):
        assert get_env() == "dev"
        assert get_device() == "cpu"
        assert resolve_seed() == 0

    def test_flag_wins_over_environment(self, monkeypatch):
        monkeypatch.setenv("MELODYFLOW_SEED", "9")
        assert resolve_seed(4) == 4
        assert resolve_seed() == 9

    def test_blank_environment_value_is_unset(self, monkeypatch):
        monkeypatch.setenv("MELODYFLOW_SEED", "  ")
        assert resolve_seed() == 0

    def test_invalid_seed(self, monkeypatch):
        monkeypatch.setenv("MELODYFLOW_SEED", "seven")
        with pytest.raises(ConfigurationError):
            resolve_seed()


class TestOutputGuard:
    def test_dev_allows_non_empty(self, tmp_path):
        (tmp_path / "x").write_text("1")
        assert guard_output_dir(tmp_path) == tmp_path

    def test_prod_refuses_non_empty(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MELODYFLOW_ENV", "prod")
        (tmp_path / "x").write_text("1")
        with pytest.raises(ConfigurationError):
            guard_output_dir(tmp_path)
        assert guard_output_dir(tmp_path, force=True) == tmp_path

    def test_creates_missing(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MELODYFLOW_ENV", "prod")
        out = guard_output_dir(tmp_path / "a" / "b")
        assert out.is_dir()


class TestConfigFile:
    def test_keys_lower_cased_and_blanks_dropped(self, tmp_path):
        path = tmp_path / "c.env"
        path.write_text("# comment\nBATCH_SIZE=4\nPEAK_LR=\nSEED = 2\n")
        assert read_config_file(path) == {"batch_size": "4", "seed": "2"}

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_config_file(tmp_path / "nope.env")


class TestWeights:
    def test_parses_pairs(self):
        assert parse_weights("con=1, MEL=0") == {"con": 1.0, "mel": 0.0}

    @pytest.mark.parametrize("text", ["con", "con=x", "=1", "con=1,mel"])
    def test_malformed(self, text):
        with pytest.raises(ConfigurationError):
            parse_weights(text)


class TestManifest:
    def test_written_atomically_with_elapsed(self, tmp_path):
        manifest = ExperimentManifest("corpus generate", 3, {"n": 2}, outputs=["x"])
        path = write_manifest(tmp_path / "m.json", manifest.finish())
        payload = json.loads(path.read_text())
        assert payload["command"] == "corpus generate"
        assert payload["seed"] == 3
        assert payload["elapsed_s"] >= 0
        assert payload["build"]
        assert sorted(p.name for p in tmp_path.iterdir()) == ["m.json"]
