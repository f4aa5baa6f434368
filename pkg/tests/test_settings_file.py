"""Tests for key=value settings files and command-line overrides."""

from pathlib import Path

import pytest

from app.models.errors import ConfigError
from app.utils.settings_file import (
    build_settings,
    load_settings,
    nest,
    parse_line,
    parse_overrides,
    parse_settings,
    read_settings,
)


class TestParseLine:
    """Test single lines."""

    @pytest.mark.parametrize("line", ["", "   ", "# a comment", "  # indented"])
    def test_skipped_lines(self, line):
        """Blank and comment lines give nothing."""
        assert parse_line(line, "here") is None

    def test_plain_value(self):
        """Values stay strings with whitespace and trailing comments stripped."""
        assert parse_line(" train.epochs = 40  # short run", "here") == (
            "train.epochs",
            "40",
        )

    @pytest.mark.parametrize("raw", ["none", "None", "null"])
    def test_none_values(self, raw):
        """none and null clear a value."""
        assert parse_line(f"data_dir={raw}", "here") == ("data_dir", None)

    def test_json_list(self):
        """Lists are read as JSON."""
        assert parse_line("guidance.arm_joints.left=[4, 5, 6]", "here") == (
            "guidance.arm_joints.left",
            [4, 5, 6],
        )

    def test_bad_json(self):
        """A malformed list names its location."""
        with pytest.raises(ConfigError, match="here"):
            parse_line("guidance.arm_joints.left=[4, 5", "here")

    @pytest.mark.parametrize("line", ["epochs", "=3"])
    def test_missing_key_or_separator(self, line):
        """A line needs a key and an equals sign."""
        with pytest.raises(ConfigError, match="key=value"):
            parse_line(line, "here")


class TestParseSettings:
    """Test whole files and override lists."""

    def test_later_lines_win(self):
        """A repeated key keeps its last value."""
        text = "seed=1\n# comment\n\nseed=2\nstage=hands\n"
        assert parse_settings(text) == {"seed": "2", "stage": "hands"}

    def test_error_names_line(self):
        """Errors point at the offending line."""
        with pytest.raises(ConfigError, match="line 2"):
            parse_settings("seed=1\nbroken\n", "run.cfg")

    def test_read_settings(self, temp_dir):
        """Files are read as UTF-8 text."""
        path = temp_dir / "run.cfg"
        path.write_text("train.epochs=3\n", encoding="utf-8")
        assert read_settings(path) == {"train.epochs": "3"}

    def test_missing_file(self, temp_dir):
        """An unreadable file is a configuration error."""
        with pytest.raises(ConfigError, match="cannot read"):
            read_settings(temp_dir / "absent.cfg")

    def test_overrides(self):
        """Command-line items parse like file lines."""
        assert parse_overrides(["seed=3", "deterministic=true"]) == {
            "seed": "3",
            "deterministic": "true",
        }


class TestNest:
    """Test dotted keys turning into sections."""

    def test_sections(self):
        """Dots open nested dictionaries."""
        assert nest({"train.epochs": "3", "train.loss.recon": "1", "seed": "0"}) == {
            "train": {"epochs": "3", "loss": {"recon": "1"}},
            "seed": "0",
        }

    def test_value_then_section(self):
        """A plain value cannot also be a section."""
        with pytest.raises(ConfigError, match="conflicts"):
            nest({"train": "3", "train.epochs": "4"})

    def test_section_then_value(self):
        """A value cannot replace a section."""
        with pytest.raises(ConfigError, match="replace"):
            nest({"train.epochs": "4", "train": "3"})


class TestBuildSettings:
    """Test validation into the settings model."""

    def test_defaults(self):
        """No input gives the defaults."""
        settings = build_settings()
        assert settings.stage == "body"
        assert settings.train.epochs == 40

    def test_coercion(self):
        """String values become typed fields."""
        settings = build_settings(
            {"train.epochs": "3", "deterministic": "true", "data_dir": "data"}
        )
        assert settings.train.epochs == 3
        assert settings.deterministic is True
        assert settings.data_dir == Path("data")

    def test_overrides_win(self):
        """Command-line values replace file values."""
        settings = build_settings({"train.epochs": "3"}, {"train.epochs": "5"})
        assert settings.train.epochs == 5

    def test_seed_everywhere(self):
        """A seed reaches every seeded section."""
        settings = build_settings({"seed": "1"}, seed=9)
        assert settings.seed == 9
        assert settings.synth.seed == 9
        assert settings.train.seed == 9
        assert settings.eval.seed == 9

    def test_arm_joint_lists(self):
        """JSON lists fill the guidance arm chains."""
        settings = build_settings(
            parse_settings(
                "guidance.arm_joints.left=[5, 6, 7]\n"
                "guidance.arm_joints.right=[8, 9, 10]\n"
            )
        )
        assert settings.guidance.arm_joints == {"left": (5, 6, 7), "right": (8, 9, 10)}

    def test_invalid_value(self):
        """Validation problems name the field."""
        with pytest.raises(ConfigError, match="invalid settings: train.epochs"):
            build_settings({"train.epochs": "0"})

    def test_unknown_key(self):
        """Misspelt keys are refused."""
        with pytest.raises(ConfigError, match="invalid settings"):
            build_settings({"train.epoch": "3"})


class TestLoadSettings:
    """Test the file-plus-overrides entry point."""

    def test_file_and_overrides(self, temp_dir):
        """Overrides are applied on top of the file."""
        path = temp_dir / "run.cfg"
        path.write_text("stage=hands\ntrain.batch_size=4\n", encoding="utf-8")
        settings = load_settings(path, ["train.batch_size=2"], seed=4)
        assert settings.stage == "hands"
        assert settings.train.batch_size == 2
        assert settings.train_config().stage == "hands"
        assert settings.train_config().seed == 4

    def test_without_file(self):
        """Overrides alone are enough."""
        assert load_settings(None, ["mask_threshold=0.2"]).mask_threshold == 0.2
