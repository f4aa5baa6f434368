"""End-to-end tests of the remos command line."""

import json

import numpy as np
import pytest

from app.main import build_parser, cli_dispatch
from app.models.editing import EditConstraint
from app.services.motion_io import load_motion, save_edit_constraint, save_motion

TINY = [
    "synth.num_pairs=2",
    "denoiser.latent_dim=8",
    "denoiser.num_layers=1",
    "diffusion.num_steps=5",
    "train.epochs=1",
    "train.batch_size=8",
]


def _last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated dataset with one trained epoch of each stage."""
    root = tmp_path_factory.mktemp("cli")
    common = ["--out", str(root / "out"), f"data_dir={root / 'data'}", *TINY]
    assert cli_dispatch(["gen-data", *common]) == 0
    assert cli_dispatch(["train", *common, "stage=body"]) == 0
    assert cli_dispatch(["train", *common, "stage=hands"]) == 0
    return root, common


class TestParser:
    """Test argument parsing."""

    def test_overrides_and_flags(self):
        """Options, overrides and inspect flags are collected."""
        args = build_parser().parse_args(
            ["inspect", "--schedule", "--loss-curve", "--seed", "3", "stage=hands"]
        )
        assert args.subcommand == "inspect"
        assert args.schedule and args.loss_curve and not args.masks
        assert args.seed == 3
        assert args.overrides == ["stage=hands"]

    def test_unknown_subcommand(self):
        """argparse failures exit with code 2."""
        assert cli_dispatch(["fly"]) == 2


@pytest.mark.integration
class TestCommands:
    """Test the subcommands on a generated dataset."""

    def test_training_outputs(self, workspace):
        """Training writes a checkpoint and a log per stage."""
        root, _ = workspace
        checkpoints = root / "out" / "checkpoints"
        for stage in ("body", "hands"):
            assert (checkpoints / f"{stage}.ckpt.json").is_file()
            assert (checkpoints / f"{stage}.log.jsonl").is_file()

    def test_sample(self, workspace, capsys):
        """sample writes a reactor with the actor's frames and skeleton."""
        root, common = workspace
        actor_path = root / "data" / "pairs" / "pair_0000_actor.json"
        assert cli_dispatch(["sample", *common, f"actor={actor_path}"]) == 0
        out_path = root / "out" / "reactor.json"
        assert str(out_path) in capsys.readouterr().out
        actor = load_motion(actor_path)
        reactor = load_motion(out_path, actor.skeleton)
        assert reactor.positions.shape == actor.positions.shape
        assert np.all(np.isfinite(reactor.positions))

    def test_edit_full_coverage(self, workspace):
        """Controlling every joint reproduces the reference motion."""
        root, common = workspace
        actor_path = root / "data" / "pairs" / "pair_0000_actor.json"
        reference = load_motion(root / "data" / "pairs" / "pair_0000_reactor.json")
        constraint = EditConstraint(
            kind="pose_completion",
            reference=reference.positions,
            joint_indices=tuple(range(reference.skeleton.num_joints)),
        )
        constraint_path = save_edit_constraint(constraint, root / "constraint.json")
        code = cli_dispatch(
            [
                "edit",
                *common,
                f"actor={actor_path}",
                f"constraint={constraint_path}",
                "deterministic=true",
            ]
        )
        assert code == 0
        edited = load_motion(root / "out" / "edited.json", reference.skeleton)
        np.testing.assert_allclose(edited.positions, reference.positions, atol=1e-6)

    def test_eval_against_itself(self, workspace):
        """A motion compared with itself has zero error."""
        root, common = workspace
        reactor = root / "data" / "pairs" / "pair_0001_reactor.json"
        args = ["eval", *common, f"reference={reactor}", f"generated={reactor}"]
        assert cli_dispatch(args) == 0
        report = json.loads((root / "out" / "metrics.json").read_text(encoding="utf-8"))
        assert report["mpjpe_all"] == 0.0

    def test_eval_checkpoints(self, workspace):
        """Checkpoints are scored on the test split."""
        root, common = workspace
        assert cli_dispatch(["eval", *common, "eval.repeats=2"]) == 0
        report = json.loads((root / "out" / "metrics.json").read_text(encoding="utf-8"))
        assert report["num_windows"] == 2
        assert report["repeats"] == 2

    def test_inspect_schedule_and_curve(self, workspace):
        """inspect writes the requested dumps."""
        root, common = workspace
        code = cli_dispatch(["inspect", "--schedule", "--loss-curve", *common])
        assert code == 0
        assert (root / "out" / "schedule.csv").is_file()
        assert (root / "out" / "loss_curve.csv").is_file()

    def test_single_stage_regression(self, workspace):
        """The joint stage trained by regression is scored under its own labels."""
        root, common = workspace
        ablation = [*common, "cascade=false", "train.objective=regression"]
        assert cli_dispatch(["train", *ablation]) == 0
        assert (root / "out" / "checkpoints" / "joint.ckpt.json").is_file()
        assert cli_dispatch(["eval", *ablation, "eval.repeats=2"]) == 0
        report = json.loads((root / "out" / "metrics.json").read_text(encoding="utf-8"))
        assert report["cascade"] is False
        assert report["objective"] == "regression"
        assert report["num_windows"] == 2


class TestExitCodes:
    """Test error reporting."""

    def test_configuration_error(self, temp_dir, capsys):
        """A missing required setting exits with 3 and a JSON message."""
        assert cli_dispatch(["sample", "--out", str(temp_dir)]) == 3
        error = _last_error(capsys)
        assert error["error"] == "ConfigError"
        assert error["node"] == "SampleNode"

    def test_invalid_override(self, temp_dir, capsys):
        """Invalid values are configuration errors."""
        assert cli_dispatch(["inspect", "--out", str(temp_dir), "train.epochs=0"]) == 3
        assert "train.epochs" in _last_error(capsys)["message"]

    def test_missing_checkpoint(self, temp_dir, small_pair):
        """Sampling without checkpoints is a checkpoint error."""
        actor = save_motion(small_pair.actor, temp_dir / "actor.json")
        code = cli_dispatch(["sample", "--out", str(temp_dir), f"actor={actor}"])
        assert code == 5

    def test_missing_config_file(self, temp_dir):
        """A --config path that does not exist is rejected."""
        code = cli_dispatch(["train", "--config", str(temp_dir / "absent.cfg")])
        assert code == 3
