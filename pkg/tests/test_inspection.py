"""Tests for the CSV dumps behind the inspect command."""

import numpy as np
import pytest

from app.models.configs import DenoiserConfig, NetworkShape
from app.services.denoiser import Denoiser
from app.services.diffusion import make_schedule
from app.services.inspection import (
    loss_curve_records,
    mask_records,
    parameter_records,
    read_csv,
    schedule_records,
    trajectory_records,
    write_csv,
)
from app.services.motion_core import compute_hand_masks
from app.services.trainer import TrainRecord


class TestCsvFiles:
    """Test writing and reading record tables."""

    def test_header_and_rows(self, temp_dir):
        """Records come back as strings under their header."""
        records = [{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]
        path = write_csv(records, temp_dir / "nested" / "table.csv")
        assert path.read_text(encoding="utf-8").splitlines()[0] == "a,b"
        assert read_csv(path) == [{"a": "1", "b": "x"}, {"a": "2", "b": "y"}]

    def test_empty(self, temp_dir):
        """There is no header without a first record."""
        with pytest.raises(ValueError, match="nothing to write"):
            write_csv([], temp_dir / "empty.csv")


class TestScheduleRecords:
    """Test the schedule dump."""

    def test_rows(self, temp_dir):
        """T + 1 rows whose floats read back exactly."""
        schedule = make_schedule(10, 1e-4, 2e-2)
        rows = read_csv(write_csv(schedule_records(schedule), temp_dir / "s.csv"))
        assert len(rows) == 11
        assert rows[0]["t"] == "0"
        assert float(rows[0]["alpha_bar"]) == 1.0
        assert float(rows[10]["beta"]) == schedule.betas[10]
        assert float(rows[5]["alpha_bar"]) == schedule.alpha_bars[5]


class TestMotionRecords:
    """Test the per-frame dumps of a pair."""

    def test_mask_records(self, small_pair):
        """One row per frame with the OR of each hand group."""
        rows = mask_records(small_pair, 0.10)
        assert len(rows) == small_pair.num_frames
        assert list(rows[0]) == [
            "frame",
            "actor_left",
            "actor_right",
            "reactor_left",
            "reactor_right",
        ]
        actor, reactor = compute_hand_masks(small_pair, 0.10).side_activity()
        np.testing.assert_array_equal(
            [[r["actor_left"], r["actor_right"]] for r in rows], actor
        )
        np.testing.assert_array_equal(
            [[r["reactor_left"], r["reactor_right"]] for r in rows], reactor
        )

    def test_trajectory_records(self, small_pair):
        """One row per frame and joint with exact coordinates."""
        reactor = small_pair.reactor
        rows = trajectory_records(reactor)
        assert len(rows) == reactor.num_frames * reactor.skeleton.num_joints
        row = rows[reactor.skeleton.num_joints + 2]
        assert (row["frame"], row["joint"]) == (1, 2)
        assert row["name"] == reactor.skeleton.joint_names[2]
        assert float(row["z"]) == reactor.positions[1, 2, 2]


class TestModelRecords:
    """Test the training and model dumps."""

    def test_loss_curve(self):
        """Each record becomes one row with every logged field."""
        record = TrainRecord(
            epoch=0,
            step=2,
            lr=1e-3,
            total=3.0,
            foot_weight=0.0,
            recon=1.0,
            reaction=0.5,
            velocity=0.5,
            acceleration=0.5,
            bone=0.5,
            foot=0.0,
        )
        rows = loss_curve_records([record, record.model_copy(update={"epoch": 1})])
        assert [r["epoch"] for r in rows] == [0, 1]
        assert rows[0]["total"] == 3.0
        assert set(rows[0]) == set(TrainRecord.model_fields)

    def test_parameter_records(self, skeleton):
        """Both stages report the size of a freshly built network."""
        shape = NetworkShape(latent_dim=8, num_layers=1, num_heads=2)
        rows = parameter_records(shape, skeleton, window_length=6, num_steps=10)
        assert [(r["stage"], r["joints"]) for r in rows] == [("body", 11), ("hands", 4)]
        config = DenoiserConfig.for_stage(
            shape,
            stage="hands",
            num_body_joints=11,
            num_hand_joints=4,
            window_length=6,
        )
        assert rows[1]["parameters"] == Denoiser(config, 10).num_parameters
        assert rows[0]["parameters"] > 0

    def test_joint_stage_records(self, skeleton):
        """Without the cascade one joint stage covers body and hands."""
        shape = NetworkShape(latent_dim=8, num_layers=1, num_heads=2)
        rows = parameter_records(
            shape, skeleton, window_length=6, num_steps=10, cascade=False
        )
        assert [(r["stage"], r["joints"]) for r in rows] == [("joint", 15)]
