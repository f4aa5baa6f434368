"""Tests for stage training, training logs and checkpoints."""

import json

import numpy as np
import pytest
import torch

from app.models.configs import (
    DiffusionConfig,
    LossWeights,
    NetworkShape,
    TrainConfig,
)
from app.models.errors import CheckpointError, ConfigError, DivergenceError
from app.services.autodiff import finite_difference_check
from app.services.diffusion import (
    OracleDenoiser,
    RegressionDenoiser,
    make_schedule,
    q_sample,
    schedule_from_config,
)
from app.services.losses import total_loss
from app.services.synthetic import make_dataset
from app.services.trainer import (
    hand_stage_mask_source,
    inference_denoiser,
    load_checkpoint,
    loss_components,
    new_training_state,
    read_training_log,
    save_checkpoint,
    stage_data,
    synthesized_masks,
    train_stage,
)


def _train_config(**overrides):
    fields = {
        "epochs": 2,
        "batch_size": 4,
        "learning_rate": 1e-2,
        "network": NetworkShape(latent_dim=8, num_layers=1, num_heads=2),
        "diffusion": DiffusionConfig(num_steps=10),
    }
    fields.update(overrides)
    return TrainConfig(**fields)


def _assert_same_parameters(first, second):
    for a, b in zip(first.parameters(), second.parameters(), strict=True):
        torch.testing.assert_close(a, b, rtol=0.0, atol=1e-12)


@pytest.fixture
def train_set(small_split):
    return small_split.train


@pytest.fixture
def body_oracle(train_set):
    """Returns the true normalized reactor bodies of the training windows."""
    columns = list(train_set.skeleton.body_joint_indices)
    return OracleDenoiser(torch.as_tensor(train_set.reactor[:, :, columns]))


class TestStageData:
    """Test splitting windows into stage tensors."""

    def test_body_stage(self, train_set):
        """Body targets keep the body columns and the foot contacts."""
        data = stage_data(train_set, "body")
        assert data.target.shape == (8, 20, 11, 3)
        assert data.condition.shape == (8, 20, 11, 3)
        assert data.foot_columns == [2, 4]
        assert data.foot_contacts.shape == (8, 20, 2)
        assert data.mask_reactor is None

    def test_hand_stage(self, train_set):
        """Hand targets are wrist-relative hands with the stored masks."""
        data = stage_data(train_set, "hands")
        assert data.target.shape == (8, 20, 4, 3)
        assert data.foot_columns == []
        np.testing.assert_array_equal(data.mask_actor.numpy(), train_set.mask_actor)

    def test_mask_override(self, train_set):
        """Masks from elsewhere replace the stored ones."""
        zeros = np.zeros_like(train_set.mask_actor)
        data = stage_data(train_set, "hands", masks=(zeros, zeros))
        assert data.mask_reactor.abs().sum() == 0.0

    def test_joint_stage(self, train_set):
        """The joint stage stacks body and hand columns and anchors only the hands."""
        data = stage_data(train_set, "joint")
        assert data.target.shape == (8, 20, 15, 3)
        assert data.foot_columns == [2, 4]
        assert data.mask_reactor is None
        assert data.anchor_reactor[:, :, :11].abs().sum() == 0.0
        hands = stage_data(train_set, "hands")
        torch.testing.assert_close(data.anchor_reactor[:, :, 11:], hands.anchor_reactor)
        torch.testing.assert_close(data.target[:, :, 11:], hands.target)


class TestMaskPolicy:
    """Test where the hand-stage masks come from."""

    def test_ground_truth_default(self):
        """Ground-truth masks need no body model."""
        assert hand_stage_mask_source(_train_config(stage="hands")) == "ground_truth"

    def test_synthesized_needs_body(self):
        """Synthesized masks without a body model are a configuration error."""
        config = _train_config(stage="hands", mask_policy="synthesized")
        with pytest.raises(ConfigError):
            hand_stage_mask_source(config)

    def test_masks_from_true_bodies(self, train_set, body_oracle):
        """A body model returning the true reactor reproduces the stored masks."""
        mask_reactor, mask_actor = synthesized_masks(
            train_set, body_oracle, make_schedule(5, 2e-4, 2e-2), threshold=0.10
        )
        np.testing.assert_array_equal(mask_reactor, train_set.mask_reactor)
        np.testing.assert_array_equal(mask_actor, train_set.mask_actor)


class TestTrainStage:
    """Test the training loop."""

    def test_history_and_log(self, train_set, temp_dir):
        """One record per epoch goes to the history and the log file."""
        log_path = temp_dir / "body.log.jsonl"
        state = train_stage(train_set, _train_config(), log_path=log_path)
        assert state.epoch == 2
        assert state.step == 4
        assert state.model.fitted
        records = read_training_log(log_path)
        assert [r.epoch for r in records] == [0, 1]
        assert records == state.history
        assert all(np.isfinite(r.total) for r in records)
        assert records[0].foot_weight == 0.0

    def test_seeded(self, train_set):
        """The same seed gives identical weights."""
        first = train_stage(train_set, _train_config())
        second = train_stage(train_set, _train_config())
        _assert_same_parameters(first.model, second.model)

    def test_step_budget(self, train_set):
        """Training stops at max_steps."""
        state = train_stage(train_set, _train_config(epochs=10, max_steps=3))
        assert state.step == 3

    def test_step_budget_mid_epoch(self, train_set):
        """A budget hit inside an epoch leaves the epoch count and rate alone."""
        config = _train_config(epochs=10, max_steps=3, lr_step_size=1, lr_gamma=0.5)
        state = train_stage(train_set, config)
        assert state.epoch == 1
        assert state.optimizer.epoch == 1
        assert state.optimizer.learning_rate == pytest.approx(5e-3)
        assert [r.epoch for r in state.history] == [0, 1]

        finished = train_stage(train_set, config.model_copy(update={"max_steps": 4}))
        assert finished.epoch == 2
        assert finished.optimizer.learning_rate == pytest.approx(2.5e-3)

    def test_joint_stage(self, train_set):
        """Without the cascade one network learns body and hands together."""
        state = train_stage(train_set, _train_config(stage="joint"))
        assert state.stage == "joint"
        assert state.model.config.num_joints == 15
        assert all(np.isfinite(r.total) for r in state.history)

    def test_regression_objective(self, train_set):
        """A regression network ignores the noisy sample and the step."""
        state = train_stage(train_set, _train_config(objective="regression"))
        denoiser = inference_denoiser(state)
        assert isinstance(denoiser, RegressionDenoiser)
        data = stage_data(train_set, "body")
        condition = data.condition[:2]
        first = denoiser(torch.randn(2, 20, 11, 3), 3, condition)
        second = denoiser(torch.randn(2, 20, 11, 3), 9, condition)
        torch.testing.assert_close(first, second, rtol=0.0, atol=0.0)
        diffusion = train_stage(train_set, _train_config())
        assert not isinstance(inference_denoiser(diffusion), RegressionDenoiser)

    def test_hand_stage(self, train_set):
        """The hand stage trains on wrist-relative hands under masks."""
        state = train_stage(train_set, _train_config(stage="hands"))
        assert state.stage == "hands"
        assert state.model.config.num_joints == 4

    def test_synthesized_masks_policy(self, train_set, body_oracle):
        """The hand stage can train on masks from a synthesized body."""
        config = _train_config(stage="hands", mask_policy="synthesized", epochs=1)
        state = train_stage(train_set, config, body_denoiser=body_oracle)
        assert state.config.mask_policy == "synthesized"

    def test_empty_dataset(self, synth_config):
        """There must be at least one window."""
        empty = make_dataset(synth_config.model_copy(update={"max_pair_distance": 0.5}))
        with pytest.raises(ConfigError):
            train_stage(empty.train, _train_config())

    def test_divergence_saves_last_state(self, train_set, temp_dir, monkeypatch):
        """A non-finite loss stops training after writing a checkpoint."""
        monkeypatch.setattr(
            "app.services.trainer.total_loss",
            lambda components, weights, epoch: torch.tensor(float("nan")),
        )
        path = temp_dir / "body.ckpt.json"
        with pytest.raises(DivergenceError):
            train_stage(train_set, _train_config(), checkpoint_path=path)
        assert load_checkpoint(path, "body").step == 0

    @pytest.mark.integration
    def test_loss_decreases(self, train_set):
        """About a hundred steps lower the training loss."""
        state = train_stage(train_set, _train_config(epochs=50))
        totals = [r.total for r in state.history]
        assert np.mean(totals[-5:]) < np.mean(totals[:5])


class TestCheckpoints:
    """Test saving, loading and resuming."""

    def test_round_trip_bytes(self, train_set, temp_dir):
        """Save, load and save again gives identical files."""
        state = train_stage(train_set, _train_config())
        first = save_checkpoint(state, temp_dir / "first.json")
        second = save_checkpoint(load_checkpoint(first), temp_dir / "second.json")
        assert first.read_bytes() == second.read_bytes()

    def test_loaded_state(self, train_set, temp_dir):
        """The loaded model matches and is marked trained."""
        state = train_stage(
            train_set, _train_config(), checkpoint_path=temp_dir / "body.ckpt.json"
        )
        loaded = load_checkpoint(temp_dir / "body.ckpt.json", "body")
        _assert_same_parameters(state.model, loaded.model)
        assert loaded.model.fitted
        assert loaded.epoch == 2
        assert loaded.optimizer.learning_rate == state.optimizer.learning_rate

    def test_resume_matches_straight_run(self, train_set, temp_dir):
        """Two epochs, a reload and two more equal four epochs in one go."""
        straight = train_stage(train_set, _train_config(epochs=4))
        path = temp_dir / "body.ckpt.json"
        train_stage(train_set, _train_config(epochs=2), checkpoint_path=path)
        resumed = train_stage(
            train_set, _train_config(epochs=4), state=load_checkpoint(path)
        )
        assert resumed.step == straight.step
        _assert_same_parameters(straight.model, resumed.model)

    def test_wrong_stage(self, train_set, temp_dir):
        """A body checkpoint cannot be loaded as the hand stage."""
        path = temp_dir / "body.ckpt.json"
        train_stage(train_set, _train_config(epochs=1), checkpoint_path=path)
        with pytest.raises(CheckpointError, match="body"):
            load_checkpoint(path, "hands")

    def test_resume_across_stages(self, train_set, temp_dir):
        """A body state cannot continue as a hand run."""
        path = temp_dir / "body.ckpt.json"
        train_stage(train_set, _train_config(epochs=1), checkpoint_path=path)
        with pytest.raises(CheckpointError):
            train_stage(
                train_set, _train_config(stage="hands"), state=load_checkpoint(path)
            )

    def test_wrong_version(self, train_set, temp_dir):
        """Checkpoints of another format version are refused."""
        path = temp_dir / "body.ckpt.json"
        train_stage(train_set, _train_config(epochs=1), checkpoint_path=path)
        document = json.loads(path.read_text(encoding="utf-8"))
        document["version"] = 99
        path.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_corrupted(self, train_set, temp_dir):
        """Truncated or foreign files are refused."""
        path = temp_dir / "body.ckpt.json"
        train_stage(train_set, _train_config(epochs=1), checkpoint_path=path)
        text = path.read_text(encoding="utf-8")
        path.write_text(text[: len(text) // 2], encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
        path.write_text(json.dumps({"weights": []}), encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_mask_policy_recorded(self, train_set, body_oracle, temp_dir):
        """The hand-stage mask policy survives a checkpoint."""
        path = temp_dir / "hands.ckpt.json"
        config = _train_config(stage="hands", mask_policy="synthesized", epochs=1)
        train_stage(train_set, config, body_denoiser=body_oracle, checkpoint_path=path)
        document = json.loads(path.read_text(encoding="utf-8"))
        assert document["mask_policy"] == "synthesized"
        assert load_checkpoint(path, "hands").config.mask_policy == "synthesized"

    def test_missing_file(self, temp_dir):
        """A missing checkpoint is a checkpoint error."""
        with pytest.raises(CheckpointError):
            load_checkpoint(temp_dir / "absent.json")


class TestObjectiveGradients:
    """Test the full objective against central differences."""

    def test_body_objective(self, train_set):
        """Reverse-mode gradients of the body loss match central differences."""
        config = _train_config(
            network=NetworkShape(latent_dim=4, num_layers=1, num_heads=2)
        )
        model = new_training_state(train_set, config).model
        model.eval()
        data = stage_data(train_set, "body")
        schedule = schedule_from_config(config.diffusion)
        generator = torch.Generator().manual_seed(0)
        index = torch.tensor([0, 3])
        t = torch.tensor([2, 8])
        noise = torch.randn(data.target[index].shape, generator=generator)
        x_t = q_sample(data.target[index], t, noise, schedule)
        weights = LossWeights(foot_loss_start_epoch=0)

        def objective():
            prediction = model(x_t, t, data.condition[index])
            components = loss_components(data, index, prediction)
            return total_loss(components, weights, epoch=0)

        error = finite_difference_check(
            objective, list(model.parameters()), max_entries=2, generator=generator
        )
        assert error <= 1e-4

    def test_objective_in_train_mode(self, train_set):
        """Gradients through batch statistics match central differences."""
        config = _train_config(
            network=NetworkShape(latent_dim=4, num_layers=1, num_heads=2)
        )
        model = new_training_state(train_set, config).model
        model.train()
        data = stage_data(train_set, "body")
        schedule = schedule_from_config(config.diffusion)
        generator = torch.Generator().manual_seed(1)
        index = torch.tensor([0, 2, 5, 7])
        t = torch.tensor([1, 4, 8, 10])
        noise = torch.randn(data.target[index].shape, generator=generator)
        x_t = q_sample(data.target[index], t, noise, schedule)
        weights = LossWeights(foot_loss_start_epoch=0)

        def objective():
            prediction = model(x_t, t, data.condition[index])
            components = loss_components(data, index, prediction)
            return total_loss(components, weights, epoch=0)

        error = finite_difference_check(
            objective, list(model.parameters()), max_entries=6, generator=generator
        )
        assert error <= 1e-4
