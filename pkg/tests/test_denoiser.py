"""Tests for the attention operators and the stage denoisers."""

import pytest
import torch

from app.models.configs import DenoiserConfig
from app.models.errors import ConfigError, ScheduleError, ShapeMismatchError
from app.services.autodiff import finite_difference_check
from app.services.denoiser import (
    body_denoise,
    build_denoiser,
    cost_xa,
    count_parameters,
    factorized_xa,
    h_xa,
    hand_denoise,
    timestep_embedding,
)


def _config(stage="body", **overrides):
    fields = {
        "latent_dim": 8,
        "num_layers": 1,
        "num_heads": 2,
        "num_body_joints": 11,
        "num_hand_joints": 4,
        "window_length": 6,
        "stage": stage,
    }
    fields.update(overrides)
    return DenoiserConfig(**fields)


@pytest.fixture
def body_model():
    return build_denoiser(_config(), num_steps=10, seed=0)


@pytest.fixture
def hand_model():
    return build_denoiser(_config("hands"), num_steps=10, seed=0)


class TestTimestepEmbedding:
    """Test the diffusion step encoding."""

    def test_shapes(self):
        """Scalars give a vector, batches give a matrix."""
        assert timestep_embedding(3, 8).shape == (8,)
        assert timestep_embedding(torch.tensor([0, 1, 2]), 8).shape == (3, 8)

    def test_step_zero(self):
        """At step 0 every sine is 0 and every cosine is 1."""
        embedding = timestep_embedding(0, 6)
        assert embedding.tolist() == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]

    def test_odd_dimension(self):
        """Odd sizes are padded with a zero channel."""
        assert timestep_embedding(5, 7)[-1] == 0.0

    def test_rejects_real_steps(self):
        """Steps must be integers."""
        with pytest.raises(ScheduleError):
            timestep_embedding(torch.tensor(1.5), 8)

    def test_rejects_out_of_range(self):
        """Steps beyond the schedule length are refused."""
        with pytest.raises(ScheduleError):
            timestep_embedding(11, 8, num_steps=10)
        with pytest.raises(ScheduleError):
            timestep_embedding(-1, 8)


class TestCrossAttention:
    """Test the combined, hand-aware and factorized attention operators."""

    def test_combined_attention_shape(self):
        """44 tokens give a 44 x 44 attention whose rows sum to one."""
        generator = torch.Generator().manual_seed(0)
        q, k, v = (torch.randn(44, 8, generator=generator) for _ in range(3))
        out, attention = cost_xa(q, k, v, return_attention=True)
        assert out.shape == (44, 8)
        assert attention.shape == (1, 44, 44)
        torch.testing.assert_close(attention.sum(dim=-1), torch.ones(1, 44))

    def test_heads(self):
        """Each head gets its own attention matrix."""
        q = torch.randn(2, 12, 8)
        _, attention = cost_xa(q, q, q, num_heads=4, return_attention=True)
        assert attention.shape == (2, 4, 12, 12)

    def test_heads_must_divide_features(self):
        """Feature size must split across heads."""
        q = torch.randn(12, 9)
        with pytest.raises(ValueError, match="divisible"):
            cost_xa(q, q, q, num_heads=2)

    def test_mismatched_keys(self):
        """Queries, keys and values share one shape."""
        with pytest.raises(ShapeMismatchError):
            cost_xa(torch.randn(4, 8), torch.randn(5, 8), torch.randn(5, 8))

    def test_masked_actor_gives_uniform_attention(self):
        """With no interacting actor hand every key is zero: attention is uniform."""
        generator = torch.Generator().manual_seed(1)
        q, k, v = (torch.randn(44, 8, generator=generator) for _ in range(3))
        ones = torch.ones(11, 4)
        out, attention = h_xa(q, k, v, ones, torch.zeros(11, 4), return_attention=True)
        torch.testing.assert_close(attention, torch.full((1, 44, 44), 1.0 / 44))
        torch.testing.assert_close(out, v.mean(dim=0).expand(44, 8))

    def test_masked_reactor_gives_uniform_attention(self):
        """Zeroed queries attend uniformly as well."""
        q, k, v = (torch.randn(12, 4) for _ in range(3))
        _, attention = h_xa(
            q, k, v, torch.zeros(3, 4), torch.ones(3, 4), return_attention=True
        )
        torch.testing.assert_close(attention, torch.full((1, 12, 12), 1.0 / 12))

    def test_full_masks_equal_combined(self):
        """All-interacting masks reduce to plain cross-attention."""
        q, k, v = (torch.randn(12, 4) for _ in range(3))
        ones = torch.ones(3, 4)
        torch.testing.assert_close(h_xa(q, k, v, ones, ones), cost_xa(q, k, v))

    def test_factorized_shape(self):
        """Spatial then temporal attention keeps the token layout."""
        q, k, v = (torch.randn(2, 5 * 3, 8) for _ in range(3))
        assert factorized_xa(q, k, v, num_frames=5, num_heads=2).shape == (2, 15, 8)

    def test_factorized_single_joint_is_temporal(self):
        """With one joint per frame the spatial pass returns the values unchanged."""
        q, k, v = (torch.randn(1, 4, 6) for _ in range(3))
        expected = cost_xa(v, k, v)
        torch.testing.assert_close(factorized_xa(q, k, v, num_frames=4), expected)


class TestDenoiser:
    """Test the stage networks."""

    def test_body_output_shape(self, body_model):
        """Predictions have the shape of the noisy input."""
        x_t = torch.randn(3, 6, 11, 3)
        out = body_model(x_t, torch.tensor([1, 5, 10]), torch.randn(3, 6, 11, 3))
        assert out.shape == (3, 6, 11, 3)

    def test_unbatched_input(self, body_model):
        """A single (N, J, 3) motion is accepted."""
        body_model.eval()
        out = body_denoise(body_model, torch.randn(6, 11, 3), 4, torch.randn(6, 11, 3))
        assert out.shape == (6, 11, 3)

    def test_shorter_window(self, body_model):
        """Windows shorter than the configured length are accepted."""
        out = body_model(torch.randn(2, 4, 11, 3), 2, torch.randn(2, 4, 11, 3))
        assert out.shape == (2, 4, 11, 3)

    def test_wrong_joint_count(self, body_model):
        """The body network refuses hand-sized motions."""
        with pytest.raises(ShapeMismatchError):
            body_model(torch.randn(2, 6, 4, 3), 1, torch.randn(2, 6, 4, 3))

    def test_condition_shape(self, body_model):
        """The actor condition must match the noisy motion."""
        with pytest.raises(ShapeMismatchError):
            body_model(torch.randn(2, 6, 11, 3), 1, torch.randn(2, 5, 11, 3))

    def test_hand_stage_needs_masks(self, hand_model):
        """Hand denoising without masks is refused."""
        with pytest.raises(ShapeMismatchError):
            hand_model(torch.randn(2, 6, 4, 3), 1, torch.randn(2, 6, 4, 3))

    def test_hand_denoise(self, hand_model):
        """The hand stage predicts wrist-relative hands under masks."""
        masks = torch.ones(2, 6, 4)
        out = hand_denoise(
            hand_model,
            torch.randn(2, 6, 4, 3),
            3,
            torch.randn(2, 6, 4, 3),
            masks,
            masks,
        )
        assert out.shape == (2, 6, 4, 3)

    def test_wrong_stage(self, body_model, hand_model):
        """Each stage entry point checks its network."""
        with pytest.raises(ConfigError):
            body_denoise(hand_model, torch.randn(6, 4, 3), 1, torch.randn(6, 4, 3))
        masks = torch.ones(6, 11)
        with pytest.raises(ConfigError):
            hand_denoise(
                body_model,
                torch.randn(6, 11, 3),
                1,
                torch.randn(6, 11, 3),
                masks,
                masks,
            )

    def test_step_out_of_range(self, body_model):
        """Steps past the schedule length are refused."""
        with pytest.raises(ScheduleError):
            body_model(torch.randn(1, 6, 11, 3), 11, torch.randn(1, 6, 11, 3))

    def test_seeded_construction(self):
        """The same seed gives identical initial weights."""
        first = build_denoiser(_config(), num_steps=10, seed=3)
        second = build_denoiser(_config(), num_steps=10, seed=3)
        other = build_denoiser(_config(), num_steps=10, seed=4)
        for a, b in zip(first.parameters(), second.parameters(), strict=True):
            assert torch.equal(a, b)
        assert not torch.equal(first.joint_embedding, other.joint_embedding)

    def test_parameter_count(self, body_model):
        """Every parameter is trainable and counted."""
        expected = sum(p.numel() for p in body_model.parameters())
        assert count_parameters(body_model) == expected == body_model.num_parameters

    def test_factorized_attention_mode(self):
        """The factorized variant runs end to end."""
        model = build_denoiser(_config(attention="factorized"), num_steps=10)
        out = model(torch.randn(2, 6, 11, 3), 1, torch.randn(2, 6, 11, 3))
        assert out.shape == (2, 6, 11, 3)

    def test_joint_stage(self):
        """The joint stage takes body and hand columns without masks."""
        model = build_denoiser(_config("joint"), num_steps=10)
        assert model.config.num_joints == 15
        out = model(torch.randn(2, 6, 15, 3), 4, torch.randn(2, 6, 15, 3))
        assert out.shape == (2, 6, 15, 3)

    def test_head_normalizes_batch_features(self, body_model):
        """In training mode the head's batch norm whitens every feature."""
        captured = {}
        norm = body_model.head[2]
        norm.register_forward_hook(
            lambda module, inputs, output: captured.update(features=output)
        )
        body_model.train()
        generator = torch.Generator().manual_seed(1)
        body_model(
            torch.randn(4, 6, 11, 3, generator=generator),
            torch.tensor([1, 3, 6, 10]),
            torch.randn(4, 6, 11, 3, generator=generator),
        )
        features = captured["features"].detach()
        assert features.shape == (4 * 6 * 11, 8)
        mean = features.mean(dim=0)
        variance = features.var(dim=0, unbiased=False)
        torch.testing.assert_close(mean, norm.bias.detach(), atol=1e-10, rtol=0.0)
        # unit weight at initialization
        torch.testing.assert_close(
            variance, torch.ones(8, dtype=variance.dtype), atol=1e-2, rtol=0.0
        )

    def test_running_statistics_follow_batches(self, body_model):
        """Running statistics move toward the batch statistics in training mode."""
        norm = body_model.head[2]
        before = norm.running_mean.clone()
        body_model.train()
        body_model(torch.randn(2, 6, 11, 3), 2, torch.randn(2, 6, 11, 3))
        assert not torch.equal(before, norm.running_mean)
        assert int(norm.num_batches_tracked) == 1
        body_model.eval()
        frozen = norm.running_mean.clone()
        body_model(torch.randn(2, 6, 11, 3), 2, torch.randn(2, 6, 11, 3))
        assert torch.equal(frozen, norm.running_mean)

    def test_gradients_match_finite_differences(self):
        """Reverse-mode gradients of the network agree with central differences."""
        model = build_denoiser(
            _config("hands", latent_dim=4, window_length=3), num_steps=10, seed=0
        )
        model.eval()
        generator = torch.Generator().manual_seed(0)
        x_t = torch.randn(2, 3, 4, 3, generator=generator)
        actor = torch.randn(2, 3, 4, 3, generator=generator)
        target = torch.randn(2, 3, 4, 3, generator=generator)
        masks = torch.ones(2, 3, 4)
        masks[0, 1] = 0.0

        def loss():
            prediction = model(x_t, torch.tensor([2, 7]), actor, masks, masks)
            return (prediction - target).pow(2).mean()

        error = finite_difference_check(
            loss, list(model.parameters()), max_entries=3, generator=generator
        )
        assert error <= 1e-4
