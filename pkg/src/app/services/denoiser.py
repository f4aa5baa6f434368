"""Transformer denoisers for the cascade stages.

Each stage predicts the clean reactor motion from a noisy sample, the diffusion
step and the actor's motion. Motion tokens are (frame, joint) pairs flattened
frame-major. Reactor tokens query actor tokens in a cross-attention over the
whole window; the hand stage additionally zeroes queries and keys of hands
that are not interacting. The joint stage, used without the cascade, covers
body and hand columns at once with unmasked attention.
"""

import math

import torch
from loguru import logger
from torch import nn

from app.models.configs import DenoiserConfig, Stage
from app.models.errors import ConfigError, ScheduleError, ShapeMismatchError
from app.services.autodiff import masked_multiply

MAX_PERIOD = 10_000.0


def sinusoidal_encoding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """(..., dim) sine/cosine encoding of integer or real positions."""
    half = dim // 2
    frequencies = torch.arange(half, dtype=torch.float64) / max(half, 1)
    exponent = -math.log(MAX_PERIOD) * frequencies
    angles = positions.to(torch.float64)[..., None] * torch.exp(exponent)
    encoding = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if dim % 2:
        encoding = nn.functional.pad(encoding, (0, 1))
    return encoding.to(torch.get_default_dtype())


def timestep_embedding(
    t: int | torch.Tensor, dim: int, num_steps: int | None = None
) -> torch.Tensor:
    """Sinusoidal embedding of diffusion step(s) ``t``; shape (dim,) or (B, dim)."""
    steps = torch.as_tensor(t)
    if steps.is_floating_point():
        msg = "diffusion steps must be integers"
        raise ScheduleError(msg)
    upper = num_steps if num_steps is not None else math.inf
    if torch.any(steps < 0) or torch.any(steps > upper):
        msg = f"diffusion step out of range [0, {num_steps}]: {steps.tolist()}"
        raise ScheduleError(msg)
    return sinusoidal_encoding(steps, dim)


def _split_heads(x: torch.Tensor, num_heads: int) -> torch.Tensor:
    *lead, tokens, dim = x.shape
    return x.reshape(*lead, tokens, num_heads, dim // num_heads).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, heads, tokens, head_dim = x.shape
    return x.transpose(-3, -2).reshape(*lead, tokens, heads * head_dim)


def cost_xa(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    num_heads: int = 1,
    *,
    return_attention: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    """Combined spatio-temporal cross-attention over flattened tokens.

    ``q`` holds the reactor tokens, ``k`` and ``v`` the actor tokens, all shaped
    (..., N * J, d). Each head computes softmax(Q K^T / sqrt(d_k)) V; heads are
    concatenated. With ``return_attention`` the (..., h, NJ, NJ) weights are
    returned as well.
    """
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeMismatchError(
            "attention keys and values", tuple(q.shape), tuple(k.shape)
        )
    if q.shape[-1] % num_heads:
        msg = f"feature size {q.shape[-1]} is not divisible by {num_heads} heads"
        raise ValueError(msg)
    qh, kh, vh = (_split_heads(x, num_heads) for x in (q, k, v))
    logits = qh @ kh.transpose(-2, -1) / math.sqrt(qh.shape[-1])
    attention = torch.softmax(logits, dim=-1)
    out = _merge_heads(attention @ vh)
    if return_attention:
        return out, attention
    return out


def h_xa(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    mask_reactor: torch.Tensor,
    mask_actor: torch.Tensor,
    num_heads: int = 1,
    *,
    return_attention: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    """Hand-interaction-aware cross-attention.

    The (..., N, J_H) masks are flattened to tokens and multiplied into the
    queries (reactor mask) and keys (actor mask); values stay unmasked.
    """
    return cost_xa(
        masked_multiply(q, mask_reactor),
        masked_multiply(k, mask_actor),
        v,
        num_heads,
        return_attention=return_attention,
    )


def factorized_xa(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    num_frames: int,
    num_heads: int = 1,
) -> torch.Tensor:
    """Spatial attention inside each frame followed by temporal attention per joint.

    Inputs are (B, N * J, d) tokens; queries and keys are expected masked already.
    """
    batch, tokens, dim = q.shape
    num_joints = tokens // num_frames

    def grid(x: torch.Tensor) -> torch.Tensor:
        return x.reshape(batch, num_frames, num_joints, dim)

    spatial = cost_xa(grid(q), grid(k), grid(v), num_heads)
    temporal = cost_xa(
        spatial.transpose(1, 2),
        grid(k).transpose(1, 2),
        grid(v).transpose(1, 2),
        num_heads,
    )
    return temporal.transpose(1, 2).reshape(batch, tokens, dim)


class TokenAttention(nn.Module):
    """Multi-head attention from query tokens onto context tokens."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        d = config.latent_dim
        self.num_heads = config.num_heads
        self.factorized = config.attention == "factorized"
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        num_frames: int,
        mask_reactor: torch.Tensor | None = None,
        mask_actor: torch.Tensor | None = None,
    ) -> torch.Tensor:
        q, k, v = self.query(x), self.key(context), self.value(context)
        if mask_reactor is not None and mask_actor is not None:
            q = masked_multiply(q, mask_reactor)
            k = masked_multiply(k, mask_actor)
        if self.factorized:
            attended = factorized_xa(q, k, v, num_frames, self.num_heads)
        else:
            attended = cost_xa(q, k, v, self.num_heads)
        return self.out(attended)


class DecoderLayer(nn.Module):
    """Self-attention and cross-attention onto the actor, then a feed-forward block."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        d = config.latent_dim
        self.self_attention = TokenAttention(config)
        self.cross_attention = TokenAttention(config)
        self.step_projection = nn.Linear(d, d)
        self.feedforward = nn.Sequential(
            nn.Linear(d, d * config.feedforward_multiplier),
            nn.SiLU(),
            nn.Linear(d * config.feedforward_multiplier, d),
        )
        self.norm_self = nn.LayerNorm(d)
        self.norm_cross = nn.LayerNorm(d)
        self.norm_out = nn.LayerNorm(d)

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        step: torch.Tensor,
        num_frames: int,
        mask_reactor: torch.Tensor | None,
        mask_actor: torch.Tensor | None,
    ) -> torch.Tensor:
        x = self.norm_self(x + self.self_attention(x, x, num_frames))
        x = self.norm_cross(
            x + self.cross_attention(x, context, num_frames, mask_reactor, mask_actor)
        )
        # the step enters after the attention blocks
        x = x + self.step_projection(step)[:, None, :]
        return self.norm_out(x + self.feedforward(x))


class Denoiser(nn.Module):
    """x0-predicting denoiser of one cascade stage.

    ``forward`` takes the noisy reactor motion (B, N, J, 3), integer steps (B,),
    the actor motion of the same stage (B, N, J, 3) and, for the hand stage, the
    (B, N, J_H) reactor and actor hand masks. Unbatched (N, J, 3) inputs are
    accepted as well.
    """

    def __init__(self, config: DenoiserConfig, num_steps: int):
        super().__init__()
        self.config = config
        self.num_steps = num_steps
        self.fitted = False
        d = config.latent_dim
        self.motion_embedding = nn.Linear(3, d)
        self.condition_embedding = nn.Linear(3, d)
        self.joint_embedding = nn.Parameter(torch.randn(config.num_joints, d) * 0.02)
        self.register_buffer(
            "frame_encoding",
            sinusoidal_encoding(torch.arange(config.window_length), d),
            persistent=False,
        )
        self.step_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.layers = nn.ModuleList(
            DecoderLayer(config) for _ in range(config.num_layers)
        )
        self.head = nn.Sequential(
            nn.Linear(d, d), nn.SiLU(), nn.BatchNorm1d(d), nn.Linear(d, 3)
        )
        logger.info(
            f"Built {config.stage} denoiser: {config.num_layers} layers, d={d}, "
            f"{config.num_heads} heads, {config.attention} attention, "
            f"{self.num_parameters} parameters"
        )

    @property
    def stage(self) -> Stage:
        return self.config.stage

    @property
    def num_parameters(self) -> int:
        return count_parameters(self)

    def _tokens(self, motion: torch.Tensor, embedding: nn.Linear) -> torch.Tensor:
        batch, num_frames, num_joints, _ = motion.shape
        features = embedding(motion)
        features = features + self.joint_embedding[None, None]
        features = features + self.frame_encoding[None, :num_frames, None, :]
        return features.reshape(batch, num_frames * num_joints, -1)

    def _check(self, name: str, tensor: torch.Tensor, expected: tuple) -> None:
        if tuple(tensor.shape) != expected:
            raise ShapeMismatchError(name, expected, tuple(tensor.shape))

    def forward(
        self,
        x_t: torch.Tensor,
        t: int | torch.Tensor,
        condition: torch.Tensor,
        mask_reactor: torch.Tensor | None = None,
        mask_actor: torch.Tensor | None = None,
    ) -> torch.Tensor:
        unbatched = x_t.ndim == 3
        if unbatched:
            x_t, condition = x_t[None], condition[None]
            mask_reactor = None if mask_reactor is None else mask_reactor[None]
            mask_actor = None if mask_actor is None else mask_actor[None]
        if x_t.ndim != 4:
            raise ShapeMismatchError(
                "noisy motion", ("B", "N", "J", 3), tuple(x_t.shape)
            )
        batch, num_frames, num_joints, _ = x_t.shape
        too_long = num_frames > self.config.window_length
        if num_joints != self.config.num_joints or too_long:
            raise ShapeMismatchError(
                f"{self.stage} motion",
                ("B", f"<={self.config.window_length}", self.config.num_joints, 3),
                tuple(x_t.shape),
            )
        self._check("actor condition", condition, tuple(x_t.shape))
        mask_shape = (batch, num_frames, num_joints)
        if self.stage == "hands":
            if mask_reactor is None or mask_actor is None:
                raise ShapeMismatchError("hand masks", mask_shape, None)
            self._check("mask_reactor", mask_reactor, mask_shape)
            self._check("mask_actor", mask_actor, mask_shape)
        else:
            mask_reactor = mask_actor = None

        steps = torch.as_tensor(t).reshape(-1).expand(batch)
        embedded = timestep_embedding(steps, self.config.latent_dim, self.num_steps)
        step = self.step_mlp(embedded)
        x = self._tokens(x_t, self.motion_embedding)
        context = self._tokens(condition, self.condition_embedding)
        for layer in self.layers:
            x = layer(x, context, step, num_frames, mask_reactor, mask_actor)
        out = self.head(x.reshape(-1, x.shape[-1]))
        out = out.reshape(batch, num_frames, num_joints, 3)
        return out[0] if unbatched else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def build_denoiser(config: DenoiserConfig, num_steps: int, seed: int = 0) -> Denoiser:
    """Construct a denoiser with initial weights drawn from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Denoiser(config, num_steps)


def _require_stage(model: Denoiser, stage: Stage) -> None:
    if model.stage != stage:
        msg = f"expected a {stage} denoiser, got the {model.stage} one"
        raise ConfigError(msg)


def body_denoise(
    model: Denoiser, x_t: torch.Tensor, t: int | torch.Tensor, actor_body: torch.Tensor
) -> torch.Tensor:
    """Predict the clean reactor body from its noisy version and the actor body."""
    _require_stage(model, "body")
    return model(x_t, t, actor_body)


def hand_denoise(
    model: Denoiser,
    x_t: torch.Tensor,
    t: int | torch.Tensor,
    actor_hands: torch.Tensor,
    mask_reactor: torch.Tensor,
    mask_actor: torch.Tensor,
) -> torch.Tensor:
    """Predict clean wrist-relative reactor hands under the interaction masks."""
    _require_stage(model, "hands")
    return model(x_t, t, actor_hands, mask_reactor, mask_actor)
