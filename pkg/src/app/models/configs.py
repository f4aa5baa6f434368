"""Validated configuration models for data, networks, diffusion, training and runs.

Defaults are desk-scale. The full-scale constants (T=500, d=256, L=6, h=4,
batch 64, learning rate 1e-5) are reachable through settings overrides.
"""

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Stage = Literal["body", "hands", "joint"]
Objective = Literal["diffusion", "regression"]
AttentionMode = Literal["combined", "factorized"]
Precision = Literal["float64", "float32"]
MaskPolicyName = Literal["ground_truth", "synthesized"]

MAX_SEED = 2**64 - 1


class FrozenModel(BaseModel):
    """Immutable model that rejects unknown fields."""

    model_config = ConfigDict(frozen=True, extra="forbid")


class SynthConfig(FrozenModel):
    """Deterministic two-character data generator settings."""

    seed: int = Field(0, ge=0, le=MAX_SEED)
    num_pairs: int = Field(8, ge=1)
    frames_per_pair: int = Field(100, ge=2)
    fps: float = Field(20.0, gt=0.0)
    skeleton_preset: Literal["mini", "full"] = "mini"
    phase_lag: int = Field(3, ge=0)
    contact_episode_rate: float = Field(0.3, ge=0.0, le=1.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    window_length: int = Field(20, ge=3)
    stride: int = Field(20, ge=1)
    hand_mask_threshold: float = Field(0.10, gt=0.0)
    max_pair_distance: float | None = Field(None, gt=0.0)
    require_contact: bool = False

    @model_validator(mode="after")
    def _frames_cover_window(self) -> "SynthConfig":
        if self.frames_per_pair < self.window_length:
            msg = (
                f"frames_per_pair ({self.frames_per_pair}) must be at least "
                f"the window length ({self.window_length})"
            )
            raise ValueError(msg)
        return self


class NetworkShape(FrozenModel):
    """Size of one denoiser, independent of the skeleton."""

    latent_dim: int = Field(32, ge=1)
    num_layers: int = Field(2, ge=1)
    num_heads: int = Field(2, ge=1)
    feedforward_multiplier: int = Field(2, ge=1)
    attention: AttentionMode = "combined"

    @model_validator(mode="after")
    def _heads_divide_latent(self) -> "NetworkShape":
        if self.latent_dim % self.num_heads != 0:
            msg = (
                f"latent_dim {self.latent_dim} is not divisible "
                f"by {self.num_heads} heads"
            )
            raise ValueError(msg)
        return self


class DenoiserConfig(NetworkShape):
    """Full configuration of one cascade stage's denoiser."""

    num_body_joints: int = Field(ge=1)
    num_hand_joints: int = Field(ge=0)
    window_length: int = Field(20, ge=2)
    stage: Stage = "body"

    @model_validator(mode="after")
    def _stage_has_joints(self) -> "DenoiserConfig":
        if self.stage == "hands" and self.num_hand_joints == 0:
            msg = "the hand stage needs at least one hand joint"
            raise ValueError(msg)
        return self

    @property
    def num_joints(self) -> int:
        """Joints handled by this stage."""
        if self.stage == "joint":
            return self.num_body_joints + self.num_hand_joints
        return self.num_body_joints if self.stage == "body" else self.num_hand_joints

    @property
    def num_tokens(self) -> int:
        return self.window_length * self.num_joints

    @property
    def head_dim(self) -> int:
        return self.latent_dim // self.num_heads

    @classmethod
    def for_stage(
        cls,
        shape: NetworkShape,
        *,
        stage: Stage,
        num_body_joints: int,
        num_hand_joints: int,
        window_length: int,
    ) -> "DenoiserConfig":
        return cls(
            **shape.model_dump(),
            num_body_joints=num_body_joints,
            num_hand_joints=num_hand_joints,
            window_length=window_length,
            stage=stage,
        )


class LossWeights(FrozenModel):
    """Weights of the total and kinematic objectives.

    ``recon``, ``reaction`` and ``kinematic`` weigh the three top-level terms;
    ``velocity``, ``acceleration``, ``bone`` and ``foot`` weigh the kinematic parts.
    The foot term is only switched on from ``foot_loss_start_epoch``.
    """

    recon: float = Field(10.0, ge=0.0)
    reaction: float = Field(10.0, ge=0.0)
    kinematic: float = Field(1.0, ge=0.0)
    velocity: float = Field(10.0, ge=0.0)
    acceleration: float = Field(1.0, ge=0.0)
    bone: float = Field(1.0, ge=0.0)
    foot: float = Field(20.0, ge=0.0)
    foot_loss_start_epoch: int = Field(100, ge=0)
    squared_recon: bool = False


class DiffusionConfig(FrozenModel):
    num_steps: int = Field(100, ge=1)
    beta_start: float = 2e-4
    beta_end: float = 2e-2


class GuidanceConfig(FrozenModel):
    """Inference-time arm alignment.

    ``arm_joints`` overrides the skeleton's shoulder-elbow-wrist chains.
    ``placement`` is "prediction" (step on the predicted clean sample before the
    posterior step) or "sample" (step on the posterior sample after it).
    """

    scale: float = Field(1e-3, ge=0.0)
    enabled: bool = True
    placement: Literal["prediction", "sample"] = "prediction"
    arm_joints: dict[str, tuple[int, ...]] | None = None

    @field_validator("arm_joints")
    @classmethod
    def _both_sides(cls, value: dict[str, tuple[int, ...]] | None):
        if value is not None and set(value) != {"left", "right"}:
            msg = "arm_joints needs exactly the keys 'left' and 'right'"
            raise ValueError(msg)
        return value


class TrainConfig(FrozenModel):
    """One stage's training run.

    ``stage="joint"`` trains a single denoiser over body and hands together.
    ``objective="regression"`` drops the diffusion: the network sees a zero sample
    at its last step and learns the reactor from the actor directly.
    """

    stage: Stage = "body"
    objective: Objective = "diffusion"
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(40, ge=1)
    max_steps: int | None = Field(None, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    lr_step_size: int = Field(5, ge=1)
    lr_gamma: float = Field(0.99, gt=0.0, le=1.0)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    loss: LossWeights = LossWeights()
    network: NetworkShape = NetworkShape()
    diffusion: DiffusionConfig = DiffusionConfig()
    mask_policy: MaskPolicyName = "ground_truth"
    foot_contact_source: MaskPolicyName = "ground_truth"
    mask_threshold: float = Field(0.10, gt=0.0)
    log_every: int = Field(10, ge=1)


class FeatureExtractorConfig(FrozenModel):
    """Windowed position + velocity features projected on principal components."""

    window_length: int = Field(20, ge=2)
    projection_dim: int = Field(16, ge=1)
    include_velocity: bool = True


class EvalConfig(FrozenModel):
    seed: int = Field(0, ge=0, le=MAX_SEED)
    repeats: int = Field(5, ge=2)
    diversity_subset: int = Field(10, ge=1)
    max_windows: int | None = Field(None, ge=1)
    deterministic: bool = False
    guidance: GuidanceConfig = GuidanceConfig()
    features: FeatureExtractorConfig = FeatureExtractorConfig()


Subcommand = Literal["gen-data", "train", "sample", "edit", "eval", "inspect"]


class RunConfig(FrozenModel):
    """One CLI invocation."""

    subcommand: Subcommand
    config_path: Path | None = None
    out_dir: Path = Path("out")
    seed: int | None = Field(None, ge=0, le=MAX_SEED)
    overrides: dict[str, Any] = {}
    inspect_targets: tuple[str, ...] = ()

    @field_validator("config_path")
    @classmethod
    def _config_exists(cls, value: Path | None) -> Path | None:
        if value is not None and not value.is_file():
            msg = f"config file not found: {value}"
            raise ValueError(msg)
        return value


class Settings(FrozenModel):
    """Everything a settings file and its command-line overrides can set.

    Sections map onto the models above; ``train_config`` and ``eval_config``
    fold the shared sections into the stage-level configs.
    """

    stage: Stage = "body"
    seed: int = Field(0, ge=0, le=MAX_SEED)
    data_dir: Path | None = None
    checkpoint_dir: Path | None = None
    body_checkpoint: Path | None = None
    hand_checkpoint: Path | None = None
    body_only: bool = False
    cascade: bool = True
    resume: bool = False
    deterministic: bool = False
    actor: Path | None = None
    reference: Path | None = None
    generated: Path | None = None
    constraint: Path | None = None
    mask_threshold: float = Field(0.10, gt=0.0)
    synth: SynthConfig = SynthConfig()
    denoiser: NetworkShape = NetworkShape()
    loss: LossWeights = LossWeights()
    diffusion: DiffusionConfig = DiffusionConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()

    def with_seed(self, seed: int) -> "Settings":
        """Apply one seed to sampling and to every section that has a seed."""
        return self.model_validate(
            self.model_dump()
            | {
                "seed": seed,
                "synth": self.synth.model_dump() | {"seed": seed},
                "train": self.train.model_dump() | {"seed": seed},
                "eval": self.eval.model_dump() | {"seed": seed},
            }
        )

    def train_config(self) -> TrainConfig:
        """The train section with the shared sections folded in.

        Without the cascade every run trains the single joint stage.
        """
        return self.train.model_copy(
            update={
                "stage": self.stage if self.cascade else "joint",
                "loss": self.loss,
                "network": self.denoiser,
                "diffusion": self.diffusion,
                "mask_threshold": self.mask_threshold,
            }
        )

    def eval_config(self) -> EvalConfig:
        return self.eval.model_copy(update={"guidance": self.guidance})
