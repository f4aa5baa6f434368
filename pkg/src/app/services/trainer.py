"""Stage training loops, training logs and checkpoints.

The body and hand denoisers are trained separately. Every random draw comes
from one seeded ``torch.Generator`` whose state is checkpointed at epoch ends,
so an interrupted run resumes on the same trajectory.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel, ValidationError

from app.models.configs import (
    DenoiserConfig,
    MaskPolicyName,
    Objective,
    Stage,
    TrainConfig,
)
from app.models.errors import CheckpointError, ConfigError, DivergenceError
from app.services.autodiff import (
    OptimizerState,
    TensorRecord,
    as_tensor,
    backward,
    decode_state,
    encode_state,
    end_epoch,
    make_optimizer,
    optimizer_step,
    restore_tensor,
    tensor_record,
)
from app.services.denoiser import Denoiser, build_denoiser
from app.services.diffusion import (
    DiffusionSchedule,
    NetworkDenoiser,
    RegressionDenoiser,
    StageDenoiser,
    q_sample,
    sample_normalized,
    schedule_from_config,
)
from app.services.losses import (
    LossComponents,
    kinematic_losses,
    reaction_loss,
    recon_loss,
    total_loss,
)
from app.services.motion_core import (
    detect_foot_contacts,
    stage_bone_edges,
    stage_columns,
)
from app.services.synthetic import WindowDataset

CHECKPOINT_FORMAT = "remos-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class StageData:
    """Stage-specific training tensors for a window dataset."""

    target: torch.Tensor
    condition: torch.Tensor
    edges: tuple[tuple[int, ...], tuple[int, ...]]
    foot_columns: list[int]
    foot_contacts: torch.Tensor | None = None
    mask_reactor: torch.Tensor | None = None
    mask_actor: torch.Tensor | None = None
    anchor_reactor: torch.Tensor | None = None
    anchor_actor: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.target.shape[0]


def hand_stage_mask_source(
    config: TrainConfig, body_denoiser: StageDenoiser | None = None
) -> MaskPolicyName:
    """Which body the hand-stage masks are computed from during training."""
    if config.mask_policy == "synthesized" and body_denoiser is None:
        msg = "the synthesized mask policy needs a trained body model"
        raise ConfigError(msg)
    return config.mask_policy


def synthesized_masks(
    dataset: WindowDataset,
    body_denoiser: StageDenoiser,
    schedule: DiffusionSchedule,
    *,
    threshold: float,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Hand masks between each actor and a body synthesized for it."""
    _, masks = sample_normalized(
        dataset.actor,
        dataset.skeleton,
        body_denoiser,
        None,
        schedule,
        generator=torch.Generator().manual_seed(seed),
        deterministic=True,
        mask_threshold=threshold,
    )
    return (
        np.stack([m.mask_reactor for m in masks]),
        np.stack([m.mask_actor for m in masks]),
    )


def _wrist_anchor(positions: np.ndarray, dataset: WindowDataset) -> np.ndarray:
    """Per hand column, the owning wrist's position."""
    skeleton = dataset.skeleton
    wrists = [
        skeleton.wrist_index[side]
        for side in ("left", "right")
        for _ in skeleton.hand_joint_indices[side]
    ]
    return positions[:, :, wrists]


def stage_data(
    dataset: WindowDataset,
    stage: Stage,
    *,
    masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> StageData:
    """Split normalized windows into one stage's targets and conditions.

    Hand-stage masks default to the ones stored with the dataset (ground-truth
    bodies); ``masks`` replaces them with (reactor, actor) masks from elsewhere.
    """
    skeleton = dataset.skeleton
    dtype = torch.get_default_dtype()
    if stage == "body":
        columns = list(skeleton.body_joint_indices)
        position = {joint: c for c, joint in enumerate(columns)}
        return StageData(
            target=as_tensor(dataset.reactor[:, :, columns], dtype),
            condition=as_tensor(dataset.actor[:, :, columns], dtype),
            edges=stage_bone_edges(skeleton, "body"),
            foot_columns=[position[j] for j in skeleton.foot_joint_indices],
            foot_contacts=as_tensor(dataset.foot_contacts, dtype),
        )
    columns = list(stage_columns(skeleton, stage))
    mask_reactor, mask_actor = masks or (dataset.mask_reactor, dataset.mask_actor)
    anchor_reactor = _wrist_anchor(dataset.reactor, dataset)
    anchor_actor = _wrist_anchor(dataset.actor, dataset)
    if stage == "joint":
        # body columns are already in the actor-root frame
        body_shape = (*dataset.reactor.shape[:2], skeleton.num_body_joints, 3)
        anchor_reactor = np.concatenate([np.zeros(body_shape), anchor_reactor], 2)
        anchor_actor = np.concatenate([np.zeros(body_shape), anchor_actor], 2)
        position = {joint: c for c, joint in enumerate(columns)}
        return StageData(
            target=as_tensor(dataset.reactor[:, :, columns], dtype),
            condition=as_tensor(dataset.actor[:, :, columns], dtype),
            edges=stage_bone_edges(skeleton, stage),
            foot_columns=[position[j] for j in skeleton.foot_joint_indices],
            foot_contacts=as_tensor(dataset.foot_contacts, dtype),
            anchor_reactor=as_tensor(anchor_reactor, dtype),
            anchor_actor=as_tensor(anchor_actor, dtype),
        )
    return StageData(
        target=as_tensor(dataset.reactor[:, :, columns], dtype),
        condition=as_tensor(dataset.actor[:, :, columns], dtype),
        edges=stage_bone_edges(skeleton, stage),
        foot_columns=[],
        mask_reactor=as_tensor(mask_reactor, dtype),
        mask_actor=as_tensor(mask_actor, dtype),
        anchor_reactor=as_tensor(anchor_reactor, dtype),
        anchor_actor=as_tensor(anchor_actor, dtype),
    )


def loss_components(
    data: StageData,
    index: torch.Tensor,
    prediction: torch.Tensor,
    *,
    squared_recon: bool = False,
    synthesized_contacts: bool = False,
) -> LossComponents:
    """All loss terms of a batch prediction."""
    target = data.target[index]
    condition = data.condition[index]
    if data.anchor_reactor is not None and data.anchor_actor is not None:
        anchor = data.anchor_reactor[index]
        reaction = reaction_loss(
            target + anchor, prediction + anchor, condition + data.anchor_actor[index]
        )
    else:
        reaction = reaction_loss(target, prediction, condition)

    contacts = None
    if data.foot_columns:
        if synthesized_contacts:
            predicted = prediction.detach().cpu().numpy()
            feet = tuple(data.foot_columns)
            contacts = as_tensor(
                np.stack(
                    [
                        detect_foot_contacts(window, foot_joint_indices=feet)
                        for window in predicted
                    ]
                ),
                prediction.dtype,
            )
        elif data.foot_contacts is not None:
            contacts = data.foot_contacts[index]
    kinematic = kinematic_losses(
        target, prediction, data.edges, contacts, data.foot_columns
    )
    return LossComponents(
        recon=recon_loss(target, prediction, squared=squared_recon),
        reaction=reaction,
        **kinematic,
    )


class TrainRecord(BaseModel):
    """One line of the training log."""

    epoch: int
    step: int
    lr: float
    total: float
    foot_weight: float
    recon: float
    reaction: float
    velocity: float
    acceleration: float
    bone: float
    foot: float


def append_log(path: Path | None, record: TrainRecord) -> None:
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(record.model_dump_json() + "\n")


def read_training_log(path: Path) -> list[TrainRecord]:
    records = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(TrainRecord.model_validate_json(line))
        except ValidationError as e:
            msg = f"training log {path}, line {number}: {e}"
            raise CheckpointError(msg) from e
    return records


@dataclass
class TrainingState:
    """Everything needed to continue or use a training run."""

    model: Denoiser
    optimizer: OptimizerState
    generator: torch.Generator
    config: TrainConfig
    epoch: int = 0
    step: int = 0
    history: list[TrainRecord] = field(default_factory=list)

    @property
    def stage(self) -> Stage:
        return self.model.stage


def new_training_state(dataset: WindowDataset, config: TrainConfig) -> TrainingState:
    skeleton = dataset.skeleton
    denoiser_config = DenoiserConfig.for_stage(
        config.network,
        stage=config.stage,
        num_body_joints=skeleton.num_body_joints,
        num_hand_joints=skeleton.num_hand_joints,
        window_length=dataset.window_length,
    )
    model = build_denoiser(
        denoiser_config, config.diffusion.num_steps, seed=config.seed
    )
    optimizer = make_optimizer(
        model.parameters(),
        config.learning_rate,
        step_size=config.lr_step_size,
        gamma=config.lr_gamma,
    )
    generator = torch.Generator().manual_seed(config.seed)
    return TrainingState(
        model=model, optimizer=optimizer, generator=generator, config=config
    )


def _gradient_norm(model: Denoiser) -> float:
    return float(torch.nn.utils.clip_grad_norm_(model.parameters(), max_norm=math.inf))


def _network_inputs(
    target: torch.Tensor,
    objective: Objective,
    schedule: DiffusionSchedule,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Noisy sample and steps for one batch.

    Regression feeds a zero sample at the last step and draws nothing.
    """
    batch = target.shape[0]
    if objective == "regression":
        steps = torch.full((batch,), schedule.num_steps, dtype=torch.long)
        return torch.zeros_like(target), steps
    t = torch.randint(1, schedule.num_steps + 1, (batch,), generator=generator)
    noise = torch.randn(target.shape, generator=generator, dtype=target.dtype)
    return q_sample(target, t, noise, schedule), t


def train_stage(
    dataset: WindowDataset,
    config: TrainConfig,
    *,
    body_denoiser: StageDenoiser | None = None,
    state: TrainingState | None = None,
    log_path: Path | None = None,
    checkpoint_path: Path | None = None,
) -> TrainingState:
    """Train one cascade stage on normalized windows.

    Pass ``state`` (from ``load_checkpoint``) to resume; training continues up to
    ``config.epochs``. On a non-finite loss or gradient norm the last good state
    is written to ``checkpoint_path`` (when given) and ``DivergenceError`` raised.
    """
    if len(dataset) == 0:
        msg = "the training set is empty"
        raise ConfigError(msg)
    policy = None
    if config.stage == "hands":
        policy = hand_stage_mask_source(config, body_denoiser)
    schedule = schedule_from_config(config.diffusion)
    masks = None
    if policy == "synthesized" and body_denoiser is not None:
        masks = synthesized_masks(
            dataset,
            body_denoiser,
            schedule,
            threshold=config.mask_threshold,
            seed=config.seed,
        )
    data = stage_data(dataset, config.stage, masks=masks)
    state = state or new_training_state(dataset, config)
    if state.stage != config.stage:
        msg = f"cannot continue a {state.stage} run as a {config.stage} run"
        raise CheckpointError(msg)
    state.config = config
    model = state.model
    weights = config.loss
    synthesized_contacts = config.foot_contact_source == "synthesized"
    logger.info(
        f"Training {config.stage} stage on {len(data)} windows "
        f"from epoch {state.epoch} to {config.epochs} "
        f"(batch {config.batch_size}, lr {state.optimizer.learning_rate:g})"
    )

    while state.epoch < config.epochs:
        model.train()
        order = torch.randperm(len(data), generator=state.generator)
        sums: dict[str, float] = {}
        batches = 0
        completed = True
        for begin in range(0, len(data), config.batch_size):
            index = order[begin : begin + config.batch_size]
            target = data.target[index]
            x_t, t = _network_inputs(
                target, config.objective, schedule, state.generator
            )
            prediction = model(
                x_t,
                t,
                data.condition[index],
                None if data.mask_reactor is None else data.mask_reactor[index],
                None if data.mask_actor is None else data.mask_actor[index],
            )
            components = loss_components(
                data,
                index,
                prediction,
                squared_recon=weights.squared_recon,
                synthesized_contacts=synthesized_contacts,
            )
            loss = total_loss(components, weights, state.epoch)
            if not torch.isfinite(loss):
                _diverged(state, checkpoint_path, f"non-finite loss {float(loss)}")
            backward(loss)
            grad_norm = _gradient_norm(model)
            if not math.isfinite(grad_norm):
                reason = f"non-finite gradient norm {grad_norm}"
                _diverged(state, checkpoint_path, reason)
            optimizer_step(model.parameters(), state.optimizer)
            state.step += 1
            batches += 1
            values = components.as_floats() | {"total": float(loss)}
            for name, value in values.items():
                sums[name] = sums.get(name, 0.0) + value
            if state.step % config.log_every == 0:
                logger.debug(f"Step {state.step}: loss {float(loss):.6f}")
            if config.max_steps is not None and state.step >= config.max_steps:
                completed = begin + config.batch_size >= len(data)
                break

        foot_active = state.epoch >= weights.foot_loss_start_epoch
        record = TrainRecord(
            epoch=state.epoch,
            step=state.step,
            lr=state.optimizer.learning_rate,
            foot_weight=weights.foot if foot_active else 0.0,
            **{name: value / batches for name, value in sums.items()},
        )
        state.history.append(record)
        append_log(log_path, record)
        logger.info(
            f"Epoch {state.epoch}: loss {record.total:.6f} (recon {record.recon:.5f}, "
            f"reaction {record.reaction:.5f}), lr {record.lr:.3e}"
        )
        if completed:
            end_epoch(state.optimizer)
            state.epoch = state.optimizer.epoch
        if config.max_steps is not None and state.step >= config.max_steps:
            logger.info(f"Reached the step budget of {config.max_steps}")
            break

    model.fitted = True
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return state


def _diverged(state: TrainingState, checkpoint_path: Path | None, reason: str) -> None:
    logger.error(f"Training diverged at step {state.step}: {reason}")
    state.optimizer.optimizer.zero_grad(set_to_none=True)
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
        logger.info(f"Saved the last good state to {checkpoint_path}")
    msg = f"training diverged at epoch {state.epoch}, step {state.step}: {reason}"
    raise DivergenceError(msg)


class CheckpointFile(BaseModel):
    """On-disk training state of one stage."""

    format: Literal["remos-checkpoint"]
    version: int
    stage: Stage
    epoch: int
    step: int
    fitted: bool
    num_steps: int
    mask_policy: MaskPolicyName
    foot_contact_source: MaskPolicyName
    denoiser_config: DenoiserConfig
    train_config: TrainConfig
    model_state: dict
    optimizer_state: dict
    scheduler_state: dict
    generator_state: TensorRecord
    history: list[TrainRecord]


def save_checkpoint(state: TrainingState, path: Path) -> Path:
    """Write the training state as JSON; equal states give identical bytes."""
    document = CheckpointFile(
        format=CHECKPOINT_FORMAT,
        version=CHECKPOINT_VERSION,
        stage=state.stage,
        epoch=state.epoch,
        step=state.step,
        fitted=state.model.fitted,
        num_steps=state.model.num_steps,
        mask_policy=state.config.mask_policy,
        foot_contact_source=state.config.foot_contact_source,
        denoiser_config=state.model.config,
        train_config=state.config,
        model_state=encode_state(state.model.state_dict()),
        optimizer_state=encode_state(state.optimizer.optimizer.state_dict()),
        scheduler_state=encode_state(state.optimizer.scheduler.state_dict()),
        generator_state=tensor_record(state.generator.get_state()),
        history=state.history,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(), encoding="utf-8")
    logger.debug(f"Wrote {state.stage} checkpoint (epoch {state.epoch}) to {path}")
    return path


def load_checkpoint(path: Path, stage: Stage | None = None) -> TrainingState:
    """Restore a training state; ``stage`` checks the stage tag."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        msg = f"cannot read checkpoint {path}: {e}"
        raise CheckpointError(msg) from e
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        msg = f"{path} is not a checkpoint file"
        raise CheckpointError(msg)
    if raw.get("version") != CHECKPOINT_VERSION:
        msg = (
            f"checkpoint {path} has version {raw.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
        raise CheckpointError(msg)
    try:
        document = CheckpointFile.model_validate(raw)
    except ValidationError as e:
        msg = f"corrupted checkpoint {path}: {e}"
        raise CheckpointError(msg) from e
    if stage is not None and document.stage != stage:
        msg = f"checkpoint {path} holds the {document.stage} stage, expected {stage}"
        raise CheckpointError(msg)

    try:
        model = Denoiser(document.denoiser_config, document.num_steps)
        model.load_state_dict(decode_state(document.model_state))
        config = document.train_config
        optimizer = make_optimizer(
            model.parameters(),
            config.learning_rate,
            step_size=config.lr_step_size,
            gamma=config.lr_gamma,
        )
        optimizer.optimizer.load_state_dict(
            decode_state(document.optimizer_state, int_keys=True)
        )
        optimizer.scheduler.load_state_dict(decode_state(document.scheduler_state))
        optimizer.epoch = document.epoch
        generator = torch.Generator()
        generator.set_state(restore_tensor(document.generator_state).to(torch.uint8))
    except (RuntimeError, KeyError, ValueError, TypeError) as e:
        msg = f"corrupted checkpoint {path}: {e}"
        raise CheckpointError(msg) from e
    model.fitted = document.fitted
    model.eval()
    return TrainingState(
        model=model,
        optimizer=optimizer,
        generator=generator,
        config=config,
        epoch=document.epoch,
        step=document.step,
        history=list(document.history),
    )


def inference_denoiser(state: TrainingState) -> NetworkDenoiser:
    """The trained network wrapped for sampling under its training objective."""
    if state.config.objective == "regression":
        return RegressionDenoiser(state.model)
    return NetworkDenoiser(state.model)
