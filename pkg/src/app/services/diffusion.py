"""Noise schedule, forward noising and the cascaded reverse sampler.

Step indices run from 0 to T: step 0 is clean data (alpha_bar = 1) and steps
1..T are the noising steps. The denoisers predict the clean sample directly;
the sampler turns that prediction into x_{t-1} with the Gaussian posterior.
"""

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import torch
from loguru import logger

from app.models.configs import DiffusionConfig, GuidanceConfig
from app.models.editing import EditConstraint
from app.models.errors import (
    ConfigError,
    NotFittedError,
    ScheduleError,
    ShapeMismatchError,
)
from app.models.motion import (
    SIDES,
    HandInteractionMask,
    MotionSequence,
    Role,
    Skeleton,
)
from app.services.autodiff import as_tensor
from app.services.denoiser import Denoiser
from app.services.motion_core import (
    DEFAULT_MASK_THRESHOLD,
    denormalize_motion,
    hand_masks_from_bodies,
    localize_with_root,
    normalize_actor,
    stage_columns,
)


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Per-step coefficients, every array indexed by the step 0..T."""

    num_steps: int
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    posterior_variance: np.ndarray = field(repr=False)
    posterior_coef_x0: np.ndarray = field(repr=False)
    posterior_coef_xt: np.ndarray = field(repr=False)

    @property
    def sqrt_alpha_bars(self) -> np.ndarray:
        return np.sqrt(self.alpha_bars)

    @property
    def sqrt_one_minus_alpha_bars(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bars)

    def check_step(self, t: int, *, allow_zero: bool = True) -> None:
        low = 0 if allow_zero else 1
        if not low <= t <= self.num_steps:
            msg = f"step {t} outside [{low}, {self.num_steps}]"
            raise ScheduleError(msg)

    def rows(self) -> list[dict[str, float]]:
        """One record per step, for dumps."""
        return [
            {
                "t": t,
                "beta": float(self.betas[t]),
                "alpha": float(self.alphas[t]),
                "alpha_bar": float(self.alpha_bars[t]),
                "posterior_variance": float(self.posterior_variance[t]),
                "posterior_coef_x0": float(self.posterior_coef_x0[t]),
                "posterior_coef_xt": float(self.posterior_coef_xt[t]),
            }
            for t in range(self.num_steps + 1)
        ]


def schedule_from_betas(betas: np.ndarray) -> DiffusionSchedule:
    """Build a schedule from the T betas of steps 1..T."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ShapeMismatchError("betas", ("T",), betas.shape)
    if np.any(betas < 0.0) or np.any(betas >= 1.0):
        msg = "every beta must lie in [0, 1)"
        raise ScheduleError(msg)
    betas = np.concatenate([[0.0], betas])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    previous = np.concatenate([[1.0], alpha_bars[:-1]])
    denominator = 1.0 - alpha_bars
    # step 0 has no posterior
    safe = np.where(denominator > 0.0, denominator, 1.0)
    coef_x0 = np.where(denominator > 0.0, betas * np.sqrt(previous) / safe, 0.0)
    coef_xt = np.where(
        denominator > 0.0, (1.0 - previous) * np.sqrt(alphas) / safe, 0.0
    )
    variance = np.where(denominator > 0.0, betas * (1.0 - previous) / safe, 0.0)
    # x_0 given x_1 is the prediction itself, exactly
    coef_x0[1] = 1.0
    for array in (betas, alphas, alpha_bars, variance, coef_x0, coef_xt):
        array.setflags(write=False)
    return DiffusionSchedule(
        num_steps=betas.size - 1,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_variance=variance,
        posterior_coef_x0=coef_x0,
        posterior_coef_xt=coef_xt,
    )


def make_schedule(
    num_steps: int, beta_start: float, beta_end: float
) -> DiffusionSchedule:
    """Betas linear from ``beta_start`` (step 1) to ``beta_end`` (step T)."""
    if num_steps < 1:
        msg = f"the schedule needs T >= 1 steps, got {num_steps}"
        raise ScheduleError(msg)
    if not 0.0 < beta_start <= beta_end < 1.0:
        msg = f"need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        raise ScheduleError(msg)
    return schedule_from_betas(np.linspace(beta_start, beta_end, num_steps))


def schedule_from_config(config: DiffusionConfig) -> DiffusionSchedule:
    return make_schedule(config.num_steps, config.beta_start, config.beta_end)


def _coefficient(
    values: np.ndarray, t: int | torch.Tensor, like: torch.Tensor
) -> torch.Tensor:
    """values[t] shaped to broadcast over ``like``, per sample for a batch of steps."""
    table = torch.as_tensor(values, dtype=like.dtype)
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        return table[t.long()].reshape(-1, *([1] * (like.ndim - 1)))
    return table[int(t)]


def q_sample(
    x0: torch.Tensor,
    t: int | torch.Tensor,
    noise: torch.Tensor,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise."""
    if noise.shape != x0.shape:
        raise ShapeMismatchError("noise", tuple(x0.shape), tuple(noise.shape))
    steps = torch.as_tensor(t)
    if torch.any(steps < 0) or torch.any(steps > schedule.num_steps):
        msg = f"step outside [0, {schedule.num_steps}]: {steps.tolist()}"
        raise ScheduleError(msg)
    return (
        _coefficient(schedule.sqrt_alpha_bars, t, x0) * x0
        + _coefficient(schedule.sqrt_one_minus_alpha_bars, t, x0) * noise
    )


def posterior_mean(
    x_t: torch.Tensor, x0_hat: torch.Tensor, t: int, schedule: DiffusionSchedule
) -> torch.Tensor:
    schedule.check_step(t, allow_zero=False)
    return (
        float(schedule.posterior_coef_x0[t]) * x0_hat
        + float(schedule.posterior_coef_xt[t]) * x_t
    )


def posterior_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    noise: torch.Tensor | None,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """Sample x_{t-1} from the posterior given the predicted clean sample.

    At t = 1, or without ``noise``, the posterior mean is returned.
    """
    if x0_hat.shape != x_t.shape:
        raise ShapeMismatchError(
            "predicted clean sample", tuple(x_t.shape), tuple(x0_hat.shape)
        )
    mean = posterior_mean(x_t, x0_hat, t, schedule)
    if t == 1 or noise is None:
        return mean
    return mean + float(np.sqrt(schedule.posterior_variance[t])) * noise


def arm_body_columns(
    skeleton: Skeleton, guidance: GuidanceConfig | None = None
) -> dict[str, list[int]]:
    """Body-stage columns of each side's arm chain."""
    chains = (
        guidance.arm_joints
        if guidance is not None and guidance.arm_joints is not None
        else skeleton.arm_chain_indices
    )
    column = {joint: c for c, joint in enumerate(skeleton.body_joint_indices)}
    missing = [j for side in SIDES for j in chains[side] if j not in column]
    if missing:
        msg = f"arm joints {missing} are not body joints"
        raise ConfigError(msg)
    return {side: [column[j] for j in chains[side]] for side in SIDES}


def _arm_terms(
    x0_body: torch.Tensor,
    actor_body: torch.Tensor,
    activity_actor: torch.Tensor,
    activity_reactor: torch.Tensor,
    columns: list[int],
    side_index: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    m_actor = activity_actor[..., side_index, None, None].to(x0_body.dtype)
    m_reactor = activity_reactor[..., side_index, None, None].to(x0_body.dtype)
    phi = actor_body[..., columns, :]
    phi_hat = x0_body[..., columns, :]
    return m_reactor, m_actor * phi - m_reactor * phi_hat, phi_hat


def arm_residual(
    x0_body: torch.Tensor,
    actor_body: torch.Tensor,
    activity_actor: torch.Tensor,
    activity_reactor: torch.Tensor,
    arm_columns: dict[str, list[int]],
) -> float:
    """Squared norm of the reactor-masked arm misalignment summed over both sides."""
    total = 0.0
    for side_index, side in enumerate(SIDES):
        m_reactor, gap, _ = _arm_terms(
            x0_body, actor_body, activity_actor, activity_reactor,
            arm_columns[side], side_index,
        )
        total += float(((m_reactor * gap) ** 2).sum())
    return total


def apply_guidance(
    x0_body: torch.Tensor,
    actor_body: torch.Tensor,
    activity_actor: torch.Tensor,
    activity_reactor: torch.Tensor,
    arm_columns: dict[str, list[int]],
    scale: float,
) -> torch.Tensor:
    """One gradient step on the masked arm alignment cost.

    The cost is sum ||M_A phi - M_R phi_hat||^2 over the arm joints of each side,
    with phi the actor arm and phi_hat the reactor arm; its gradient in phi_hat is
    -2 M_R (M_A phi - M_R phi_hat). ``activity_*`` are (..., N, 2) per-frame hand
    activities; an active hand switches on its whole arm chain. Only arm entries
    of the returned copy differ from ``x0_body``.
    """
    if scale < 0.0:
        msg = f"guidance scale must be non-negative, got {scale}"
        raise ValueError(msg)
    guided = x0_body.clone()
    if scale == 0.0:
        return guided
    for side_index, side in enumerate(SIDES):
        columns = arm_columns[side]
        m_reactor, gap, phi_hat = _arm_terms(
            x0_body, actor_body, activity_actor, activity_reactor, columns, side_index
        )
        guided[..., columns, :] = phi_hat + 2.0 * scale * m_reactor * gap
    return guided


def apply_edit_constraint(
    x_t: torch.Tensor,
    controlled: torch.Tensor,
    reference: torch.Tensor,
    t: int,
    schedule: DiffusionSchedule,
    frozen_noise: torch.Tensor,
) -> torch.Tensor:
    """Overwrite controlled (frame, joint) entries with the reference noised to step t.

    ``controlled`` is an (N, J) boolean mask and ``reference`` the (N, J, 3)
    normalized reference; at t = 0 the controlled entries equal the reference.
    """
    if controlled.shape != x_t.shape[-3:-1]:
        raise ShapeMismatchError(
            "edit mask", tuple(x_t.shape[-3:-1]), tuple(controlled.shape)
        )
    if not bool(controlled.any()):
        return x_t
    target = q_sample(reference, t, frozen_noise, schedule)
    return torch.where(controlled[..., None], target, x_t)


class StageDenoiser(Protocol):
    """Anything that predicts a stage's clean sample."""

    def __call__(
        self,
        x_t: torch.Tensor,
        t: int,
        condition: torch.Tensor,
        mask_reactor: torch.Tensor | None = None,
        mask_actor: torch.Tensor | None = None,
    ) -> torch.Tensor: ...


class NetworkDenoiser:
    """A trained denoiser network in inference mode."""

    def __init__(self, model: Denoiser, *, allow_unfitted: bool = False):
        if not model.fitted and not allow_unfitted:
            msg = f"the {model.stage} denoiser has not been trained"
            raise NotFittedError(msg)
        self.model = model

    @property
    def stage(self) -> str:
        return self.model.stage

    def __call__(self, x_t, t, condition, mask_reactor=None, mask_actor=None):
        self.model.eval()
        batch = x_t.shape[0]
        with torch.no_grad():
            steps = torch.full((batch,), int(t), dtype=torch.long)
            return self.model(x_t, steps, condition, mask_reactor, mask_actor)


class RegressionDenoiser(NetworkDenoiser):
    """A network trained without diffusion, mapping the actor to the reactor.

    The noisy sample and the step are ignored; the network sees a zero sample at
    its last step, as in training. At t = 1 the reverse loop returns the
    prediction itself, so any schedule yields the regression output.
    """

    def __call__(self, x_t, t, condition, mask_reactor=None, mask_actor=None):
        return super().__call__(
            torch.zeros_like(x_t),
            self.model.num_steps,
            condition,
            mask_reactor,
            mask_actor,
        )


class OracleDenoiser:
    """Returns a fixed clean sample (plus an optional offset) whatever the input."""

    def __init__(self, target: torch.Tensor, offset: torch.Tensor | None = None):
        self.target = target if offset is None else target + offset

    def __call__(self, x_t, t, condition, mask_reactor=None, mask_actor=None):
        return self.target.expand_as(x_t).clone()


StepCallback = Callable[[str, int, torch.Tensor], None]


@dataclass
class StageRun:
    """Per-stage inputs of the reverse loop."""

    denoiser: StageDenoiser
    condition: torch.Tensor
    mask_reactor: torch.Tensor | None = None
    mask_actor: torch.Tensor | None = None
    controlled: torch.Tensor | None = None
    reference: torch.Tensor | None = None


def reverse_loop(
    name: str,
    run: StageRun,
    schedule: DiffusionSchedule,
    generator: torch.Generator,
    *,
    deterministic: bool = False,
    guide: Callable[[torch.Tensor], torch.Tensor] | None = None,
    guide_on: str = "prediction",
    callback: StepCallback | None = None,
) -> torch.Tensor:
    """Iterate t = T..1 and return the final x_0 of one stage."""
    shape = run.condition.shape
    dtype = run.condition.dtype
    x_t = torch.randn(shape, generator=generator, dtype=dtype)
    edit = run.controlled is not None and bool(run.controlled.any())
    frozen_noise = None
    if edit:
        frozen_noise = torch.randn(shape[-3:], generator=generator, dtype=dtype)

    for t in range(schedule.num_steps, 0, -1):
        if edit:
            x_t = apply_edit_constraint(
                x_t, run.controlled, run.reference, t, schedule, frozen_noise
            )
        x0_hat = run.denoiser(x_t, t, run.condition, run.mask_reactor, run.mask_actor)
        if guide is not None and guide_on == "prediction":
            x0_hat = guide(x0_hat)
        if callback is not None:
            callback(name, t, x0_hat)
        noise = None
        if not deterministic and t > 1:
            noise = torch.randn(shape, generator=generator, dtype=dtype)
        x_t = posterior_step(x_t, x0_hat, t, noise, schedule)
        if guide is not None and guide_on == "sample":
            x_t = guide(x_t)
    if edit:
        x_t = apply_edit_constraint(
            x_t, run.controlled, run.reference, 0, schedule, frozen_noise
        )
    logger.debug(f"Finished {name} reverse loop over {schedule.num_steps} steps")
    return x_t


@dataclass(frozen=True, eq=False)
class ReactionSample:
    """Generated reactor motion: world positions plus the normalized stages."""

    positions: np.ndarray
    normalized: np.ndarray
    masks: list[HandInteractionMask]


def _activity(
    masks: list[HandInteractionMask], dtype: torch.dtype
) -> tuple[torch.Tensor, torch.Tensor]:
    actor, reactor = zip(*(m.side_activity() for m in masks), strict=True)
    return as_tensor(np.stack(actor), dtype), as_tensor(np.stack(reactor), dtype)


def _assemble(
    body: np.ndarray, hands: np.ndarray | None, skeleton: Skeleton
) -> np.ndarray:
    """Full (B, N, J, 3) normalized positions from stage outputs.

    Without hands, each hand sits at its rest offsets from the wrist.
    """
    batch, num_frames = body.shape[:2]
    full = np.zeros((batch, num_frames, skeleton.num_joints, 3))
    full[:, :, list(skeleton.body_joint_indices)] = body
    if hands is None:
        rest = skeleton.rest_positions()
        for side in SIDES:
            joints = list(skeleton.hand_joint_indices[side])
            full[:, :, joints] = rest[joints] - rest[skeleton.wrist_index[side]]
    else:
        full[:, :, list(skeleton.hand_columns)] = hands
    return full


def _masks_for(
    actor_norm: np.ndarray,
    reactor_norm: np.ndarray,
    skeleton: Skeleton,
    threshold: float,
) -> list[HandInteractionMask]:
    return [
        hand_masks_from_bodies(actor_norm[b], reactor_norm[b], skeleton, threshold)
        for b in range(actor_norm.shape[0])
    ]


def sample_normalized(
    actor_norm: np.ndarray,
    skeleton: Skeleton,
    body_denoiser: StageDenoiser,
    hand_denoiser: StageDenoiser | None,
    schedule: DiffusionSchedule,
    *,
    generator: torch.Generator,
    guidance: GuidanceConfig | None = None,
    deterministic: bool = False,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    edit_reference: np.ndarray | None = None,
    edit: EditConstraint | None = None,
    callback: StepCallback | None = None,
    single_stage: bool = False,
) -> tuple[np.ndarray, list[HandInteractionMask]]:
    """Cascaded sampling in the actor-root frame.

    ``actor_norm`` is (B, N, J, 3) normalized actor motion. ``edit_reference`` is
    the constraint reference already localized to the same frame. Returns the
    (B, N, J, 3) normalized reactor and the hand masks computed from its body.

    With ``single_stage`` the body denoiser is a joint denoiser over body and
    hand columns, sampled in one reverse loop; there is no hand denoiser.
    """
    actor_norm = np.asarray(actor_norm, dtype=np.float64)
    if actor_norm.ndim != 4 or actor_norm.shape[2:] != (skeleton.num_joints, 3):
        raise ShapeMismatchError(
            "actor", ("B", "N", skeleton.num_joints, 3), actor_norm.shape
        )
    if single_stage and hand_denoiser is not None:
        msg = "single-stage sampling takes no separate hand denoiser"
        raise ConfigError(msg)
    dtype = torch.get_default_dtype()
    num_body = skeleton.num_body_joints
    actor_body = as_tensor(actor_norm[:, :, list(skeleton.body_joint_indices)], dtype)

    def stage_edit(
        columns: tuple[int, ...],
    ) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        if edit is None or edit_reference is None:
            return None, None
        if edit.num_frames != actor_norm.shape[1]:
            raise ShapeMismatchError(
                "edit reference frames", actor_norm.shape[1], edit.num_frames
            )
        controlled = torch.as_tensor(edit.controlled_mask(columns))
        return controlled, as_tensor(edit_reference[:, list(columns)], dtype)

    guide = None
    guide_on = "prediction"
    if guidance is not None and guidance.enabled and guidance.scale > 0.0:
        columns = arm_body_columns(skeleton, guidance)
        guide_on = guidance.placement

        def guide(x0: torch.Tensor) -> torch.Tensor:
            # the joint stage carries its hands after the body columns
            x0_body = x0[..., :num_body, :]
            candidate = _assemble(x0_body.detach().cpu().numpy(), None, skeleton)
            activity_actor, activity_reactor = _activity(
                _masks_for(actor_norm, candidate, skeleton, mask_threshold), dtype
            )
            guided = apply_guidance(
                x0_body,
                actor_body,
                activity_actor,
                activity_reactor,
                columns,
                guidance.scale,
            )
            return torch.cat([guided, x0[..., num_body:, :]], dim=-2)

    first_stage = "joint" if single_stage else "body"
    first_columns = stage_columns(skeleton, first_stage)
    controlled, reference = stage_edit(first_columns)
    first = reverse_loop(
        first_stage,
        StageRun(
            body_denoiser,
            as_tensor(actor_norm[:, :, list(first_columns)], dtype),
            controlled=controlled,
            reference=reference,
        ),
        schedule,
        generator,
        deterministic=deterministic,
        guide=guide,
        guide_on=guide_on,
        callback=callback,
    )
    first_np = first.detach().cpu().numpy().astype(np.float64)
    body_np = first_np[:, :, :num_body]
    body_full = _assemble(body_np, None, skeleton)
    masks = _masks_for(actor_norm, body_full, skeleton, mask_threshold)

    hands_np = None
    hand_cols = list(skeleton.hand_columns)
    if single_stage and hand_cols:
        hands_np = first_np[:, :, num_body:]
    elif hand_denoiser is not None and hand_cols:
        mask_reactor = as_tensor(np.stack([m.mask_reactor for m in masks]), dtype)
        mask_actor = as_tensor(np.stack([m.mask_actor for m in masks]), dtype)
        controlled, reference = stage_edit(skeleton.hand_columns)
        hands = reverse_loop(
            "hands",
            StageRun(
                hand_denoiser,
                as_tensor(actor_norm[:, :, hand_cols], dtype),
                mask_reactor,
                mask_actor,
                controlled,
                reference,
            ),
            schedule,
            generator,
            deterministic=deterministic,
            callback=callback,
        )
        hands_np = hands.detach().cpu().numpy().astype(np.float64)
    return _assemble(body_np, hands_np, skeleton), masks


def sample_reactive(
    actor: MotionSequence,
    body_denoiser: StageDenoiser,
    hand_denoiser: StageDenoiser | None,
    schedule: DiffusionSchedule,
    *,
    seed: int = 0,
    guidance: GuidanceConfig | None = None,
    edit: EditConstraint | None = None,
    deterministic: bool = False,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    callback: StepCallback | None = None,
    single_stage: bool = False,
) -> ReactionSample:
    """Generate the reactor motion for one actor sequence, in world coordinates.

    The body is synthesized first; the hand masks are then computed between the
    actor body and the synthesized reactor body and condition the hand stage.
    With no hand denoiser the hands keep their rest shape at the synthesized
    wrists. ``single_stage`` samples body and hands with one joint denoiser.
    """
    skeleton = actor.skeleton
    actor_norm, root = normalize_actor(actor)
    edit_reference = None
    if edit is not None:
        if edit.reference.shape != actor.positions.shape:
            raise ShapeMismatchError(
                "edit reference", actor.positions.shape, edit.reference.shape
            )
        edit_reference = localize_with_root(edit.reference, root, skeleton)
    generator = torch.Generator().manual_seed(seed)
    normalized, masks = sample_normalized(
        actor_norm.positions[None],
        skeleton,
        body_denoiser,
        hand_denoiser,
        schedule,
        generator=generator,
        guidance=guidance,
        deterministic=deterministic,
        mask_threshold=mask_threshold,
        edit_reference=edit_reference,
        edit=edit,
        callback=callback,
        single_stage=single_stage,
    )
    world = denormalize_motion(normalized[0], root, skeleton)
    if edit is not None:
        # controlled entries go back through the reference's own root and wrists
        restored = denormalize_motion(edit_reference, root, skeleton)
        controlled = edit.controlled_mask(tuple(range(skeleton.num_joints)))
        world = np.where(controlled[..., None], restored, world)
    if single_stage:
        stages = "joint"
    else:
        stages = "body + hands" if hand_denoiser is not None else "body only"
    logger.info(f"Sampled {actor.num_frames} reactor frames ({stages})")
    return ReactionSample(
        positions=world,
        normalized=normalized[0],
        masks=masks,
    )


def reactor_sequence(sample: ReactionSample, actor: MotionSequence) -> MotionSequence:
    return MotionSequence(actor.fps, sample.positions, Role.REACTOR, actor.skeleton)


def _window_constraint(
    edit: EditConstraint | None, start: int, stop: int
) -> EditConstraint | None:
    if edit is None:
        return None
    return EditConstraint(
        kind=edit.kind,
        reference=edit.reference[start:stop],
        joint_indices=edit.joint_indices,
        frame_indices=tuple(f - start for f in edit.frame_indices if start <= f < stop),
    )


def window_bounds(num_frames: int, window_length: int) -> list[tuple[int, int]]:
    """Consecutive windows covering ``num_frames``.

    A trailing piece shorter than two frames is replaced by a full window that
    overlaps its predecessor.
    """
    if window_length < 2:
        msg = f"window length must be at least 2, got {window_length}"
        raise ConfigError(msg)
    starts = list(range(0, num_frames, window_length))
    if len(starts) > 1 and num_frames - starts[-1] < 2:
        starts[-1] = num_frames - window_length
    return [(start, min(start + window_length, num_frames)) for start in starts]


def sample_sequence(
    actor: MotionSequence,
    body_denoiser: StageDenoiser,
    hand_denoiser: StageDenoiser | None,
    schedule: DiffusionSchedule,
    *,
    window_length: int,
    seed: int = 0,
    guidance: GuidanceConfig | None = None,
    edit: EditConstraint | None = None,
    deterministic: bool = False,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    single_stage: bool = False,
) -> ReactionSample:
    """``sample_reactive`` over an actor of any length, one window at a time.

    Window ``k`` is sampled with seed ``seed + k`` and normalized on its own
    actor root. ``normalized`` holds each window in its own frame.
    """
    if edit is not None and edit.reference.shape != actor.positions.shape:
        raise ShapeMismatchError(
            "edit reference", actor.positions.shape, edit.reference.shape
        )
    positions = np.zeros_like(actor.positions)
    normalized = np.zeros_like(actor.positions)
    mask_actor = np.zeros((actor.num_frames, actor.skeleton.num_hand_joints))
    mask_reactor = np.zeros_like(mask_actor)
    filled = 0
    for k, (start, stop) in enumerate(window_bounds(actor.num_frames, window_length)):
        window = actor.with_positions(actor.positions[start:stop])
        sample = sample_reactive(
            window,
            body_denoiser,
            hand_denoiser,
            schedule,
            seed=seed + k,
            guidance=guidance,
            edit=_window_constraint(edit, start, stop),
            deterministic=deterministic,
            mask_threshold=mask_threshold,
            single_stage=single_stage,
        )
        keep = slice(filled - start, None)
        positions[filled:stop] = sample.positions[keep]
        normalized[filled:stop] = sample.normalized[keep]
        mask_actor[filled:stop] = sample.masks[0].mask_actor[keep]
        mask_reactor[filled:stop] = sample.masks[0].mask_reactor[keep]
        filled = stop
    masks = HandInteractionMask(
        mask_actor=mask_actor,
        mask_reactor=mask_reactor,
        threshold=mask_threshold,
        hand_group_sizes=actor.skeleton.hand_group_sizes,
    )
    return ReactionSample(positions=positions, normalized=normalized, masks=[masks])
