"""Training objectives on (B, N, J, 3) or (N, J, 3) motion tensors.

Batched inputs are reduced per sample and then averaged over the batch.
"""

from dataclasses import dataclass, fields

import torch

from app.models.configs import LossWeights
from app.models.errors import InvalidMotionError, ShapeMismatchError


def _batched(*tensors: torch.Tensor) -> list[torch.Tensor]:
    shape = tensors[0].shape
    for tensor in tensors[1:]:
        if tensor.shape != shape:
            raise ShapeMismatchError("motion", tuple(shape), tuple(tensor.shape))
    if len(shape) not in (3, 4) or shape[-1] != 3:
        raise ShapeMismatchError("motion", ("B", "N", "J", 3), tuple(shape))
    return [t[None] if t.ndim == 3 else t for t in tensors]


def _require_frames(x: torch.Tensor, minimum: int, what: str) -> None:
    if x.shape[1] < minimum:
        msg = f"{what} needs N >= {minimum} frames, got {x.shape[1]}"
        raise InvalidMotionError(msg)


def recon_loss(
    x_gt: torch.Tensor, x_pred: torch.Tensor, *, squared: bool = False
) -> torch.Tensor:
    """L2 norm of the difference over all entries of a sample (squared if asked)."""
    x_gt, x_pred = _batched(x_gt, x_pred)
    diff = (x_gt - x_pred).flatten(1)
    if squared:
        return diff.pow(2).sum(dim=1).mean()
    return torch.linalg.vector_norm(diff, dim=1).mean()


def reaction_loss(
    x_gt: torch.Tensor, x_pred: torch.Tensor, actor: torch.Tensor
) -> torch.Tensor:
    """Distance-weighted deviation of reactor-to-actor joint distances.

    Joint j of the reactor is paired with joint j of the actor. Each deviation is
    weighted by exp(-d) of the ground-truth distance, then averaged over frames
    and joints.
    """
    x_gt, x_pred, actor = _batched(x_gt, x_pred, actor)
    d_gt = torch.linalg.vector_norm(x_gt - actor, dim=-1)
    d_pred = torch.linalg.vector_norm(x_pred - actor, dim=-1)
    return (torch.exp(-d_gt) * (d_gt - d_pred).abs()).mean(dim=(1, 2)).mean()


def velocity_loss(x_gt: torch.Tensor, x_pred: torch.Tensor) -> torch.Tensor:
    x_gt, x_pred = _batched(x_gt, x_pred)
    _require_frames(x_gt, 2, "the velocity loss")
    gap = x_gt.diff(dim=1) - x_pred.diff(dim=1)
    return (gap.pow(2).sum(dim=(1, 2, 3)) / (x_gt.shape[1] - 1)).mean()


def acceleration_loss(x_gt: torch.Tensor, x_pred: torch.Tensor) -> torch.Tensor:
    x_gt, x_pred = _batched(x_gt, x_pred)
    _require_frames(x_gt, 3, "the acceleration loss")
    gap = x_gt.diff(n=2, dim=1) - x_pred.diff(n=2, dim=1)
    return (gap.pow(2).sum(dim=(1, 2, 3)) / (x_gt.shape[1] - 2)).mean()


def _bones(x: torch.Tensor, children: list[int], parents: list[int]) -> torch.Tensor:
    child = x[:, :, children]
    parent = torch.stack(
        [x[:, :, p] if p >= 0 else torch.zeros_like(x[:, :, 0]) for p in parents], dim=2
    )
    return torch.linalg.vector_norm(child - parent, dim=-1)


def bone_loss(
    x_gt: torch.Tensor,
    x_pred: torch.Tensor,
    edges: tuple[tuple[int, ...], tuple[int, ...]],
) -> torch.Tensor:
    """Squared difference of bone lengths summed over frames and bones.

    ``edges`` are (child columns, parent columns); a parent of -1 means the child
    position is already the bone vector.
    """
    x_gt, x_pred = _batched(x_gt, x_pred)
    children, parents = (list(e) for e in edges)
    if not children:
        return x_pred.sum() * 0.0
    gap = _bones(x_gt, children, parents) - _bones(x_pred, children, parents)
    return gap.pow(2).sum(dim=(1, 2)).mean()


def foot_loss(
    x_pred: torch.Tensor, foot_contacts: torch.Tensor, foot_columns: list[int]
) -> torch.Tensor:
    """Squared foot displacement on contact frames, divided by N - 1."""
    (x_pred,) = _batched(x_pred)
    _require_frames(x_pred, 2, "the foot loss")
    if not foot_columns:
        return x_pred.sum() * 0.0
    contacts = foot_contacts[None] if foot_contacts.ndim == 2 else foot_contacts
    expected = (x_pred.shape[0], x_pred.shape[1], len(foot_columns))
    if tuple(contacts.shape) != expected:
        raise ShapeMismatchError("foot contacts", expected, tuple(contacts.shape))
    step = x_pred[:, :, foot_columns].diff(dim=1) * contacts[:, :-1, :, None]
    return (step.pow(2).sum(dim=(1, 2, 3)) / (x_pred.shape[1] - 1)).mean()


@dataclass
class LossComponents:
    """Unweighted loss terms of one prediction."""

    recon: torch.Tensor
    reaction: torch.Tensor
    velocity: torch.Tensor
    acceleration: torch.Tensor
    bone: torch.Tensor
    foot: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def kinematic_losses(
    x_gt: torch.Tensor,
    x_pred: torch.Tensor,
    edges: tuple[tuple[int, ...], tuple[int, ...]],
    foot_contacts: torch.Tensor | None,
    foot_columns: list[int],
) -> dict[str, torch.Tensor]:
    """Velocity, acceleration, bone-length and foot-sliding terms."""
    if foot_contacts is None:
        foot = x_pred.sum() * 0.0
    else:
        foot = foot_loss(x_pred, foot_contacts, foot_columns)
    return {
        "velocity": velocity_loss(x_gt, x_pred),
        "acceleration": acceleration_loss(x_gt, x_pred),
        "bone": bone_loss(x_gt, x_pred, edges),
        "foot": foot,
    }


def total_loss(
    components: LossComponents, weights: LossWeights, epoch: int
) -> torch.Tensor:
    """Weighted sum; the foot term counts from ``foot_loss_start_epoch`` on."""
    foot_weight = weights.foot if epoch >= weights.foot_loss_start_epoch else 0.0
    kinematic = (
        weights.velocity * components.velocity
        + weights.acceleration * components.acceleration
        + weights.bone * components.bone
        + foot_weight * components.foot
    )
    return (
        weights.recon * components.recon
        + weights.reaction * components.reaction
        + weights.kinematic * kinematic
    )
