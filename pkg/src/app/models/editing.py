"""Constraints for masked-denoising edits of a reactor motion."""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from app.models.errors import InvalidMotionError, ShapeMismatchError

EditKind = Literal["pose_completion", "inbetweening"]


@dataclass(frozen=True, eq=False)
class EditConstraint:
    """Entries of the reactor motion that sampling must reproduce exactly.

    Pose completion controls ``joint_indices`` over all frames; in-betweening
    controls every joint at ``frame_indices``. ``reference`` is an N x J x 3
    reactor motion in world coordinates supplying the controlled values.
    """

    kind: EditKind
    reference: np.ndarray = field(repr=False)
    joint_indices: tuple[int, ...] = ()
    frame_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        reference = np.array(self.reference, dtype=np.float64, copy=True)
        reference.setflags(write=False)
        object.__setattr__(self, "reference", reference)
        if reference.ndim != 3 or reference.shape[-1] != 3:
            raise ShapeMismatchError("edit reference", ("N", "J", 3), reference.shape)
        if not np.all(np.isfinite(reference)):
            msg = "edit reference values must be finite"
            raise InvalidMotionError(msg)
        if self.kind not in ("pose_completion", "inbetweening"):
            msg = f"unknown edit kind '{self.kind}'"
            raise InvalidMotionError(msg)
        num_frames, num_joints = reference.shape[:2]
        for name, indices, bound in (
            ("joint", self.joint_indices, num_joints),
            ("frame", self.frame_indices, num_frames),
        ):
            bad = [i for i in indices if not 0 <= i < bound]
            if bad:
                msg = f"{name} indices {bad} out of range [0, {bound})"
                raise InvalidMotionError(msg)

    @property
    def num_frames(self) -> int:
        return self.reference.shape[0]

    def controlled_mask(self, columns: tuple[int, ...]) -> np.ndarray:
        """N x len(columns) boolean mask of controlled entries for one stage.

        ``columns`` lists the skeleton joints of the stage in column order.
        """
        mask = np.zeros((self.num_frames, len(columns)), dtype=bool)
        if self.kind == "pose_completion":
            controlled = set(self.joint_indices)
            picked = [c for c, joint in enumerate(columns) if joint in controlled]
            mask[:, picked] = True
        else:
            mask[list(self.frame_indices), :] = True
        return mask

    def is_empty(self) -> bool:
        if self.kind == "pose_completion":
            return not self.joint_indices
        return not self.frame_indices
