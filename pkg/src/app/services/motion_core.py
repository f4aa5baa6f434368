"""Normalization, interaction masks and kinematic utilities on plain arrays."""

import numpy as np
from scipy.spatial.transform import Rotation

from app.models.configs import Stage
from app.models.errors import (
    InvalidMotionError,
    ShapeMismatchError,
)
from app.models.motion import (
    SIDES,
    UP_AXIS,
    HandInteractionMask,
    InteractionPair,
    MotionSequence,
    NormalizationTransform,
    Role,
    Skeleton,
)

DEFAULT_MASK_THRESHOLD = 0.10
DEFAULT_HEIGHT_EPS = 0.005
DEFAULT_SPEED_EPS = 0.002
GROUND_PERCENTILE = 2.0
ROTATION_TOLERANCE = 1e-6


def _wrists(positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """N x 2 x 3 wrist positions in (left, right) order."""
    return positions[:, [skeleton.wrist_index[side] for side in SIDES]]


def _localize(
    positions: np.ndarray, root: np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    """Body joints relative to ``root``, hand joints relative to their own wrist."""
    out = positions - root[:, None, :]
    wrists = _wrists(positions, skeleton)
    for side_index, side in enumerate(SIDES):
        hand = list(skeleton.hand_joint_indices[side])
        out[:, hand] = positions[:, hand] - wrists[:, side_index, None, :]
    return out


def _globalize(
    local: np.ndarray, root: np.ndarray, wrists: np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    out = local + root[:, None, :]
    for side_index, side in enumerate(SIDES):
        hand = list(skeleton.hand_joint_indices[side])
        out[:, hand] = local[:, hand] + wrists[:, side_index, None, :]
    return out


def normalize_pair(
    pair: InteractionPair,
) -> tuple[InteractionPair, NormalizationTransform]:
    """Centre both characters on the actor root and localize their hands.

    After normalization the actor root sits at the origin in every frame, body
    joints of both characters are relative to the actor root, and hand joints are
    relative to the owning character's wrist on the same side.
    """
    skeleton = pair.skeleton
    root = pair.actor.positions[:, 0].copy()
    wrist_offsets = {
        Role.ACTOR: _wrists(pair.actor.positions, skeleton),
        Role.REACTOR: _wrists(pair.reactor.positions, skeleton),
    }
    actor = pair.actor.with_positions(_localize(pair.actor.positions, root, skeleton))
    reactor = pair.reactor.with_positions(
        _localize(pair.reactor.positions, root, skeleton)
    )
    transform = NormalizationTransform(
        root_translation=root, wrist_offsets=wrist_offsets
    )
    return InteractionPair(actor, reactor, skeleton), transform


def denormalize_pair(
    pair: InteractionPair, transform: NormalizationTransform
) -> InteractionPair:
    """Exact inverse of ``normalize_pair``."""
    root = transform.root_translation
    if root.shape != (pair.num_frames, 3):
        raise ShapeMismatchError("root_translation", (pair.num_frames, 3), root.shape)
    sequences = []
    for sequence in (pair.actor, pair.reactor):
        wrists = transform.wrist_offsets[sequence.role]
        world = _globalize(sequence.positions, root, wrists, pair.skeleton)
        sequences.append(sequence.with_positions(world))
    return InteractionPair(sequences[0], sequences[1], pair.skeleton)


def normalize_actor(actor: MotionSequence) -> tuple[MotionSequence, np.ndarray]:
    """Normalize a lone actor sequence; returns it with its root trajectory."""
    root = actor.positions[:, 0].copy()
    return actor.with_positions(_localize(actor.positions, root, actor.skeleton)), root


def localize_with_root(
    positions: np.ndarray, root_translation: np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    """Normalize one character's world positions against a given root trajectory."""
    positions = np.asarray(positions, dtype=np.float64)
    return _localize(positions, root_translation, skeleton)


def denormalize_motion(
    positions: np.ndarray, root_translation: np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    """Map normalized positions back to world using their own wrists.

    Used for generated motion, whose wrists come from the synthesized body.
    """
    positions = np.asarray(positions, dtype=np.float64)
    wrists = _wrists(positions, skeleton) + root_translation[:, None, :]
    return _globalize(positions, root_translation, wrists, skeleton)


def hand_masks_from_bodies(
    actor_positions: np.ndarray,
    reactor_positions: np.ndarray,
    skeleton: Skeleton,
    threshold: float = DEFAULT_MASK_THRESHOLD,
) -> HandInteractionMask:
    """Hand masks from body joints given in one shared frame.

    Only body joints are read, so hand columns may hold anything.
    """
    if threshold <= 0.0:
        msg = f"mask threshold must be positive, got {threshold}"
        raise ValueError(msg)
    actor_positions = np.asarray(actor_positions, dtype=np.float64)
    reactor_positions = np.asarray(reactor_positions, dtype=np.float64)
    if actor_positions.shape != reactor_positions.shape:
        raise ShapeMismatchError(
            "reactor positions", actor_positions.shape, reactor_positions.shape
        )
    body = list(skeleton.body_joint_indices)
    num_frames = actor_positions.shape[0]

    def mask_for(own: np.ndarray, other: np.ndarray) -> np.ndarray:
        wrists = _wrists(own, skeleton)
        # N x 2 x J_B distances from each wrist to every body joint of the other
        offsets = wrists[:, :, None, :] - other[:, None, body, :]
        distances = np.linalg.norm(offsets, axis=-1)
        active = distances.min(axis=-1) < threshold
        mask = np.zeros((num_frames, skeleton.num_hand_joints))
        for side_index, side in enumerate(SIDES):
            mask[:, skeleton.hand_group_slice(side)] = active[:, side_index, None]
        return mask

    return HandInteractionMask(
        mask_actor=mask_for(actor_positions, reactor_positions),
        mask_reactor=mask_for(reactor_positions, actor_positions),
        threshold=threshold,
        hand_group_sizes=skeleton.hand_group_sizes,
    )


def compute_hand_masks(
    pair: InteractionPair, threshold: float = DEFAULT_MASK_THRESHOLD
) -> HandInteractionMask:
    """Mark each hand whose wrist is within ``threshold`` of the other's body.

    The pair must be in a common frame (world, or normalized by ``normalize_pair``).
    """
    return hand_masks_from_bodies(
        pair.actor.positions, pair.reactor.positions, pair.skeleton, threshold
    )


def detect_foot_contacts(
    sequence: MotionSequence | np.ndarray,
    height_eps: float = DEFAULT_HEIGHT_EPS,
    speed_eps: float = DEFAULT_SPEED_EPS,
    foot_joint_indices: tuple[int, ...] | None = None,
) -> np.ndarray:
    """N x F binary foot-ground contacts.

    The ground is the 2nd-percentile foot height over the sequence. A foot is in
    contact when it is within ``height_eps`` of the ground and moves at most
    ``speed_eps`` meters to the next frame (the last frame reuses the previous
    displacement).
    """
    if isinstance(sequence, MotionSequence):
        feet = sequence.positions[:, list(sequence.skeleton.foot_joint_indices)]
    else:
        if foot_joint_indices is None:
            msg = "foot_joint_indices is required for raw arrays"
            raise ValueError(msg)
        feet = np.asarray(sequence, dtype=np.float64)[:, list(foot_joint_indices)]
    if feet.shape[0] < 2:
        msg = f"foot contact detection needs N >= 2 frames, got {feet.shape[0]}"
        raise InvalidMotionError(msg)

    heights = feet[..., UP_AXIS]
    ground = np.percentile(heights, GROUND_PERCENTILE)
    displacement = np.linalg.norm(np.diff(feet, axis=0), axis=-1)
    displacement = np.concatenate([displacement, displacement[-1:]], axis=0)
    contact = (heights <= ground + height_eps) & (displacement <= speed_eps)
    return contact.astype(np.float64)


def bone_lengths(
    sequence: MotionSequence | np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    """N x (J - 1) distance of every non-root joint to its parent."""
    if isinstance(sequence, MotionSequence):
        positions = sequence.positions
    else:
        positions = np.asarray(sequence)
    children = list(skeleton.non_root_indices)
    parents = [skeleton.parent_index[j] for j in children]
    return np.linalg.norm(positions[:, children] - positions[:, parents], axis=-1)


def stage_columns(skeleton: Skeleton, stage: Stage) -> tuple[int, ...]:
    """Skeleton joints of one stage in column order.

    The joint stage holds the body columns followed by the hand columns.
    """
    if stage == "body":
        return skeleton.body_joint_indices
    if stage == "hands":
        return skeleton.hand_columns
    return (*skeleton.body_joint_indices, *skeleton.hand_columns)


def stage_bone_edges(
    skeleton: Skeleton, stage: Stage
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Bones inside one stage's columns as (child columns, parent columns).

    Hand joints hanging directly off a wrist get parent column -1: their
    wrist-relative position already is the bone vector.
    """
    columns = stage_columns(skeleton, stage)
    position = {joint: column for column, joint in enumerate(columns)}
    wrists = set(skeleton.wrist_index.values())
    hands = set(skeleton.hand_columns)
    children, parents = [], []
    for joint in columns:
        parent = skeleton.parent_index[joint]
        if joint in hands and parent in wrists:
            children.append(position[joint])
            parents.append(-1)
        elif parent in position:
            children.append(position[joint])
            parents.append(position[parent])
    return tuple(children), tuple(parents)


def _rotation_matrices(local_rotations: np.ndarray, num_joints: int) -> np.ndarray:
    rotations = np.asarray(local_rotations, dtype=np.float64)
    if rotations.shape == (num_joints, 4):
        norms = np.linalg.norm(rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > ROTATION_TOLERANCE):
            msg = "quaternions must be unit length"
            raise ValueError(msg)
        return Rotation.from_quat(rotations).as_matrix()
    if rotations.shape == (num_joints, 3, 3):
        gram = np.einsum("jki,jkl->jil", rotations, rotations)
        orthonormal = np.abs(gram - np.eye(3)).max() <= ROTATION_TOLERANCE
        if not orthonormal or np.any(np.linalg.det(rotations) <= 0.0):
            msg = "rotation matrices must be orthonormal with determinant +1"
            raise ValueError(msg)
        return rotations
    raise ShapeMismatchError(
        "local_rotations", f"({num_joints}, 4) or ({num_joints}, 3, 3)", rotations.shape
    )


def forward_kinematics(
    root_translation: np.ndarray, local_rotations: np.ndarray, skeleton: Skeleton
) -> np.ndarray:
    """J x 3 joint positions from a root translation and per-joint local rotations.

    ``local_rotations`` is J x 4 scalar-last unit quaternions or J x 3 x 3 rotation
    matrices. A joint's rotation orients the offsets of its children.
    """
    local = _rotation_matrices(local_rotations, skeleton.num_joints)
    global_rot = np.empty_like(local)
    positions = np.empty((skeleton.num_joints, 3))
    global_rot[0] = local[0]
    positions[0] = np.asarray(root_translation, dtype=np.float64)
    for joint in skeleton.non_root_indices:
        parent = skeleton.parent_index[joint]
        global_rot[joint] = global_rot[parent] @ local[joint]
        offset = global_rot[parent] @ skeleton.rest_offsets[joint]
        positions[joint] = positions[parent] + offset
    return positions
