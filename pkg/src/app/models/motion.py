"""Skeleton and motion-sequence data model.

Positions are stored in meters with z up. Joints are listed parent-first, so a
joint's parent always has a smaller index than the joint itself.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from app.models.errors import (
    InvalidMotionError,
    ShapeMismatchError,
    SkeletonMismatchError,
)

ROOT_PARENT = -1
SIDES = ("left", "right")
UP_AXIS = 2


class Role(str, Enum):
    """Which character of an interaction a sequence belongs to."""

    ACTOR = "actor"
    REACTOR = "reactor"


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Kinematic tree shared by the actor and the reactor.

    Attributes:
        name: Preset name, or "custom"
        joint_names: One identifier per joint
        parent_index: Parent per joint, ``ROOT_PARENT`` for the root
        body_joint_indices: The J_B body joints
        hand_joint_indices: Hand joints per side, in skeleton order
        wrist_index: Wrist joint per side
        arm_chain_indices: Shoulder, elbow, wrist per side
        foot_joint_indices: Joints tested for ground contact
        rest_offsets: J x 3 offset of each joint from its parent (root row is zero)
    """

    name: str
    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    body_joint_indices: tuple[int, ...]
    hand_joint_indices: Mapping[str, tuple[int, ...]]
    wrist_index: Mapping[str, int]
    arm_chain_indices: Mapping[str, tuple[int, ...]]
    foot_joint_indices: tuple[int, ...]
    rest_offsets: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rest_offsets", _frozen(self.rest_offsets))
        self._validate()

    def _validate(self) -> None:
        num = len(self.joint_names)
        if len(self.parent_index) != num:
            msg = f"{num} joint names but {len(self.parent_index)} parents"
            raise SkeletonMismatchError(msg)
        if self.rest_offsets.shape != (num, 3):
            raise ShapeMismatchError("rest_offsets", (num, 3), self.rest_offsets.shape)

        roots = [j for j, p in enumerate(self.parent_index) if p == ROOT_PARENT]
        if roots != [0]:
            msg = f"skeleton must have exactly one root at index 0, found {roots}"
            raise SkeletonMismatchError(msg)
        for joint, parent in enumerate(self.parent_index[1:], start=1):
            if not 0 <= parent < joint:
                msg = f"joint {joint} has parent {parent}; joints must be parent-first"
                raise SkeletonMismatchError(msg)

        body = set(self.body_joint_indices)
        hands = [j for side in SIDES for j in self.hand_joint_indices[side]]
        if (
            body & set(hands)
            or len(body) + len(hands) != num
            or body | set(hands) != set(range(num))
        ):
            msg = "body and hand joint sets must be disjoint and cover all joints"
            raise SkeletonMismatchError(msg)

        for side in SIDES:
            wrist = self.wrist_index[side]
            if wrist not in body:
                msg = f"{side} wrist {wrist} is not a body joint"
                raise SkeletonMismatchError(msg)
            chain = self.arm_chain_indices[side]
            if len(chain) == 0 or chain[-1] != wrist or not set(chain) <= body:
                msg = f"{side} arm chain must be body joints ending at the wrist"
                raise SkeletonMismatchError(msg)
            for joint in self.hand_joint_indices[side]:
                if wrist not in self.ancestors(joint):
                    name = self.joint_names[joint]
                    msg = f"hand joint {name} is not below the {side} wrist"
                    raise SkeletonMismatchError(msg)

        if not set(self.foot_joint_indices) <= body:
            msg = "foot joints must be body joints"
            raise SkeletonMismatchError(msg)
        if np.any(self.rest_bone_lengths <= 0.0):
            msg = "rest bone lengths must be strictly positive"
            raise SkeletonMismatchError(msg)

    def ancestors(self, joint: int) -> list[int]:
        """Return the ancestor chain of a joint, nearest first."""
        chain = []
        parent = self.parent_index[joint]
        while parent != ROOT_PARENT:
            chain.append(parent)
            parent = self.parent_index[parent]
        return chain

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def num_body_joints(self) -> int:
        return len(self.body_joint_indices)

    @property
    def num_hand_joints(self) -> int:
        return sum(len(self.hand_joint_indices[side]) for side in SIDES)

    @property
    def hand_columns(self) -> tuple[int, ...]:
        """Hand joints in mask-column order: left group, then right group."""
        return tuple(j for side in SIDES for j in self.hand_joint_indices[side])

    @property
    def hand_group_sizes(self) -> tuple[int, int]:
        left, right = (len(self.hand_joint_indices[side]) for side in SIDES)
        return left, right

    def hand_group_slice(self, side: str) -> slice:
        """Columns of one hand inside an N x J_H array."""
        left = len(self.hand_joint_indices["left"])
        if side == "left":
            return slice(0, left)
        return slice(left, left + len(self.hand_joint_indices["right"]))

    @property
    def non_root_indices(self) -> tuple[int, ...]:
        return tuple(range(1, self.num_joints))

    @cached_property
    def rest_bone_lengths(self) -> np.ndarray:
        """Length of every non-root bone, in joint order."""
        return np.linalg.norm(self.rest_offsets[1:], axis=-1)

    def rest_positions(self) -> np.ndarray:
        """Joint positions of the rest pose with the root at the origin."""
        positions = np.zeros((self.num_joints, 3))
        for joint in self.non_root_indices:
            parent = self.parent_index[joint]
            positions[joint] = positions[parent] + self.rest_offsets[joint]
        return positions

    def index_of(self, name: str) -> int:
        return self.joint_names.index(name)

    def same_as(self, other: "Skeleton") -> bool:
        """Structural equality: names, parents and rest offsets."""
        return (
            self.joint_names == other.joint_names
            and self.parent_index == other.parent_index
            and np.allclose(self.rest_offsets, other.rest_offsets, rtol=0.0, atol=1e-12)
        )

    def require_same(self, other: "Skeleton") -> None:
        if not self.same_as(other):
            msg = f"skeleton '{self.name}' does not match skeleton '{other.name}'"
            raise SkeletonMismatchError(msg)


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """N frames of J joint positions for one character."""

    fps: float
    positions: np.ndarray = field(repr=False)
    role: Role
    skeleton: Skeleton = field(repr=False)

    def __post_init__(self) -> None:
        positions = _frozen(self.positions)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "role", Role(self.role))
        if positions.ndim != 3 or positions.shape[1:] != (self.skeleton.num_joints, 3):
            raise ShapeMismatchError(
                "positions", ("N", self.skeleton.num_joints, 3), positions.shape
            )
        if positions.shape[0] < 2:
            msg = f"a motion sequence needs N >= 2 frames, got N = {positions.shape[0]}"
            raise InvalidMotionError(msg)
        if not np.all(np.isfinite(positions)):
            msg = "motion positions must be finite"
            raise InvalidMotionError(msg)
        if not self.fps > 0:
            msg = f"fps must be positive, got {self.fps}"
            raise InvalidMotionError(msg)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def body(self) -> np.ndarray:
        return self.positions[:, list(self.skeleton.body_joint_indices)]

    @property
    def hands(self) -> np.ndarray:
        return self.positions[:, list(self.skeleton.hand_columns)]

    def with_positions(self, positions: np.ndarray) -> "MotionSequence":
        return MotionSequence(self.fps, positions, self.role, self.skeleton)


@dataclass(frozen=True, eq=False)
class InteractionPair:
    """Frame-aligned actor and reactor motion over one skeleton."""

    actor: MotionSequence
    reactor: MotionSequence
    skeleton: Skeleton = field(repr=False)

    def __post_init__(self) -> None:
        self.skeleton.require_same(self.actor.skeleton)
        self.skeleton.require_same(self.reactor.skeleton)
        if self.actor.role is not Role.ACTOR or self.reactor.role is not Role.REACTOR:
            msg = "an interaction pair needs one actor and one reactor sequence"
            raise InvalidMotionError(msg)
        if self.actor.num_frames != self.reactor.num_frames:
            raise ShapeMismatchError(
                "reactor frames", self.actor.num_frames, self.reactor.num_frames
            )
        if self.actor.fps != self.reactor.fps:
            msg = f"fps differ: actor {self.actor.fps}, reactor {self.reactor.fps}"
            raise InvalidMotionError(msg)

    @property
    def num_frames(self) -> int:
        return self.actor.num_frames

    @property
    def fps(self) -> float:
        return self.actor.fps


@dataclass(frozen=True, eq=False)
class NormalizationTransform:
    """What ``normalize_pair`` removed, kept for exact inversion.

    Attributes:
        root_translation: N x 3 actor-root position per frame
        wrist_offsets: Per role, N x 2 x 3 world wrist positions (left, right)
    """

    root_translation: np.ndarray = field(repr=False)
    wrist_offsets: Mapping[Role, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "root_translation", _frozen(self.root_translation))
        object.__setattr__(
            self,
            "wrist_offsets",
            {Role(role): _frozen(value) for role, value in self.wrist_offsets.items()},
        )


@dataclass(frozen=True, eq=False)
class HandInteractionMask:
    """Binary N x J_H masks marking interacting hands of each character."""

    mask_actor: np.ndarray = field(repr=False)
    mask_reactor: np.ndarray = field(repr=False)
    threshold: float
    hand_group_sizes: tuple[int, int]

    def __post_init__(self) -> None:
        left, right = self.hand_group_sizes
        for name in ("mask_actor", "mask_reactor"):
            mask = _frozen(getattr(self, name))
            object.__setattr__(self, name, mask)
            if mask.ndim != 2 or mask.shape[1] != left + right:
                raise ShapeMismatchError(name, ("N", left + right), mask.shape)
            if not np.all((mask == 0.0) | (mask == 1.0)):
                msg = f"{name} entries must be 0 or 1"
                raise InvalidMotionError(msg)
            for group in (mask[:, :left], mask[:, left:]):
                if np.any(group != group[:, :1]):
                    msg = f"{name} must be constant within each hand"
                    raise InvalidMotionError(msg)
        if self.mask_actor.shape != self.mask_reactor.shape:
            raise ShapeMismatchError(
                "mask_reactor", self.mask_actor.shape, self.mask_reactor.shape
            )

    def side_activity(self) -> tuple[np.ndarray, np.ndarray]:
        """OR-reduce each mask to N x 2 (left, right) hand activity."""
        left = self.hand_group_sizes[0]

        def reduce(mask: np.ndarray) -> np.ndarray:
            return np.stack([mask[:, :left].max(axis=1), mask[:, left:].max(axis=1)], 1)

        return reduce(self.mask_actor), reduce(self.mask_reactor)


def build_skeleton(
    name: str,
    joints: Sequence[tuple[str, str | None, tuple[float, float, float], str]],
    *,
    foot_joints: Sequence[str],
) -> Skeleton:
    """Build a skeleton from (name, parent, offset, group) rows.

    ``group`` is "body", "left" or "right". Arm chains are the shoulder, elbow and
    wrist named ``{l,r}_shoulder``, ``{l,r}_elbow``, ``{l,r}_wrist``.
    """
    names = tuple(row[0] for row in joints)
    parents = tuple(
        ROOT_PARENT if row[1] is None else names.index(row[1]) for row in joints
    )
    offsets = np.array([row[2] for row in joints], dtype=np.float64)
    prefix = {"left": "l", "right": "r"}
    return Skeleton(
        name=name,
        joint_names=names,
        parent_index=parents,
        body_joint_indices=tuple(i for i, row in enumerate(joints) if row[3] == "body"),
        hand_joint_indices={
            side: tuple(i for i, row in enumerate(joints) if row[3] == side)
            for side in SIDES
        },
        wrist_index={side: names.index(f"{prefix[side]}_wrist") for side in SIDES},
        arm_chain_indices={
            side: tuple(
                names.index(f"{prefix[side]}_{part}")
                for part in ("shoulder", "elbow", "wrist")
            )
            for side in SIDES
        },
        foot_joint_indices=tuple(names.index(joint) for joint in foot_joints),
        rest_offsets=offsets,
    )


def _mirror(rows, side):
    """Mirror left-side rows (y -> -y) into right-side rows."""
    out = []
    for name, parent, (x, y, z), group in rows:
        new_group = side if group == "left" else group
        new_parent = None if parent is None else parent.replace("l_", "r_", 1)
        out.append((name.replace("l_", "r_", 1), new_parent, (x, -y, z), new_group))
    return out


_MINI_LEFT = [
    ("l_knee", "pelvis", (0.0, 0.10, -0.45), "body"),
    ("l_foot", "l_knee", (0.0, 0.0, -0.45), "body"),
]
_MINI_LEFT_ARM = [
    ("l_shoulder", "pelvis", (0.0, 0.18, 0.50), "body"),
    ("l_elbow", "l_shoulder", (0.0, 0.0, -0.28), "body"),
    ("l_wrist", "l_elbow", (0.0, 0.0, -0.26), "body"),
]
_MINI_LEFT_HAND = [
    ("l_index", "l_wrist", (0.01, 0.0, -0.09), "left"),
    ("l_thumb", "l_wrist", (0.03, 0.02, -0.05), "left"),
]

_FULL_SPINE = [
    ("pelvis", None, (0.0, 0.0, 0.0), "body"),
    ("spine1", "pelvis", (0.0, 0.0, 0.10), "body"),
    ("spine2", "spine1", (0.0, 0.0, 0.12), "body"),
    ("spine3", "spine2", (0.0, 0.0, 0.12), "body"),
    ("neck", "spine3", (0.0, 0.0, 0.14), "body"),
    ("head", "neck", (0.0, 0.0, 0.10), "body"),
    ("head_top", "head", (0.0, 0.0, 0.12), "body"),
]
_FULL_LEFT_ARM = [
    ("l_collar", "spine3", (0.0, 0.07, 0.10), "body"),
    ("l_shoulder", "l_collar", (0.0, 0.12, 0.0), "body"),
    ("l_elbow", "l_shoulder", (0.0, 0.0, -0.28), "body"),
    ("l_wrist", "l_elbow", (0.0, 0.0, -0.26), "body"),
    ("l_palm", "l_wrist", (0.0, 0.0, -0.06), "body"),
]
_FULL_LEFT_LEG = [
    ("l_hip", "pelvis", (0.0, 0.09, -0.05), "body"),
    ("l_knee", "l_hip", (0.0, 0.0, -0.42), "body"),
    ("l_ankle", "l_knee", (0.0, 0.0, -0.40), "body"),
    ("l_foot", "l_ankle", (0.08, 0.0, -0.06), "body"),
    ("l_toe", "l_foot", (0.07, 0.0, 0.0), "body"),
]
_FULL_LEFT_HAND = [
    ("l_thumb1", "l_wrist", (0.03, 0.02, -0.03), "left"),
    ("l_thumb2", "l_thumb1", (0.02, 0.01, -0.03), "left"),
    ("l_thumb3", "l_thumb2", (0.01, 0.0, -0.025), "left"),
    ("l_index1", "l_wrist", (0.03, 0.0, -0.09), "left"),
    ("l_index2", "l_index1", (0.0, 0.0, -0.04), "left"),
    ("l_middle1", "l_wrist", (0.01, 0.0, -0.095), "left"),
    ("l_middle2", "l_middle1", (0.0, 0.0, -0.045), "left"),
    ("l_ring1", "l_wrist", (-0.01, 0.0, -0.09), "left"),
    ("l_ring2", "l_ring1", (0.0, 0.0, -0.04), "left"),
    ("l_pinky1", "l_wrist", (-0.03, 0.0, -0.08), "left"),
    ("l_pinky2", "l_pinky1", (0.0, 0.0, -0.03), "left"),
]


def mini_skeleton() -> Skeleton:
    """11 body joints and 2 x 2 hand joints; the fast default for tests."""
    rows = [
        ("pelvis", None, (0.0, 0.0, 0.0), "body"),
        *_MINI_LEFT,
        *_mirror(_MINI_LEFT, "right"),
        *_MINI_LEFT_ARM,
        *_mirror(_MINI_LEFT_ARM, "right"),
        *_MINI_LEFT_HAND,
        *_mirror(_MINI_LEFT_HAND, "right"),
    ]
    return build_skeleton("mini", rows, foot_joints=("l_foot", "r_foot"))


def full_skeleton() -> Skeleton:
    """27 body joints and 2 x 11 hand joints."""
    rows = [
        *_FULL_SPINE,
        *_FULL_LEFT_ARM,
        *_mirror(_FULL_LEFT_ARM, "right"),
        *_FULL_LEFT_LEG,
        *_mirror(_FULL_LEFT_LEG, "right"),
        *_FULL_LEFT_HAND,
        *_mirror(_FULL_LEFT_HAND, "right"),
    ]
    return build_skeleton(
        "full", rows, foot_joints=("l_foot", "l_toe", "r_foot", "r_toe")
    )


SKELETON_PRESETS = {"mini": mini_skeleton, "full": full_skeleton}


def skeleton_preset(name: str) -> Skeleton:
    try:
        return SKELETON_PRESETS[name]()
    except KeyError:
        msg = (
            f"unknown skeleton preset '{name}', "
            f"expected one of {sorted(SKELETON_PRESETS)}"
        )
        raise SkeletonMismatchError(msg) from None


def resolve_skeleton(
    joint_names: Sequence[str], parent_index: Sequence[int]
) -> Skeleton:
    """Find the preset whose joint names and parents match exactly."""
    wanted = (tuple(joint_names), tuple(parent_index))
    for build in SKELETON_PRESETS.values():
        skeleton = build()
        if (skeleton.joint_names, skeleton.parent_index) == wanted:
            return skeleton
    msg = f"no skeleton preset matches the {len(joint_names)} joints in the file"
    raise SkeletonMismatchError(msg)
