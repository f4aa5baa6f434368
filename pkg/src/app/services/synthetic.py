"""Deterministic two-character interaction data.

A leader walks a smooth planar curve and periodically reaches out with one arm.
The follower stands facing the leader at a fixed distance and mirrors the
leader's pose from a few frames earlier. During reach episodes its wrist on the
reaching side is pulled to just beside the leader's wrist. Everything is a pure
function of the config.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from app.models.configs import SynthConfig
from app.models.errors import InvalidMotionError
from app.models.motion import (
    SIDES,
    UP_AXIS,
    InteractionPair,
    MotionSequence,
    Role,
    Skeleton,
    skeleton_preset,
)
from app.services.motion_core import (
    compute_hand_masks,
    detect_foot_contacts,
    forward_kinematics,
    normalize_pair,
)

FACING_DISTANCE = 0.8
CONTACT_OFFSET = np.array([0.02, 0.0, 0.0])
REACH_PERIOD = 20
MAX_REACH_ANGLE = math.pi / 3
STEP_FREQUENCY = 1.0
LEG_SWING = 0.25
LEG_DRIVERS = {"mini": ("l_knee", "r_knee"), "full": ("l_hip", "r_hip")}


@dataclass(frozen=True, eq=False)
class WindowDataset:
    """Fixed-length normalized windows stacked along the first axis."""

    skeleton: Skeleton = field(repr=False)
    actor: np.ndarray = field(repr=False)
    reactor: np.ndarray = field(repr=False)
    mask_actor: np.ndarray = field(repr=False)
    mask_reactor: np.ndarray = field(repr=False)
    foot_contacts: np.ndarray = field(repr=False)
    pair_index: np.ndarray = field(repr=False)
    start: np.ndarray = field(repr=False)
    fps: float = 20.0

    def __len__(self) -> int:
        return self.actor.shape[0]

    @property
    def window_length(self) -> int:
        return self.actor.shape[1]

    def subset(self, indices) -> "WindowDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return WindowDataset(
            skeleton=self.skeleton,
            actor=self.actor[indices],
            reactor=self.reactor[indices],
            mask_actor=self.mask_actor[indices],
            mask_reactor=self.mask_reactor[indices],
            foot_contacts=self.foot_contacts[indices],
            pair_index=self.pair_index[indices],
            start=self.start[indices],
            fps=self.fps,
        )

    def window_pair(self, index: int) -> InteractionPair:
        """One normalized window as an interaction pair."""
        return InteractionPair(
            MotionSequence(self.fps, self.actor[index], Role.ACTOR, self.skeleton),
            MotionSequence(self.fps, self.reactor[index], Role.REACTOR, self.skeleton),
            self.skeleton,
        )


@dataclass(frozen=True)
class DatasetSplit:
    train: WindowDataset
    test: WindowDataset


def reach_episodes(
    config: SynthConfig, num_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Which frames are reach frames, and which side (0 left, 1 right) reaches.

    Every block of ``REACH_PERIOD`` frames starts with ceil(rate * period) reach
    frames; blocks alternate between the left and the right arm.
    """
    frames = np.arange(num_frames)
    per_block = math.ceil(config.contact_episode_rate * REACH_PERIOD)
    active = (frames % REACH_PERIOD) < per_block
    side = (frames // REACH_PERIOD) % 2
    return active, side


def _reach_bump(config: SynthConfig, num_frames: int) -> np.ndarray:
    """Smooth 0..1 arm-raise profile peaking in the middle of each episode."""
    per_block = math.ceil(config.contact_episode_rate * REACH_PERIOD)
    active, _ = reach_episodes(config, num_frames)
    position = np.arange(num_frames) % REACH_PERIOD
    bump = np.sin(math.pi * (position + 0.5) / max(per_block, 1))
    return np.where(active, bump, 0.0)


def _leader_motion(
    config: SynthConfig, skeleton: Skeleton, rng: np.random.Generator
) -> np.ndarray:
    num_frames = config.frames_per_pair
    times = np.arange(num_frames) / config.fps

    # two incommensurate sinusoids per planar coordinate
    base = 0.13 * (1.0 + 0.2 * rng.uniform(size=2))
    amplitudes = np.stack(
        [rng.uniform(0.3, 0.5, size=2), rng.uniform(0.1, 0.25, size=2)]
    )
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(2, 2))
    gait_phase = rng.uniform(0.0, 2.0 * math.pi)
    frequencies = np.stack([base, base * math.sqrt(2.0)])

    root = np.zeros((num_frames, 3))
    for term in range(2):
        root[:, :2] += amplitudes[term] * np.sin(
            2.0 * math.pi * frequencies[term] * times[:, None] + phases[term]
        )
    root[:, UP_AXIS] = -skeleton.rest_positions()[:, UP_AXIS].min()

    _, reach_side = reach_episodes(config, num_frames)
    bump = _reach_bump(config, num_frames)
    shoulders = [skeleton.arm_chain_indices[side][0] for side in SIDES]
    legs = [skeleton.index_of(name) for name in LEG_DRIVERS[skeleton.name]]
    swing = LEG_SWING * np.sin(2.0 * math.pi * STEP_FREQUENCY * times + gait_phase)

    positions = np.empty((num_frames, skeleton.num_joints, 3))
    for frame in range(num_frames):
        rotations = np.tile(np.eye(3), (skeleton.num_joints, 1, 1))
        raise_angle = MAX_REACH_ANGLE * bump[frame]
        rotations[shoulders[reach_side[frame]]] = Rotation.from_euler(
            "y", -raise_angle
        ).as_matrix()
        for leg, sign in zip(legs, (1.0, -1.0), strict=True):
            rotations[leg] = Rotation.from_euler("y", sign * swing[frame]).as_matrix()
        positions[frame] = forward_kinematics(root[frame], rotations, skeleton)
    return positions


def follower_from_leader(
    leader: np.ndarray, skeleton: Skeleton, config: SynthConfig
) -> np.ndarray:
    """Noise-free follower motion as a closed-form function of the leader."""
    num_frames = leader.shape[0]
    source = np.maximum(np.arange(num_frames) - config.phase_lag, 0)
    # the lagged pose, rooted on the leader's current root and mirrored in x
    pose = leader[source] - leader[source, :1]
    follower = leader[:, :1] + pose
    follower[..., 0] = leader[:, :1, 0] + FACING_DISTANCE - pose[..., 0]

    active, reach_side = reach_episodes(config, num_frames)
    for frame in np.flatnonzero(active):
        side = SIDES[reach_side[frame]]
        wrist = skeleton.wrist_index[side]
        elbow = skeleton.arm_chain_indices[side][-2]
        delta = leader[frame, wrist] + CONTACT_OFFSET - follower[frame, wrist]
        moved = [wrist, *skeleton.hand_joint_indices[side]]
        follower[frame, moved] += delta
        follower[frame, elbow] += 0.5 * delta
    return follower


def generate_pair(config: SynthConfig, index: int) -> InteractionPair:
    """Leader/follower pair ``index``; bitwise deterministic in (seed, index)."""
    skeleton = skeleton_preset(config.skeleton_preset)
    rng = np.random.default_rng([config.seed, index])
    leader = _leader_motion(config, skeleton, rng)
    follower = follower_from_leader(leader, skeleton, config)
    if config.noise_sigma > 0.0:
        follower = follower + rng.normal(0.0, config.noise_sigma, size=follower.shape)
    return InteractionPair(
        MotionSequence(config.fps, leader, Role.ACTOR, skeleton),
        MotionSequence(config.fps, follower, Role.REACTOR, skeleton),
        skeleton,
    )


def slice_pair(pair: InteractionPair, start: int, stop: int) -> InteractionPair:
    return InteractionPair(
        pair.actor.with_positions(pair.actor.positions[start:stop]),
        pair.reactor.with_positions(pair.reactor.positions[start:stop]),
        pair.skeleton,
    )


def _empty_dataset(skeleton: Skeleton, window: int, fps: float) -> WindowDataset:
    return WindowDataset(
        skeleton=skeleton,
        actor=np.zeros((0, window, skeleton.num_joints, 3)),
        reactor=np.zeros((0, window, skeleton.num_joints, 3)),
        mask_actor=np.zeros((0, window, skeleton.num_hand_joints)),
        mask_reactor=np.zeros((0, window, skeleton.num_hand_joints)),
        foot_contacts=np.zeros((0, window, len(skeleton.foot_joint_indices))),
        pair_index=np.zeros(0, dtype=np.int64),
        start=np.zeros(0, dtype=np.int64),
        fps=fps,
    )


def window_starts(config: SynthConfig, num_frames: int) -> range:
    return range(0, num_frames - config.window_length + 1, config.stride)


def windows_from_pairs(
    pairs: list[InteractionPair], config: SynthConfig
) -> tuple[DatasetSplit, list[tuple[int, int, str]]]:
    """Cut, filter, normalize and split windows.

    Windows are enumerated in pair order; the k-th kept window goes to the test
    split when k % 4 == 3. Returns the split and (pair, start, split) rows.
    """
    if not pairs:
        msg = "at least one pair is needed to build a dataset"
        raise InvalidMotionError(msg)
    skeleton = pairs[0].skeleton
    rows: list[dict[str, np.ndarray | int]] = []
    assignment = []
    for pair_index, pair in enumerate(pairs):
        if pair.num_frames < config.window_length:
            msg = (
                f"pair {pair_index} has {pair.num_frames} frames, fewer than the "
                f"window length {config.window_length}"
            )
            raise InvalidMotionError(msg)
        for start in window_starts(config, pair.num_frames):
            window = slice_pair(pair, start, start + config.window_length)
            if config.max_pair_distance is not None:
                actor_root = window.actor.positions[:, 0, :2]
                reactor_root = window.reactor.positions[:, 0, :2]
                gap = np.linalg.norm(actor_root - reactor_root, axis=-1)
                if gap.max() > config.max_pair_distance:
                    continue
            normalized, _ = normalize_pair(window)
            masks = compute_hand_masks(normalized, config.hand_mask_threshold)
            if config.require_contact and not (
                masks.mask_actor.any() or masks.mask_reactor.any()
            ):
                continue
            split = "test" if len(assignment) % 4 == 3 else "train"
            assignment.append((pair_index, start, split))
            rows.append(
                {
                    "actor": normalized.actor.positions,
                    "reactor": normalized.reactor.positions,
                    "mask_actor": masks.mask_actor,
                    "mask_reactor": masks.mask_reactor,
                    "foot_contacts": detect_foot_contacts(normalized.reactor),
                    "pair_index": pair_index,
                    "start": start,
                }
            )

    def stack(split: str) -> WindowDataset:
        chosen = [
            row
            for row, entry in zip(rows, assignment, strict=True)
            if entry[2] == split
        ]
        if not chosen:
            return _empty_dataset(skeleton, config.window_length, pairs[0].fps)
        return WindowDataset(
            skeleton=skeleton,
            **{
                key: np.stack([np.asarray(row[key]) for row in chosen])
                for key in chosen[0]
            },
            fps=pairs[0].fps,
        )

    split = DatasetSplit(train=stack("train"), test=stack("test"))
    logger.info(
        f"Built {len(assignment)} windows of {config.window_length} frames "
        f"({len(split.train)} train / {len(split.test)} test)"
    )
    return split, assignment


def generate_pairs(config: SynthConfig, workers: int = 1) -> list[InteractionPair]:
    """All pairs of a config; generation is parallel by index."""
    if workers <= 1:
        return [generate_pair(config, index) for index in range(config.num_pairs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        indices = range(config.num_pairs)
        return list(pool.map(lambda i: generate_pair(config, i), indices))


def make_dataset(config: SynthConfig, workers: int = 1) -> DatasetSplit:
    """Train/test windows for a synthetic config."""
    if config.frames_per_pair < config.window_length:
        msg = (
            f"frames_per_pair ({config.frames_per_pair}) is below the window "
            f"length ({config.window_length})"
        )
        raise InvalidMotionError(msg)
    split, _ = windows_from_pairs(generate_pairs(config, workers), config)
    return split
