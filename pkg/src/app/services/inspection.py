"""Tabular dumps for external plotting and checks.

Every dump is a list of flat records written as CSV with a header row.
"""

import csv
from pathlib import Path
from typing import Any

from loguru import logger

from app.models.configs import DenoiserConfig, NetworkShape, Stage
from app.models.motion import InteractionPair, MotionSequence, Skeleton
from app.services.denoiser import Denoiser
from app.services.diffusion import DiffusionSchedule
from app.services.motion_core import compute_hand_masks
from app.services.trainer import TrainRecord

Records = list[dict[str, Any]]


def write_csv(records: Records, path: Path) -> Path:
    path = Path(path)
    if not records:
        msg = f"nothing to write to {path}"
        raise ValueError(msg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(records[0]))
        writer.writeheader()
        writer.writerows(records)
    logger.debug(f"Wrote {len(records)} rows to {path}")
    return path


def read_csv(path: Path) -> Records:
    with Path(path).open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def schedule_records(schedule: DiffusionSchedule) -> Records:
    """Schedule arrays for t = 0..T, floats written with ``repr`` precision."""
    return [
        {key: value if key == "t" else repr(value) for key, value in row.items()}
        for row in schedule.rows()
    ]


def mask_records(pair: InteractionPair, threshold: float) -> Records:
    """Per-frame left/right hand activity of both characters."""
    masks = compute_hand_masks(pair, threshold)
    actor, reactor = masks.side_activity()
    return [
        {
            "frame": frame,
            "actor_left": int(actor[frame, 0]),
            "actor_right": int(actor[frame, 1]),
            "reactor_left": int(reactor[frame, 0]),
            "reactor_right": int(reactor[frame, 1]),
        }
        for frame in range(pair.num_frames)
    ]


def trajectory_records(sequence: MotionSequence) -> Records:
    names = sequence.skeleton.joint_names
    return [
        {
            "frame": frame,
            "joint": joint,
            "name": names[joint],
            "x": repr(float(x)),
            "y": repr(float(y)),
            "z": repr(float(z)),
        }
        for frame, pose in enumerate(sequence.positions)
        for joint, (x, y, z) in enumerate(pose)
    ]


def loss_curve_records(history: list[TrainRecord]) -> Records:
    return [record.model_dump() for record in history]


def parameter_records(
    shape: NetworkShape,
    skeleton: Skeleton,
    window_length: int,
    num_steps: int,
    *,
    cascade: bool = True,
) -> Records:
    """Trainable parameter count of each cascade stage, or of the joint stage."""
    records = []
    stages: tuple[Stage, ...] = ("body", "hands") if cascade else ("joint",)
    for stage in stages:
        if stage == "hands" and skeleton.num_hand_joints == 0:
            continue
        config = DenoiserConfig.for_stage(
            shape,
            stage=stage,
            num_body_joints=skeleton.num_body_joints,
            num_hand_joints=skeleton.num_hand_joints,
            window_length=window_length,
        )
        model = Denoiser(config, num_steps)
        records.append(
            {
                "stage": stage,
                "joints": config.num_joints,
                "parameters": model.num_parameters,
            }
        )
    return records
