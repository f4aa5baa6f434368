"""Motion, edit-constraint and dataset-manifest files.

All files are UTF-8 JSON. Floats are written in shortest round-trip form, so a
save followed by a load reproduces every value bit for bit.
"""

from pathlib import Path
from typing import Any, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError

from app.models.configs import SynthConfig
from app.models.editing import EditConstraint, EditKind
from app.models.errors import MotionFormatError, SkeletonMismatchError
from app.models.motion import (
    InteractionPair,
    MotionSequence,
    Role,
    Skeleton,
    resolve_skeleton,
)
from app.services.synthetic import DatasetSplit, windows_from_pairs


class MotionFile(BaseModel):
    """On-disk schema of one character's motion."""

    model_config = ConfigDict(extra="forbid")

    fps: float
    joint_names: list[str]
    parent_index: list[int]
    role: Literal["actor", "reactor"]
    positions: list[list[list[float]]]


class EditConstraintFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: EditKind
    joint_indices: list[int] = []
    frame_indices: list[int] = []
    reference: list[list[list[float]]]


class PairEntry(BaseModel):
    index: int
    actor_file: str
    reactor_file: str


class WindowEntry(BaseModel):
    pair_index: int
    start: int
    split: Literal["train", "test"]


class DatasetManifest(BaseModel):
    """Index of a generated dataset: the pair files and the window split."""

    synth_config: SynthConfig
    pairs: list[PairEntry]
    windows: list[WindowEntry]


def _read_model(path: Path, model: type[BaseModel], what: str) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        msg = f"cannot read {what} file {path}: {e}"
        raise MotionFormatError(msg) from e
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        msg = f"malformed {what} file {path}: {e}"
        raise MotionFormatError(msg) from e


def _write_model(document: BaseModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=None), encoding="utf-8")
    return path


def save_motion(sequence: MotionSequence, path: Path) -> Path:
    document = MotionFile(
        fps=sequence.fps,
        joint_names=list(sequence.skeleton.joint_names),
        parent_index=list(sequence.skeleton.parent_index),
        role=sequence.role.value,
        positions=sequence.positions.tolist(),
    )
    logger.debug(
        f"Writing {sequence.role.value} motion ({sequence.num_frames} frames) to {path}"
    )
    return _write_model(document, path)


def load_motion(path: Path, skeleton: Skeleton | None = None) -> MotionSequence:
    """Load a motion file, checking it against ``skeleton`` when given.

    Without a skeleton the matching preset is looked up from the joint names and
    parents stored in the file.
    """
    document: MotionFile = _read_model(path, MotionFile, "motion")
    if len(document.positions) < 2:
        msg = (
            f"motion file {path} has {len(document.positions)} frames; "
            "N >= 2 is required"
        )
        raise MotionFormatError(msg)
    if len(document.joint_names) != len(document.parent_index):
        msg = f"motion file {path}: joint_names and parent_index lengths differ"
        raise MotionFormatError(msg)
    if skeleton is None:
        skeleton = resolve_skeleton(document.joint_names, document.parent_index)
    elif (
        tuple(document.joint_names) != skeleton.joint_names
        or tuple(document.parent_index) != skeleton.parent_index
    ):
        msg = f"motion file {path} does not match skeleton '{skeleton.name}'"
        raise SkeletonMismatchError(msg)
    try:
        positions = np.array(document.positions, dtype=np.float64)
    except ValueError as e:
        msg = f"motion file {path}: positions are not a rectangular N x J x 3 array"
        raise MotionFormatError(msg) from e
    return MotionSequence(document.fps, positions, Role(document.role), skeleton)


def save_edit_constraint(constraint: EditConstraint, path: Path) -> Path:
    document = EditConstraintFile(
        kind=constraint.kind,
        joint_indices=list(constraint.joint_indices),
        frame_indices=list(constraint.frame_indices),
        reference=constraint.reference.tolist(),
    )
    return _write_model(document, path)


def load_edit_constraint(path: Path) -> EditConstraint:
    document: EditConstraintFile = _read_model(
        path, EditConstraintFile, "edit constraint"
    )
    try:
        reference = np.array(document.reference, dtype=np.float64)
    except ValueError as e:
        msg = f"edit constraint {path}: reference is not an N x J x 3 array"
        raise MotionFormatError(msg) from e
    return EditConstraint(
        kind=document.kind,
        reference=reference,
        joint_indices=tuple(document.joint_indices),
        frame_indices=tuple(document.frame_indices),
    )


def save_manifest(manifest: DatasetManifest, path: Path) -> Path:
    return _write_model(manifest, path)


def load_manifest(path: Path) -> DatasetManifest:
    return _read_model(path, DatasetManifest, "dataset manifest")


MANIFEST_NAME = "manifest.json"


def save_dataset(
    pairs: list[InteractionPair],
    assignment: list[tuple[int, int, str]],
    config: SynthConfig,
    data_dir: Path,
) -> Path:
    """Write every pair as two motion files plus the manifest.

    Returns the manifest path.
    """
    data_dir = Path(data_dir)
    entries = []
    for index, pair in enumerate(pairs):
        actor_file = f"pairs/pair_{index:04d}_actor.json"
        reactor_file = f"pairs/pair_{index:04d}_reactor.json"
        save_motion(pair.actor, data_dir / actor_file)
        save_motion(pair.reactor, data_dir / reactor_file)
        entries.append(
            PairEntry(index=index, actor_file=actor_file, reactor_file=reactor_file)
        )
    manifest = DatasetManifest(
        synth_config=config,
        pairs=entries,
        windows=[
            WindowEntry(pair_index=pair_index, start=start, split=split)
            for pair_index, start, split in assignment
        ],
    )
    logger.info(f"Wrote {len(pairs)} pairs and {len(assignment)} windows to {data_dir}")
    return save_manifest(manifest, data_dir / MANIFEST_NAME)


def load_dataset(data_dir: Path) -> tuple[DatasetSplit, DatasetManifest]:
    """Rebuild the train/test windows of a dataset written by ``save_dataset``.

    The windows cut from the stored pairs must reproduce the manifest's split.
    """
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir / MANIFEST_NAME)
    pairs = []
    for entry in sorted(manifest.pairs, key=lambda e: e.index):
        actor = load_motion(data_dir / entry.actor_file)
        reactor = load_motion(data_dir / entry.reactor_file, actor.skeleton)
        pairs.append(InteractionPair(actor, reactor, actor.skeleton))
    split, assignment = windows_from_pairs(pairs, manifest.synth_config)
    expected = [(w.pair_index, w.start, w.split) for w in manifest.windows]
    if assignment != expected:
        msg = f"the pairs in {data_dir} do not reproduce the manifest's windows"
        raise MotionFormatError(msg)
    return split, manifest
