"""Metric reports for trained cascades and for pairs of motion files."""

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel

from app.models.configs import EvalConfig, FeatureExtractorConfig, Objective
from app.models.errors import InsufficientSamplesError, ShapeMismatchError
from app.models.motion import MotionSequence, Skeleton
from app.services.diffusion import DiffusionSchedule, StageDenoiser, sample_normalized
from app.services.metrics import (
    FeatureExtractor,
    diversity,
    fid,
    mpjpe,
    mpjve,
    multimodality,
)
from app.services.motion_core import denormalize_motion
from app.services.synthetic import WindowDataset


class MetricsReport(BaseModel):
    """Metric name to value; optional entries are absent when not computable."""

    num_windows: int
    repeats: int = 1
    mpjpe_body: float
    mpjpe_hands: float
    mpjpe_all: float
    mpjve_body: float
    mpjve_hands: float
    mpjve_all: float
    fid_body: float | None = None
    fid_hands: float | None = None
    diversity: float | None = None
    diversity_ground_truth: float | None = None
    multimodality: float | None = None
    multimodality_ci: float | None = None
    cascade: bool = True
    objective: Objective = "diffusion"
    config: EvalConfig | None = None


def _anchored(positions: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Normalized windows with each hand put back on its own wrist."""
    root = np.zeros((positions.shape[-3], 3))
    return np.stack(
        [denormalize_motion(window, root, skeleton) for window in positions]
    )


def _subsets(positions: np.ndarray, skeleton: Skeleton) -> dict[str, np.ndarray]:
    return {
        "body": positions[..., list(skeleton.body_joint_indices), :],
        "hands": positions[..., list(skeleton.hand_columns), :],
        "all": _anchored(positions, skeleton),
    }


def _errors(
    truth: np.ndarray, generated: np.ndarray, skeleton: Skeleton
) -> dict[str, float]:
    expected, produced = _subsets(truth, skeleton), _subsets(generated, skeleton)
    out = {}
    for name in expected:
        out[f"mpjpe_{name}"] = mpjpe(expected[name], produced[name])
        out[f"mpjve_{name}"] = mpjve(expected[name], produced[name])
    return out


def _feature_config(
    base: FeatureExtractorConfig, windows: np.ndarray
) -> FeatureExtractorConfig:
    """Adapt the extractor to the window length and size actually evaluated."""
    num_frames, num_joints = windows.shape[1:3]
    frames = num_frames + (num_frames - 1 if base.include_velocity else 0)
    return base.model_copy(
        update={
            "window_length": num_frames,
            "projection_dim": min(base.projection_dim, frames * num_joints * 3),
        }
    )


def _fid(
    truth: np.ndarray, generated: np.ndarray, base: FeatureExtractorConfig
) -> float | None:
    if truth.shape[0] < 2:
        logger.warning("FID skipped: fewer than 2 windows")
        return None
    extractor = FeatureExtractor(_feature_config(base, truth)).fit(truth)
    return fid(extractor.transform(truth), extractor.transform(generated))


def evaluate_model(
    body_denoiser: StageDenoiser,
    hand_denoiser: StageDenoiser | None,
    dataset: WindowDataset,
    schedule: DiffusionSchedule,
    config: EvalConfig,
    *,
    mask_threshold: float = 0.10,
    single_stage: bool = False,
    objective: Objective = "diffusion",
) -> MetricsReport:
    """Generate reactors for held-out windows and score them.

    Each window is generated ``config.repeats`` times with seeds
    ``config.seed + r``. Position errors are averaged over repeats; FID and
    diversity use the first repeat; multimodality uses all of them.

    ``single_stage`` scores a joint denoiser passed as ``body_denoiser``;
    ``objective`` only labels the report.
    """
    if config.max_windows is not None:
        dataset = dataset.subset(np.arange(min(config.max_windows, len(dataset))))
    if len(dataset) == 0:
        msg = "no windows to evaluate"
        raise InsufficientSamplesError(msg)
    skeleton = dataset.skeleton
    runs = []
    for repeat in range(config.repeats):
        generated, _ = sample_normalized(
            dataset.actor,
            skeleton,
            body_denoiser,
            hand_denoiser,
            schedule,
            generator=torch.Generator().manual_seed(config.seed + repeat),
            guidance=config.guidance,
            deterministic=config.deterministic,
            mask_threshold=mask_threshold,
            single_stage=single_stage,
        )
        runs.append(generated)
        logger.debug(f"Generated repeat {repeat + 1}/{config.repeats}")

    per_repeat = [_errors(dataset.reactor, run, skeleton) for run in runs]
    errors = {
        name: float(np.mean([e[name] for e in per_repeat])) for name in per_repeat[0]
    }

    truth_sets = _subsets(dataset.reactor, skeleton)
    first_sets = _subsets(runs[0], skeleton)
    report = MetricsReport(
        num_windows=len(dataset),
        repeats=config.repeats,
        fid_body=_fid(truth_sets["body"], first_sets["body"], config.features),
        fid_hands=_fid(truth_sets["hands"], first_sets["hands"], config.features),
        cascade=not single_stage,
        objective=objective,
        config=config,
        **errors,
    )

    if len(dataset) >= 2:
        extractor = FeatureExtractor(
            _feature_config(config.features, truth_sets["all"])
        ).fit(truth_sets["all"])
        subset = min(config.diversity_subset, len(dataset) // 2)
        features = np.stack(
            [extractor.transform(_anchored(run, skeleton)) for run in runs], 1
        )
        spread = multimodality(features)
        report = report.model_copy(
            update={
                "diversity": diversity(features[:, 0], subset, config.seed),
                "diversity_ground_truth": diversity(
                    extractor.transform(truth_sets["all"]), subset, config.seed
                ),
                "multimodality": spread.mean,
                "multimodality_ci": spread.half_width,
            }
        )
    logger.info(
        f"Evaluated {report.num_windows} windows: "
        f"MPJPE body {report.mpjpe_body:.2f} mm, hands {report.mpjpe_hands:.2f} mm"
    )
    return report


def mean_pose_baseline(train: WindowDataset, test: WindowDataset) -> float:
    """Body MPJPE (mm) of always predicting the mean training reactor window."""
    columns = list(train.skeleton.body_joint_indices)
    mean_window = train.reactor[:, :, columns].mean(axis=0)
    truth = test.reactor[:, :, columns]
    return mpjpe(truth, np.broadcast_to(mean_window, truth.shape))


def body_mpjpe(
    body_denoiser: StageDenoiser,
    dataset: WindowDataset,
    schedule: DiffusionSchedule,
    *,
    seed: int = 0,
    deterministic: bool = True,
) -> float:
    """Body MPJPE (mm) of body-only generation on a window dataset."""
    generated, _ = sample_normalized(
        dataset.actor,
        dataset.skeleton,
        body_denoiser,
        None,
        schedule,
        generator=torch.Generator().manual_seed(seed),
        deterministic=deterministic,
    )
    columns = list(dataset.skeleton.body_joint_indices)
    return mpjpe(dataset.reactor[:, :, columns], generated[:, :, columns])


def _sliding(positions: np.ndarray, length: int) -> np.ndarray:
    count = positions.shape[0] - length + 1
    return np.stack([positions[start : start + length] for start in range(count)])


def compare_motions(
    reference: MotionSequence,
    generated: MotionSequence,
    features: FeatureExtractorConfig | None = None,
) -> MetricsReport:
    """Position errors and FID between two reactor motions of the same skeleton.

    FID compares sliding windows of ``features.window_length`` frames and needs
    at least two of them.
    """
    reference.skeleton.require_same(generated.skeleton)
    if reference.positions.shape != generated.positions.shape:
        raise ShapeMismatchError(
            "generated motion", reference.positions.shape, generated.positions.shape
        )
    skeleton = reference.skeleton
    truth, produced = reference.positions[None], generated.positions[None]
    errors = {
        f"{metric.__name__}_{name}": metric(
            _subsets(truth, skeleton)[name] if name != "all" else truth,
            _subsets(produced, skeleton)[name] if name != "all" else produced,
        )
        for metric in (mpjpe, mpjve)
        for name in ("body", "hands", "all")
    }
    config = features or FeatureExtractorConfig()
    length = min(config.window_length, reference.num_frames - 1)
    fids: dict[str, float | None] = {"fid_body": None, "fid_hands": None}
    if length >= 2:
        windows_ref = _sliding(reference.positions, length)
        windows_gen = _sliding(generated.positions, length)
        for name, joints in (
            ("body", list(skeleton.body_joint_indices)),
            ("hands", list(skeleton.hand_columns)),
        ):
            fids[f"fid_{name}"] = _fid(
                windows_ref[:, :, joints], windows_gen[:, :, joints], config
            )
    return MetricsReport(num_windows=1, **errors, **fids)
