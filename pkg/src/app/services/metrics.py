"""Evaluation measures on plain arrays.

Positions are in meters; MPJPE and MPJVE are reported in millimeters.
"""

from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from app.models.configs import FeatureExtractorConfig
from app.models.errors import (
    ConfigError,
    InsufficientSamplesError,
    InvalidMotionError,
    ShapeMismatchError,
)

MM_PER_M = 1000.0
CLAMP_TOLERANCE = 1e-10
COVARIANCE_EPS = 1e-6
Z_95 = 1.96


def _pair(x_gt, x_pred) -> tuple[np.ndarray, np.ndarray]:
    x_gt = np.asarray(x_gt, dtype=np.float64)
    x_pred = np.asarray(x_pred, dtype=np.float64)
    if x_gt.shape != x_pred.shape:
        raise ShapeMismatchError("prediction", x_gt.shape, x_pred.shape)
    if x_gt.ndim < 3 or x_gt.shape[-1] != 3:
        raise ShapeMismatchError("motion", ("...", "N", "J", 3), x_gt.shape)
    return x_gt, x_pred


def mpjpe(x_gt, x_pred) -> float:
    """Mean per-joint position error in millimeters over all frames and joints."""
    x_gt, x_pred = _pair(x_gt, x_pred)
    return float(np.linalg.norm((x_gt - x_pred) * MM_PER_M, axis=-1).mean())


def mpjve(x_gt, x_pred) -> float:
    """Mean per-joint error of frame-difference velocities, in millimeters per frame."""
    x_gt, x_pred = _pair(x_gt, x_pred)
    if x_gt.shape[-3] < 2:
        msg = f"MPJVE needs N >= 2 frames, got {x_gt.shape[-3]}"
        raise InvalidMotionError(msg)
    gap = np.diff(x_gt, axis=-3) - np.diff(x_pred, axis=-3)
    return float(np.linalg.norm(gap * MM_PER_M, axis=-1).mean())


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def _regularized(covariance: np.ndarray, name: str) -> np.ndarray:
    smallest = linalg.eigvalsh(covariance)[0] if covariance.size else 0.0
    if smallest > COVARIANCE_EPS:
        return covariance
    logger.warning(
        f"Covariance of {name} is near singular (smallest eigenvalue {smallest:.3e}); "
        f"adding {COVARIANCE_EPS:g} * I"
    )
    return covariance + COVARIANCE_EPS * np.eye(covariance.shape[0])


def _samples(features) -> np.ndarray:
    """Rows are samples; a flat array is a set of scalar samples."""
    features = np.asarray(features, dtype=np.float64)
    return features.reshape(-1, 1) if features.ndim == 1 else features


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets (rows are samples).

    The trace of (Sa Sb)^(1/2) is taken from the eigenvalues of the symmetric
    sqrt(Sa) Sb sqrt(Sa). Near-singular covariances get a small diagonal term.
    """
    a, b = (_samples(x) for x in (features_a, features_b))
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError("feature dimension", a.shape[1], b.shape[1])
    if min(a.shape[0], b.shape[0]) < 2:
        msg = "FID needs at least 2 samples per set"
        raise InsufficientSamplesError(msg)

    mean_gap = a.mean(axis=0) - b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    if not np.array_equal(a, b):
        cov_a = _regularized(cov_a, "the first set")
        cov_b = _regularized(cov_b, "the second set")

    root_a = _psd_sqrt(cov_a)
    product = root_a @ cov_b @ root_a
    eigenvalues = linalg.eigvalsh((product + product.T) / 2.0)
    if eigenvalues.min() < -CLAMP_TOLERANCE:
        logger.warning(f"Clamping negative eigenvalue {eigenvalues.min():.3e} to zero")
    trace_root = np.sqrt(np.clip(eigenvalues, 0.0, None)).sum()
    value = mean_gap @ mean_gap + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_root
    return float(max(value, 0.0))


class FeatureExtractor:
    """Flattened window positions and velocities projected on principal axes.

    The axes are fitted once, on ground-truth windows, and reused for every
    generated set compared against them.
    """

    def __init__(self, config: FeatureExtractorConfig | None = None):
        self.config = config or FeatureExtractorConfig()
        self.mean: np.ndarray | None = None
        self.components: np.ndarray | None = None

    def raw_features(self, windows) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 4 or windows.shape[1] != self.config.window_length:
            expected = ("M", self.config.window_length, "J", 3)
            raise ShapeMismatchError("feature windows", expected, windows.shape)
        parts = [windows.reshape(windows.shape[0], -1)]
        if self.config.include_velocity:
            parts.append(np.diff(windows, axis=1).reshape(windows.shape[0], -1))
        return np.concatenate(parts, axis=1)

    def fit(self, windows) -> "FeatureExtractor":
        raw = self.raw_features(windows)
        if self.config.projection_dim > raw.shape[1]:
            msg = (
                f"projection_dim {self.config.projection_dim} exceeds the raw feature "
                f"size {raw.shape[1]}"
            )
            raise ConfigError(msg)
        self.mean = raw.mean(axis=0)
        _, _, vt = np.linalg.svd(raw - self.mean, full_matrices=False)
        k = min(self.config.projection_dim, vt.shape[0])
        if k < self.config.projection_dim:
            logger.warning(
                f"Only {k} principal axes available from {raw.shape[0]} windows"
            )
        self.components = vt[:k]
        return self

    def transform(self, windows) -> np.ndarray:
        if self.components is None or self.mean is None:
            msg = "the feature extractor must be fitted before use"
            raise ConfigError(msg)
        return (self.raw_features(windows) - self.mean) @ self.components.T


def diversity(features, subset_size: int, seed: int = 0) -> float:
    """Mean distance between two disjoint random subsets of size ``subset_size``."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] < 2 * subset_size:
        msg = f"diversity needs {2 * subset_size} samples, got {features.shape[0]}"
        raise InsufficientSamplesError(msg)
    order = np.random.default_rng(seed).permutation(features.shape[0])
    first = features[order[:subset_size]]
    second = features[order[subset_size : 2 * subset_size]]
    return float(cdist(first, second).mean())


@dataclass(frozen=True)
class MetricInterval:
    """Mean with a 95% normal-approximation confidence interval."""

    mean: float
    half_width: float

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width


def multimodality(samples) -> MetricInterval:
    """Mean pairwise distance among repeated generations, averaged over conditions.

    ``samples`` is (C, R, D): R feature vectors generated for each of C conditions.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ShapeMismatchError(
            "multimodality samples", ("C", "R", "D"), samples.shape
        )
    if samples.shape[0] < 1 or samples.shape[1] < 2:
        msg = (
            "multimodality needs R >= 2 repeats per condition, "
            f"got {samples.shape[1]}"
        )
        raise InsufficientSamplesError(msg)
    per_condition = np.array([pdist(group).mean() for group in samples])
    spread = per_condition.std(ddof=1) if per_condition.size > 1 else 0.0
    return MetricInterval(
        mean=float(per_condition.mean()),
        half_width=float(Z_95 * spread / np.sqrt(per_condition.size)),
    )
