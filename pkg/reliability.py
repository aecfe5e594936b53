"""
Per-pixel depth reliability: reference depth, supervision targets, the
heuristic estimator and the L1 objective.

A reliability score in [0, 1] says how far a depth pixel can be trusted.
Supervision compares measured depth D against a reference D*: within a
tolerance eps(d) = 0.02 d the pixel is reliable.
"""

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DomainError, ShapeError
from scenegen import RANGE_MAX, DepthFrame, RgbFrame


TargetMode = Literal["binary", "soft"]

# eps(d) = sigma(d) = RELATIVE_TOLERANCE * d
RELATIVE_TOLERANCE = 0.02
DEFAULT_REFERENCE_WINDOW = 15


@dataclass
class ReliabilityMap:
    """Per-pixel trust score, every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"Reliability map must be 2-D, got {self.values.shape}")
        if self.values.size and (
            not np.all(np.isfinite(self.values))
            or self.values.min() < 0.0
            or self.values.max() > 1.0
        ):
            raise DomainError("Reliability values must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ReliabilityTarget:
    """Supervision target; binary values are exactly 0 or 1."""

    values: np.ndarray
    mode: TargetMode

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mode not in ("binary", "soft"):
            raise ValueError(f"mode must be 'binary' or 'soft', got {self.mode!r}")
        if self.mode == "binary" and not np.all((self.values == 0.0) | (self.values == 1.0)):
            raise DomainError("Binary targets must be 0 or 1")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise DomainError("Targets must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape


def tolerance(reference: np.ndarray) -> np.ndarray:
    """eps(d) = sigma(d) = 0.02 d."""
    return RELATIVE_TOLERANCE * reference


def masked_lower_median(samples: np.ndarray, valid: np.ndarray, axis: int = -1) -> tuple:
    """
    Lower median of the valid samples along ``axis``.

    The lower median always returns one of the samples, so no new depth
    values appear. Returns ``(median, valid_count)``; the median is 0.0
    where no sample is valid.
    """
    filled = np.where(valid, samples, np.nan)
    ordered = np.sort(filled, axis=axis)
    count = valid.sum(axis=axis)
    idx = np.expand_dims(np.maximum(count - 1, 0) // 2, axis)
    med = np.take_along_axis(ordered, idx, axis=axis).squeeze(axis)
    return np.where(count > 0, med, 0.0), count


def _check_shapes(*shapes) -> None:
    first = shapes[0]
    for s in shapes[1:]:
        if tuple(s) != tuple(first):
            raise ShapeError(f"Shape mismatch: {tuple(first)} vs {tuple(s)}")


def reference_depth(frames: Sequence[DepthFrame]) -> DepthFrame:
    """
    Temporal median over a pixel-aligned window.

    A pixel is valid when at least ceil(W/2) of the W samples are valid;
    its value is the lower median of the valid samples.

    Raises
    ------
    DomainError
        If the window holds fewer than 3 frames.
    ShapeError
        If frames differ in shape.
    """
    if len(frames) < 3:
        raise DomainError(f"Reference window needs at least 3 frames, got {len(frames)}")
    _check_shapes(*(f.shape for f in frames))
    stack = np.stack([f.values for f in frames], axis=0)
    valid = np.stack([f.validity for f in frames], axis=0)
    med, count = masked_lower_median(stack, valid, axis=0)
    ok = count >= math.ceil(len(frames) / 2)
    return DepthFrame(np.where(ok, med, 0.0), ok)


def _scored(measured: DepthFrame, reference: DepthFrame) -> np.ndarray:
    _check_shapes(measured.shape, reference.shape)
    return measured.validity & reference.validity


def binary_target(measured: DepthFrame, reference: DepthFrame) -> ReliabilityTarget:
    """1 where measured is valid and within eps(D*) of the reference, else 0."""
    scored = _scored(measured, reference)
    err = np.abs(measured.values - reference.values)
    hit = scored & (err < tolerance(reference.values))
    return ReliabilityTarget(hit.astype(np.float64), "binary")


def soft_target(measured: DepthFrame, reference: DepthFrame) -> ReliabilityTarget:
    """exp(-|D - D*| / sigma(D*)) on jointly valid pixels, 0 elsewhere."""
    scored = _scored(measured, reference)
    err = np.abs(measured.values - reference.values)
    sigma = np.where(scored, tolerance(reference.values), 1.0)
    values = np.where(scored, np.exp(-err / sigma), 0.0)
    return ReliabilityTarget(values, "soft")


def make_target(measured: DepthFrame, reference: DepthFrame, mode: TargetMode) -> ReliabilityTarget:
    if mode == "binary":
        return binary_target(measured, reference)
    if mode == "soft":
        return soft_target(measured, reference)
    raise ValueError(f"mode must be 'binary' or 'soft', got {mode!r}")


@dataclass(frozen=True)
class HeuristicParams:
    """
    Scales of the heuristic reliability factors.

    Parameters
    ----------
    variance_scale : float
        Local 3x3 depth std is compared against variance_scale * d.
    temporal_scale : float
        |D_t - D_{t-1}| is compared against temporal_scale * d.
    saturation_knee : float
        Minimum RGB channel above which a pixel counts as specular.
    """

    variance_scale: float = 0.1
    temporal_scale: float = 0.1
    saturation_knee: float = 0.85


def local_depth_std(depth: DepthFrame) -> np.ndarray:
    """Standard deviation of valid depths in each 3x3 neighborhood."""
    padded = np.pad(np.where(depth.validity, depth.values, np.nan), 1, constant_values=np.nan)
    windows = sliding_window_view(padded, (3, 3)).reshape(depth.height, depth.width, 9)
    valid = np.isfinite(windows)
    count = np.maximum(valid.sum(axis=-1), 1)
    filled = np.where(valid, windows, 0.0)
    mean = filled.sum(axis=-1) / count
    var = np.where(valid, (filled - mean[..., None]) ** 2, 0.0).sum(axis=-1) / count
    return np.sqrt(var)


def heuristic_reliability(
    rgb: RgbFrame,
    depth: DepthFrame,
    prev_depth: Optional[DepthFrame] = None,
    params: HeuristicParams = HeuristicParams(),
) -> ReliabilityMap:
    """
    Non-learned reliability estimate.

    Product of four factors in [0, 1]: validity, exp(-std3x3 / (k_v d)),
    exp(-|D_t - D_{t-1}| / (k_t d)) where both frames are valid (1
    otherwise), and a saturation factor falling linearly from 1 at the
    knee to 0 at full white.
    """
    _check_shapes(rgb.shape, depth.shape)
    if prev_depth is not None:
        _check_shapes(depth.shape, prev_depth.shape)
    d = np.where(depth.validity, depth.values, 1.0)

    variance = np.exp(-local_depth_std(depth) / (params.variance_scale * d))

    temporal = np.ones(depth.shape)
    if prev_depth is not None:
        both = depth.validity & prev_depth.validity
        diff = np.abs(depth.values - prev_depth.values)
        temporal = np.where(both, np.exp(-diff / (params.temporal_scale * d)), 1.0)

    min_channel = rgb.values.min(axis=2)
    saturation = np.clip((1.0 - min_channel) / (1.0 - params.saturation_knee), 0.0, 1.0)

    values = depth.validity * variance * temporal * saturation
    return ReliabilityMap(np.clip(values, 0.0, 1.0))


def temporal_difference(depth: DepthFrame, prev_depth: Optional[DepthFrame]) -> np.ndarray:
    """|D_t - D_{t-1}| / range_max where both are valid, else 0."""
    if prev_depth is None:
        return np.zeros(depth.shape)
    _check_shapes(depth.shape, prev_depth.shape)
    both = depth.validity & prev_depth.validity
    return np.where(both, np.abs(depth.values - prev_depth.values) / RANGE_MAX, 0.0)


def low_reliability_fraction(reliability: ReliabilityMap, depth: DepthFrame, tau_r: float) -> float:
    """Fraction of valid pixels whose reliability is at most ``tau_r``."""
    _check_shapes(reliability.shape, depth.shape)
    n_valid = int(depth.validity.sum())
    if n_valid == 0:
        return 1.0
    low = depth.validity & (reliability.values <= tau_r)
    return float(low.sum()) / n_valid


def drm_loss(pred: ReliabilityMap, target: ReliabilityTarget) -> float:
    """Mean absolute difference over the image domain."""
    _check_shapes(pred.shape, target.shape)
    return float(np.mean(np.abs(pred.values - target.values)))
