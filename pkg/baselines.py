"""
Comparison pipelines: depth preprocessors that feed the shared fusion.

Every baseline hands fuse_frame either modified depth with unit weights
or trivial 0/1 weights, so differences between methods come only from
how corrupted depth is handled.
"""

from collections import deque
from enum import Enum
from typing import Deque, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DomainError
from reliability import RELATIVE_TOLERANCE, ReliabilityMap, masked_lower_median
from scenegen import RANGE_MAX, RANGE_MIN, DepthFrame


DEFAULT_TRUSTED_RANGE = (0.3, 5.0)
DEFAULT_MEDIAN_WINDOW = 3
DEFAULT_PERSISTENCE = 3


class BaselineKind(Enum):
    """Measurement handling of a comparison pipeline."""

    NAIVE = "naive"
    VALIDITY_RANGE = "validity_range"
    SPATIAL_MEDIAN = "spatial_median"
    TEMPORAL_REJECT = "temporal_reject"


def naive_weights(depth: DepthFrame) -> ReliabilityMap:
    """Weight 1 for every valid pixel, 0 for invalid ones."""
    return ReliabilityMap(depth.validity.astype(np.float64))


def validity_range_gate(
    depth: DepthFrame, trusted_range: Tuple[float, float] = DEFAULT_TRUSTED_RANGE
) -> DepthFrame:
    """
    Invalidate pixels outside the trusted depth range.

    Raises
    ------
    DomainError
        If the range is inverted or leaves [0.17, 10.0] m.
    """
    lo, hi = trusted_range
    if not lo < hi:
        raise DomainError(f"Inverted trusted range {trusted_range}")
    if lo < RANGE_MIN or hi > RANGE_MAX:
        raise DomainError(f"Trusted range {trusted_range} outside [{RANGE_MIN}, {RANGE_MAX}]")
    keep = depth.validity & (depth.values >= lo) & (depth.values <= hi)
    return DepthFrame(np.where(keep, depth.values, 0.0), keep)


def spatial_median(depth: DepthFrame, window: int = DEFAULT_MEDIAN_WINDOW) -> DepthFrame:
    """
    Median over the valid pixels of each window x window neighborhood.

    Borders use the truncated neighborhood; a pixel with no valid
    neighbor is invalid. The lower median is used, so every output value
    is one of the neighborhood's samples.

    Raises
    ------
    DomainError
        If ``window`` is even or smaller than 1.
    """
    if window < 1 or window % 2 == 0:
        raise DomainError(f"Median window must be odd and positive, got {window}")
    r = window // 2
    padded_v = np.pad(depth.values, r)
    padded_m = np.pad(depth.validity, r, constant_values=False)
    k = window * window
    samples = sliding_window_view(padded_v, (window, window)).reshape(depth.shape + (k,))
    valid = sliding_window_view(padded_m, (window, window)).reshape(depth.shape + (k,))
    med, count = masked_lower_median(samples, valid, axis=-1)
    ok = count > 0
    return DepthFrame(np.where(ok, med, 0.0), ok)


def temporal_reject(
    frames: Sequence[DepthFrame],
    agreement_tol: float = RELATIVE_TOLERANCE,
    persistence: int = DEFAULT_PERSISTENCE,
) -> DepthFrame:
    """
    Keep a pixel of the newest frame only if the last M frames agree.

    A pixel agrees when it is valid in each of the last ``persistence``
    frames and every sample lies within ``agreement_tol * d`` of the
    newest value d. With fewer than M frames nothing is kept.

    Raises
    ------
    DomainError
        If the window holds fewer than 2 frames.
    """
    if len(frames) < 2:
        raise DomainError(f"Temporal window needs at least 2 frames, got {len(frames)}")
    if persistence < 1:
        raise DomainError(f"persistence must be >= 1, got {persistence}")
    newest = frames[-1]
    if len(frames) < persistence:
        return DepthFrame(np.zeros(newest.shape), np.zeros(newest.shape, dtype=bool))
    keep = newest.validity.copy()
    for frame in frames[-persistence:-1]:
        if frame.shape != newest.shape:
            raise DomainError(f"Frame shapes differ: {frame.shape} vs {newest.shape}")
        close = np.abs(frame.values - newest.values) <= agreement_tol * newest.values
        keep &= frame.validity & close
    return DepthFrame(np.where(keep, newest.values, 0.0), keep)


class TemporalRejector:
    """
    Sliding window for temporal_reject; one instance per pipeline run.

    Examples
    --------
    >>> rejector = TemporalRejector(persistence=3)
    >>> filtered = rejector.push(depth_frame)
    """

    def __init__(
        self,
        persistence: int = DEFAULT_PERSISTENCE,
        agreement_tol: float = RELATIVE_TOLERANCE,
    ) -> None:
        if persistence < 1:
            raise DomainError(f"persistence must be >= 1, got {persistence}")
        self.persistence = persistence
        self.agreement_tol = agreement_tol
        self._window: Deque[DepthFrame] = deque(maxlen=persistence)

    def push(self, depth: DepthFrame) -> DepthFrame:
        self._window.append(depth)
        if len(self._window) < self.persistence:
            return DepthFrame(np.zeros(depth.shape), np.zeros(depth.shape, dtype=bool))
        if self.persistence == 1:
            return depth
        return temporal_reject(list(self._window), self.agreement_tol, self.persistence)


def preprocess(
    kind: BaselineKind,
    depth: DepthFrame,
    rejector: Optional[TemporalRejector] = None,
    trusted_range: Tuple[float, float] = DEFAULT_TRUSTED_RANGE,
    window: int = DEFAULT_MEDIAN_WINDOW,
) -> DepthFrame:
    """Apply the depth handling of ``kind`` to one frame."""
    if kind is BaselineKind.NAIVE:
        return depth
    if kind is BaselineKind.VALIDITY_RANGE:
        return validity_range_gate(depth, trusted_range)
    if kind is BaselineKind.SPATIAL_MEDIAN:
        return spatial_median(depth, window)
    if rejector is None:
        raise ValueError("temporal_reject needs a TemporalRejector")
    return rejector.push(depth)
