"""
Logging configuration for the glare-resilient costmap pipeline.

Provides structured logging for sequence generation, DRM training,
per-frame fusion, degraded-sensing warnings and navigation trials.
"""

import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Optional


LOGGER_NAME = "glarecost"


class EventType(Enum):
    """Types of loggable pipeline events."""

    SEQUENCE_WRITTEN = "SEQUENCE_WRITTEN"
    EPOCH_DONE = "EPOCH_DONE"
    FRAME_FUSED = "FRAME_FUSED"
    DEGRADED_SENSING = "DEGRADED_SENSING"
    TRIAL_OUTCOME = "TRIAL_OUTCOME"
    CONFIG_HASH = "CONFIG_HASH"


@dataclass(frozen=True)
class FusionFrameEvent:
    """
    Immutable record of one fused frame.

    Parameters
    ----------
    frame_index : int
        Index of the frame in its sequence.
    contributing_pixels : int
        Pixels that passed validity and the reliability threshold.
    touched_cells : int
        Grid cells whose occupancy was updated.
    low_reliability_fraction : float
        Fraction of valid pixels with reliability at or below tau_R.
    reliability_ms : float
        Time spent estimating reliability.
    update_ms : float
        Time spent in the occupancy update.
    """

    frame_index: int
    contributing_pixels: int
    touched_cells: int
    low_reliability_fraction: float
    reliability_ms: float
    update_ms: float


@dataclass(frozen=True)
class TrialEvent:
    """
    Immutable record of one navigation trial.

    Parameters
    ----------
    method : str
        Pipeline name.
    severity : str
        Glare level of the run.
    seed : int
        Corruption seed of the run.
    success : bool
        Whether the planned path reached the goal without crossing O_gt.
    plr : Optional[float]
        Path length ratio, defined for successful trials only.
    """

    method: str
    severity: str
    seed: int
    success: bool
    plr: Optional[float] = None


DEFAULT_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
DEFAULT_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def configure_pipeline_logging(
    level: str = "INFO",
    log_file: Optional[str] = None,
    format_string: Optional[str] = None,
) -> logging.Logger:
    """
    Configure and return the pipeline logger.

    Parameters
    ----------
    level : str
        Log level (DEBUG, INFO, WARNING, ERROR). Default is INFO.
        Can also be set via GLARECOST_LOG_LEVEL environment variable.
    log_file : Optional[str]
        Path to log file. If None, logs only to console.
        Can also be set via GLARECOST_LOG_FILE environment variable.
    format_string : Optional[str]
        Custom format string. If None, uses default format.

    Returns
    -------
    logging.Logger
        Configured logger instance for the pipeline.

    Examples
    --------
    >>> logger = configure_pipeline_logging(level="DEBUG")
    >>> logger.info("[EPOCH_DONE] epoch=1 loss=0.2310")
    """
    level = os.environ.get("GLARECOST_LOG_LEVEL", level).upper()
    log_file = os.environ.get("GLARECOST_LOG_FILE", log_file)

    logger = logging.getLogger(LOGGER_NAME)
    logger.handlers.clear()

    numeric_level = getattr(logging, level, logging.INFO)
    logger.setLevel(numeric_level)

    fmt = format_string or DEFAULT_FORMAT
    formatter = logging.Formatter(fmt, datefmt=DEFAULT_DATE_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(numeric_level)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False

    return logger


def get_pipeline_logger() -> logging.Logger:
    """
    Get the pipeline logger instance.

    If not configured, returns a basic logger with INFO level.

    Returns
    -------
    logging.Logger
        The pipeline logger instance.
    """
    logger = logging.getLogger(LOGGER_NAME)
    if not logger.handlers:
        return configure_pipeline_logging()
    return logger


class PipelineLogger:
    """
    Structured logging helper for pipeline events.

    Parameters
    ----------
    logger : Optional[logging.Logger]
        Logger instance to use. If None, uses the pipeline logger.

    Examples
    --------
    >>> plog = PipelineLogger()
    >>> plog.log_epoch(epoch=3, loss=0.118, learning_rate=0.05)
    """

    def __init__(self, logger: Optional[logging.Logger] = None) -> None:
        self._logger = logger or get_pipeline_logger()

    def log_sequence_written(self, path: str, frames: int, seed: int) -> None:
        """Log a completed synthetic sequence."""
        self._logger.info(
            f"[SEQUENCE_WRITTEN] path={path} frames={frames} seed={seed}"
        )

    def log_epoch(self, epoch: int, loss: float, learning_rate: float) -> None:
        """
        Log the end of a training epoch.

        Parameters
        ----------
        epoch : int
            One-based epoch number.
        loss : float
            Mean training loss over the epoch.
        learning_rate : float
            Learning rate used for the epoch.
        """
        self._logger.info(
            f"[EPOCH_DONE] epoch={epoch} loss={loss:.6f} lr={learning_rate}"
        )

    def log_frame_fused(self, event: FusionFrameEvent) -> None:
        """Log a per-frame fusion record (DEBUG level)."""
        self._logger.debug(
            f"[FRAME_FUSED] frame={event.frame_index} "
            f"pixels={event.contributing_pixels} cells={event.touched_cells} "
            f"low_rel={event.low_reliability_fraction:.3f} "
            f"reliability_ms={event.reliability_ms:.2f} "
            f"update_ms={event.update_ms:.2f}"
        )

    def log_degraded_sensing(
        self, frame_index: int, fraction: float, threshold: float
    ) -> None:
        """
        Warn that low-reliability pixels dominate a frame.

        Parameters
        ----------
        frame_index : int
            Frame index in its sequence.
        fraction : float
            Fraction of valid pixels at or below tau_R.
        threshold : float
            Fraction above which a frame counts as degraded.
        """
        self._logger.warning(
            f"[DEGRADED_SENSING] frame={frame_index} "
            f"low_rel={fraction:.3f} threshold={threshold}"
        )

    def log_trial(self, event: TrialEvent) -> None:
        """Log a navigation trial outcome."""
        msg = (
            f"[TRIAL_OUTCOME] method={event.method} severity={event.severity} "
            f"seed={event.seed} success={event.success}"
        )
        if event.plr is not None:
            msg += f" plr={event.plr:.3f}"
        self._logger.info(msg)

    def log_config_hash(self, config_hash: str, methods: list) -> None:
        """Log the shared-config hash of a comparison."""
        self._logger.info(
            f"[CONFIG_HASH] hash={config_hash} methods={','.join(methods)}"
        )
