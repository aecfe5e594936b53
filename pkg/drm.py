"""
Depth reliability network: a bias-free depthwise-separable encoder/decoder.

Architecture (channels for the default schedule)
------------------------------------------------
- stem: 3x3 convolution 5 -> 16, ReLU
- encoder: four blocks, each depthwise 3x3 stride 2 + pointwise 1x1 + ReLU,
  16 -> 32 -> 64 -> 96 -> 128
- decoder: four blocks, each bilinear upsample to the skip resolution,
  depthwise 3x3 + pointwise 1x1 + ReLU, then an additive skip,
  128 -> 96 -> 64 -> 32 -> 16
- head: 1x1 convolution 16 -> 1, sigmoid

The network runs at a working resolution (320x240 by default); inputs are
bilinearly resampled to it and the output back to native resolution.
Tensors are float64, channels-first (N, C, H, W). Weights live in one flat
array in layer order.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DomainError, ModelError, ShapeError
from logging_config import PipelineLogger
from reliability import (
    ReliabilityMap,
    TargetMode,
    make_target,
    reference_depth,
    temporal_difference,
)
from scenegen import RANGE_MAX, Dataset, DepthFrame, RgbFrame


INPUT_CHANNELS = 5
REFERENCE_TOTAL_PARAMS = 61936
MODEL_FORMAT = "glarecost-drm/1"


# ============================================================================
# Schedule
# ============================================================================


@dataclass(frozen=True)
class DrmSchedule:
    """
    Channel schedule of the network.

    Parameters
    ----------
    stem_channels : int
        Output channels of the stem convolution.
    encoder_channels : Tuple[int, ...]
        Output channels of each stride-2 encoder block; the decoder mirrors
        them back down to ``stem_channels``.
    """

    stem_channels: int = 16
    encoder_channels: Tuple[int, ...] = (32, 64, 96, 128)

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.stem_channels < 1 or not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ModelError("Channel counts must be positive and the encoder non-empty")

    def encoder_pairs(self) -> List[Tuple[int, int]]:
        chans = (self.stem_channels,) + self.encoder_channels
        return list(zip(chans[:-1], chans[1:]))

    def decoder_pairs(self) -> List[Tuple[int, int]]:
        return [(co, ci) for ci, co in reversed(self.encoder_pairs())]

    def layer_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """(name, shape) of every weight tensor in flat-array order."""
        shapes: List[Tuple[str, Tuple[int, ...]]] = [
            ("stem", (self.stem_channels, INPUT_CHANNELS, 3, 3))
        ]
        for i, (ci, co) in enumerate(self.encoder_pairs()):
            shapes.append((f"enc{i}.dw", (ci, 3, 3)))
            shapes.append((f"enc{i}.pw", (co, ci)))
        for i, (ci, co) in enumerate(self.decoder_pairs()):
            shapes.append((f"dec{i}.dw", (ci, 3, 3)))
            shapes.append((f"dec{i}.pw", (co, ci)))
        shapes.append(("head", (1, self.stem_channels)))
        return shapes

    def block_counts(self) -> Dict[str, int]:
        """Parameter count per stem/encoder/decoder block and head."""
        counts: Dict[str, int] = {}
        for name, shape in self.layer_shapes():
            block = name.split(".")[0]
            counts[block] = counts.get(block, 0) + int(np.prod(shape))
        return counts

    def group_counts(self) -> Dict[str, int]:
        """Parameter totals for stem, encoder, decoder and head."""
        groups = {"stem": 0, "encoder": 0, "decoder": 0, "head": 0}
        for block, n in self.block_counts().items():
            if block.startswith("enc"):
                groups["encoder"] += n
            elif block.startswith("dec"):
                groups["decoder"] += n
            else:
                groups[block] += n
        return groups

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layer_shapes())

    def macs(self, width: int, height: int) -> int:
        """Multiply-accumulates of one forward pass at ``width`` x ``height``."""
        sizes = [(height, width)]
        for _ in self.encoder_pairs():
            h, w = sizes[-1]
            sizes.append((math.ceil(h / 2), math.ceil(w / 2)))
        total = height * width * INPUT_CHANNELS * 9 * self.stem_channels
        for (ci, co), (h, w) in zip(self.encoder_pairs(), sizes[1:]):
            total += h * w * (9 * ci + ci * co)
        for (ci, co), (h, w) in zip(self.decoder_pairs(), reversed(sizes[:-1])):
            total += h * w * (9 * ci + ci * co)
        return total + height * width * self.stem_channels


# ============================================================================
# Model
# ============================================================================


@dataclass
class DrmModel:
    """
    Network weights plus schedule and training metadata.

    Raises
    ------
    ModelError
        If the weight array length disagrees with the schedule.
    """

    schedule: DrmSchedule
    weights: np.ndarray
    seed: int = 0
    work_size: Tuple[int, int] = (320, 240)
    target_mode: str = "binary"
    loss_curve: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        expected = self.schedule.param_count()
        if self.weights.size != expected:
            raise ModelError(
                f"Schedule needs {expected} weights, array holds {self.weights.size}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ModelError("Weights must be finite")

    @classmethod
    def initialize(
        cls,
        schedule: DrmSchedule = DrmSchedule(),
        seed: int = 0,
        work_size: Tuple[int, int] = (320, 240),
    ) -> "DrmModel":
        """He-initialized model; the head uses a unit-gain scale."""
        rng = np.random.default_rng(seed)
        parts = []
        for name, shape in schedule.layer_shapes():
            if name == "stem":
                fan_in = INPUT_CHANNELS * 9
            elif name.endswith(".dw"):
                fan_in = 9
            else:
                fan_in = shape[1]
            gain = 1.0 if name == "head" else 2.0
            parts.append(rng.standard_normal(int(np.prod(shape))) * math.sqrt(gain / fan_in))
        return cls(schedule, np.concatenate(parts), seed=seed, work_size=work_size)

    @classmethod
    def zeros(cls, schedule: DrmSchedule = DrmSchedule(), work_size: Tuple[int, int] = (320, 240)) -> "DrmModel":
        return cls(schedule, np.zeros(schedule.param_count()), work_size=work_size)

    def params(self) -> Dict[str, np.ndarray]:
        """Named views into the flat weight array."""
        out: Dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self.schedule.layer_shapes():
            n = int(np.prod(shape))
            out[name] = self.weights[offset:offset + n].reshape(shape)
            offset += n
        return out

    def metadata(self) -> Dict[str, object]:
        total = self.schedule.param_count()
        return {
            "format": MODEL_FORMAT,
            "schedule": {
                "stem_channels": self.schedule.stem_channels,
                "encoder_channels": list(self.schedule.encoder_channels),
            },
            "work_size": list(self.work_size),
            "seed": self.seed,
            "target_mode": self.target_mode,
            "counts": {
                "groups": self.schedule.group_counts(),
                "blocks": self.schedule.block_counts(),
                "total": total,
                "reference_total": REFERENCE_TOTAL_PARAMS,
                "deviation": total - REFERENCE_TOTAL_PARAMS,
            },
            "macs": self.schedule.macs(*self.work_size),
            "weight_count": total,
            "loss_curve": list(self.loss_curve),
        }


def save_model(model: DrmModel, path: Path) -> None:
    """Write a JSON header line followed by little-endian float32 weights."""
    header = json.dumps(model.metadata(), sort_keys=True).encode("utf-8")
    blob = model.weights.astype("<f4").tobytes()
    Path(path).write_bytes(header + b"\n" + blob)


def load_model(path: Path) -> DrmModel:
    """
    Read a model file.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ModelError
        If the header is malformed or the weight count disagrees with the
        schedule.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ModelError(f"{path}: missing header")
    try:
        meta = json.loads(data[:newline].decode("utf-8"))
        schedule = DrmSchedule(
            meta["schedule"]["stem_channels"], tuple(meta["schedule"]["encoder_channels"])
        )
    except (ValueError, KeyError, TypeError) as e:
        raise ModelError(f"{path}: malformed header ({e})") from None
    if meta.get("format") != MODEL_FORMAT:
        raise ModelError(f"{path}: unsupported format {meta.get('format')!r}")
    blob = data[newline + 1:]
    if len(blob) % 4:
        raise ModelError(f"{path}: weight blob is not a whole number of float32 values")
    weights = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    return DrmModel(
        schedule,
        weights,
        seed=int(meta.get("seed", 0)),
        work_size=tuple(meta.get("work_size", (320, 240))),
        target_mode=str(meta.get("target_mode", "binary")),
        loss_curve=tuple(meta.get("loss_curve", ())),
    )


def write_loss_csv(model: DrmModel, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(model.loss_curve):
            writer.writerow([epoch, f"{loss:.9f}"])


# ============================================================================
# Layers
# ============================================================================


def resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """
    Bilinear interpolation matrix with half-pixel centers and clamped edges.

    Equal sizes give the identity.
    """
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample of the last two axes."""
    rh = resize_matrix(height, x.shape[-2])
    rw = resize_matrix(width, x.shape[-1])
    return np.matmul(np.matmul(rh, x), rw.T)


def _resize_backward(g: np.ndarray, height: int, width: int) -> np.ndarray:
    rh = resize_matrix(g.shape[-2], height)
    rw = resize_matrix(g.shape[-1], width)
    return np.matmul(np.matmul(rh.T, g), rw)


def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Dense 3x3 convolution, padding 1, stride 1. x (N,Ci,H,W), w (Co,Ci,3,3)."""
    n, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], h, wd))
    for ky in range(3):
        for kx in range(3):
            out += np.einsum("nchw,oc->nohw", xp[:, :, ky:ky + h, kx:kx + wd], w[:, :, ky, kx])
    return out


def _conv3x3_weight_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    _, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dw = np.zeros((g.shape[1], x.shape[1], 3, 3))
    for ky in range(3):
        for kx in range(3):
            dw[:, :, ky, kx] = np.einsum("nohw,nchw->oc", g, xp[:, :, ky:ky + h, kx:kx + wd])
    return dw


def depthwise_conv(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """Per-channel 3x3 convolution, padding 1. x (N,C,H,W), w (C,3,3)."""
    _, _, h, wd = x.shape
    ho, wo = _out_size(h, stride), _out_size(wd, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros(x.shape[:2] + (ho, wo))
    for ky in range(3):
        for kx in range(3):
            patch = xp[:, :, ky:ky + stride * (ho - 1) + 1:stride, kx:kx + stride * (wo - 1) + 1:stride]
            out += patch * w[None, :, ky, kx, None, None]
    return out


def _depthwise_backward(
    x: np.ndarray, w: np.ndarray, g: np.ndarray, stride: int
) -> Tuple[np.ndarray, np.ndarray]:
    _, _, h, wd = x.shape
    ho, wo = g.shape[-2:]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for ky in range(3):
        for kx in range(3):
            rows = slice(ky, ky + stride * (ho - 1) + 1, stride)
            cols = slice(kx, kx + stride * (wo - 1) + 1, stride)
            dw[:, ky, kx] = np.einsum("nchw,nchw->c", g, xp[:, :, rows, cols])
            dxp[:, :, rows, cols] += g * w[None, :, ky, kx, None, None]
    return dxp[:, :, 1:h + 1, 1:wd + 1], dw


def pointwise_conv(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """1x1 convolution. x (N,Ci,H,W), w (Co,Ci)."""
    return np.einsum("nchw,oc->nohw", x, w)


def _pointwise_backward(x: np.ndarray, w: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.einsum("nohw,oc->nchw", g, w), np.einsum("nohw,nchw->oc", g, x)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ============================================================================
# Forward / backward
# ============================================================================


@dataclass
class _Tape:
    """Activations kept by the forward pass for the backward pass."""

    x: np.ndarray
    stem_pre: np.ndarray
    skips: List[np.ndarray]
    enc: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    dec: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    final: Optional[np.ndarray] = None
    out: Optional[np.ndarray] = None


def network_forward(model: DrmModel, x: np.ndarray) -> Tuple[np.ndarray, _Tape]:
    """
    Run the network at the resolution of ``x``.

    Parameters
    ----------
    model : DrmModel
        Weights and schedule.
    x : np.ndarray
        Inputs shaped (N, 5, H, W).

    Returns
    -------
    Tuple[np.ndarray, _Tape]
        Sigmoid outputs (N, H, W) and the activation tape.
    """
    if x.ndim != 4 or x.shape[1] != INPUT_CHANNELS:
        raise ShapeError(f"Network input must be (N, {INPUT_CHANNELS}, H, W), got {x.shape}")
    p = model.params()
    stem_pre = conv3x3(x, p["stem"])
    h = np.maximum(stem_pre, 0.0)
    tape = _Tape(x=x, stem_pre=stem_pre, skips=[h])
    for i in range(len(model.schedule.encoder_channels)):
        a = depthwise_conv(h, p[f"enc{i}.dw"], stride=2)
        b = pointwise_conv(a, p[f"enc{i}.pw"])
        tape.enc.append((h, a, b))
        h = np.maximum(b, 0.0)
        tape.skips.append(h)
    for i in range(len(model.schedule.encoder_channels)):
        skip = tape.skips[-2 - i]
        u = resize(h, skip.shape[-2], skip.shape[-1])
        a = depthwise_conv(u, p[f"dec{i}.dw"], stride=1)
        b = pointwise_conv(a, p[f"dec{i}.pw"])
        tape.dec.append((h, u, a, b))
        h = np.maximum(b, 0.0) + skip
    tape.final = h
    out = sigmoid(pointwise_conv(h, p["head"])[:, 0])
    tape.out = out
    return out, tape


def network_backward(model: DrmModel, tape: _Tape, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of a scalar w.r.t. the flat weights, given dL/d(output)."""
    p = model.params()
    grads = {name: np.zeros_like(w) for name, w in p.items()}
    skip_grads = [np.zeros_like(s) for s in tape.skips]

    gz = grad_out * tape.out * (1.0 - tape.out)
    g, dw = _pointwise_backward(tape.final, p["head"], gz[:, None])
    grads["head"] += dw

    k = len(model.schedule.encoder_channels)
    for i in reversed(range(k)):
        h_in, u, a, b = tape.dec[i]
        skip_grads[-2 - i] += g
        gb = g * (b > 0)
        ga, dw = _pointwise_backward(a, p[f"dec{i}.pw"], gb)
        grads[f"dec{i}.pw"] += dw
        gu, dw = _depthwise_backward(u, p[f"dec{i}.dw"], ga, stride=1)
        grads[f"dec{i}.dw"] += dw
        g = _resize_backward(gu, h_in.shape[-2], h_in.shape[-1])

    for i in reversed(range(k)):
        h_in, a, b = tape.enc[i]
        g = g + skip_grads[i + 1]
        gb = g * (b > 0)
        ga, dw = _pointwise_backward(a, p[f"enc{i}.pw"], gb)
        grads[f"enc{i}.pw"] += dw
        g, dw = _depthwise_backward(h_in, p[f"enc{i}.dw"], ga, stride=2)
        grads[f"enc{i}.dw"] += dw

    g = g + skip_grads[0]
    grads["stem"] += _conv3x3_weight_grad(tape.x, g * (tape.stem_pre > 0))
    return np.concatenate([grads[name].ravel() for name, _ in model.schedule.layer_shapes()])


@dataclass
class TrainBatch:
    """Inputs (N, 5, h, w) and targets (N, h, w) at the working resolution."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 4 or self.inputs.shape[1] != INPUT_CHANNELS:
            raise ShapeError(f"Batch inputs must be (N, 5, h, w), got {self.inputs.shape}")
        if self.targets.shape != (self.inputs.shape[0],) + self.inputs.shape[2:]:
            raise ShapeError(
                f"Targets {self.targets.shape} do not match inputs {self.inputs.shape}"
            )

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def subset(self, idx: np.ndarray) -> "TrainBatch":
        return TrainBatch(self.inputs[idx], self.targets[idx])


def batch_loss(model: DrmModel, batch: TrainBatch) -> float:
    """Mean L1 loss over every pixel of every batch element."""
    out, _ = network_forward(model, batch.inputs)
    return float(np.mean(np.abs(out - batch.targets)))


def drm_backward(model: DrmModel, batch: TrainBatch) -> np.ndarray:
    """
    Analytic gradient of the mean L1 loss w.r.t. every weight.

    The subgradient is taken as 0 where prediction equals target.
    """
    out, tape = network_forward(model, batch.inputs)
    grad_out = np.sign(out - batch.targets) / out.size
    return network_backward(model, tape, grad_out)


# ============================================================================
# Inference
# ============================================================================


def drm_inputs(rgb: RgbFrame, depth: DepthFrame, temporal_diff: np.ndarray) -> np.ndarray:
    """Stack the 5 native-resolution input channels, shaped (5, H, W)."""
    if rgb.shape != depth.shape or np.shape(temporal_diff) != depth.shape:
        raise ShapeError(
            f"RGB {rgb.shape}, depth {depth.shape} and temporal difference "
            f"{np.shape(temporal_diff)} must match"
        )
    return np.concatenate([
        np.moveaxis(rgb.values, 2, 0),
        (np.where(depth.validity, depth.values, 0.0) / RANGE_MAX)[None],
        np.asarray(temporal_diff, dtype=np.float64)[None],
    ])


def drm_forward(
    model: DrmModel, rgb: RgbFrame, depth: DepthFrame, temporal_diff: np.ndarray
) -> ReliabilityMap:
    """
    Reliability map at native resolution.

    Inputs are normalized (depth and temporal difference divided by
    range_max, invalid pixels 0), resampled to the model's working
    resolution, run through the network and bilinearly upsampled back.

    Parameters
    ----------
    model : DrmModel
        Trained (or initialized) model.
    rgb : RgbFrame
        Native-resolution color frame.
    depth : DepthFrame
        Native-resolution depth frame.
    temporal_diff : np.ndarray
        |D_t - D_{t-1}| / range_max, see ``reliability.temporal_difference``.

    Returns
    -------
    ReliabilityMap
        Scores in (0, 1).
    """
    x = drm_inputs(rgb, depth, temporal_diff)
    work_w, work_h = model.work_size
    out, _ = network_forward(model, resize(x, work_h, work_w)[None])
    native = resize(out[0], depth.height, depth.width)
    return ReliabilityMap(np.clip(native, 0.0, 1.0))


# ============================================================================
# Training
# ============================================================================


@dataclass(frozen=True)
class TrainConfig:
    """
    DRM training configuration.

    Parameters
    ----------
    learning_rate : float
        SGD step size.
    momentum : float
        Heavy-ball momentum coefficient.
    batch_size : int
        Images per update.
    epochs : int
        Passes over the training set.
    target_mode : str
        'binary' or 'soft' supervision.
    work_width, work_height : int
        Working resolution of the network.
    seed : int
        Seed for initialization and shuffling.
    reference : str
        'clean' uses rendered clean depth as D*; 'temporal' uses the
        temporal median over static dwell segments.
    reference_window : int
        Maximum temporal window for the 'temporal' reference.
    stem_channels : int
        Schedule stem width.
    encoder_channels : Tuple[int, ...]
        Schedule encoder widths.
    """

    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 4
    epochs: int = 30
    target_mode: str = "binary"
    work_width: int = 320
    work_height: int = 240
    seed: int = 0
    reference: str = "clean"
    reference_window: int = 15
    stem_channels: int = 16
    encoder_channels: Tuple[int, ...] = (32, 64, 96, 128)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.work_width < 1 or self.work_height < 1:
            raise ValueError("Working resolution must be positive")
        if self.target_mode not in ("binary", "soft"):
            raise ValueError(f"target_mode must be 'binary' or 'soft', got {self.target_mode!r}")
        if self.reference not in ("clean", "temporal"):
            raise ValueError(f"reference must be 'clean' or 'temporal', got {self.reference!r}")
        if self.reference_window < 3:
            raise ValueError("reference_window must be >= 3")

    @property
    def schedule(self) -> DrmSchedule:
        return DrmSchedule(self.stem_channels, tuple(self.encoder_channels))


def _static_segments(poses: Sequence[object]) -> List[Tuple[int, int]]:
    """[start, end) index ranges of consecutive identical poses."""
    segments = []
    start = 0
    for i in range(1, len(poses) + 1):
        if i == len(poses) or poses[i] != poses[start]:
            segments.append((start, i))
            start = i
    return segments


def build_training_set(datasets: Sequence[Dataset], config: TrainConfig) -> TrainBatch:
    """
    Derive working-resolution inputs and targets from generated sequences.

    Raises
    ------
    DomainError
        If no frames are available or a dataset lacks clean depth.
    """
    inputs: List[np.ndarray] = []
    targets: List[np.ndarray] = []
    for ds in datasets:
        if not ds.has_clean_depth:
            raise DomainError(f"Dataset {ds.root} has no clean depth; regenerate it with simgen")
        frames = [ds.read_frame(i) for i in range(len(ds))]
        references = [f.clean for f in frames]
        if config.reference == "temporal":
            for start, end in _static_segments([f.pose for f in frames]):
                if end - start < 3:
                    continue
                for t in range(start, end):
                    lo = max(start, min(t - config.reference_window // 2, end - config.reference_window))
                    hi = min(end, lo + config.reference_window)
                    references[t] = reference_depth([f.depth for f in frames[lo:hi]])
        prev: Optional[DepthFrame] = None
        for frame, ref in zip(frames, references):
            x = drm_inputs(frame.rgb, frame.depth, temporal_difference(frame.depth, prev))
            target = make_target(frame.depth, ref, config.target_mode)  # type: ignore[arg-type]
            inputs.append(resize(x, config.work_height, config.work_width))
            targets.append(resize(target.values, config.work_height, config.work_width))
            prev = frame.depth
    if not inputs:
        raise DomainError("Training set is empty")
    return TrainBatch(np.stack(inputs), np.clip(np.stack(targets), 0.0, 1.0))


def drm_train(
    dataset: TrainBatch,
    config: TrainConfig,
    logger: Optional[PipelineLogger] = None,
) -> DrmModel:
    """
    Train a model with mini-batch SGD and momentum.

    Parameters
    ----------
    dataset : TrainBatch
        Working-resolution inputs and targets.
    config : TrainConfig
        Optimizer, schedule and seed.
    logger : Optional[PipelineLogger]
        Receives one EPOCH_DONE event per epoch.

    Returns
    -------
    DrmModel
        Trained model whose ``loss_curve`` holds the full-set loss before
        training (index 0) and after every epoch.

    Raises
    ------
    DomainError
        If the dataset is empty.
    """
    if len(dataset) == 0:
        raise DomainError("Training set is empty")
    if dataset.inputs.shape[2:] != (config.work_height, config.work_width):
        raise ShapeError(
            f"Training inputs {dataset.inputs.shape[2:]} are not at the working "
            f"resolution {(config.work_height, config.work_width)}"
        )
    plog = logger or PipelineLogger()
    work_size = (config.work_width, config.work_height)
    model = DrmModel.initialize(config.schedule, seed=config.seed, work_size=work_size)
    rng = np.random.default_rng([config.seed, 1])
    velocity = np.zeros_like(model.weights)
    weights = model.weights.copy()
    curve = [batch_loss(model, dataset)]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = dataset.subset(order[start:start + config.batch_size])
            grad = drm_backward(DrmModel(model.schedule, weights, work_size=work_size), batch)
            velocity = config.momentum * velocity - config.learning_rate * grad
            weights = weights + velocity
        current = DrmModel(model.schedule, weights, work_size=work_size)
        curve.append(batch_loss(current, dataset))
        plog.log_epoch(epoch, curve[-1], config.learning_rate)

    return DrmModel(
        model.schedule,
        weights,
        seed=config.seed,
        work_size=work_size,
        target_mode=config.target_mode,
        loss_curve=tuple(curve),
    )
