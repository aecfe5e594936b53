"""
Synthetic glare scenes: worlds, ray-cast RGB-D rendering, glare corruption.

A World is 2-D geometry (walls, boxes) extruded over height bands, with
glare patches tagged L0-L2 lying on the floor or on vertical surfaces.
Frames are rendered by casting one ray per pixel; corruption injects
holes and positive depth spikes inside glare regions plus zero-mean
range-dependent noise everywhere.

Conventions
-----------
- World frame: x forward at yaw 0, y left, z up; floor at z = 0.
- Camera optical frame: x right, y down, z forward; depth is the
  optical-axis coordinate of the hit point.
- Invalid depth pixels carry the sentinel 0.0 and validity False.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, DomainError, ShapeError
from logging_config import PipelineLogger
from netpbm import read_netpbm, write_netpbm


RANGE_MIN = 0.17
RANGE_MAX = 10.0
INVALID_DEPTH = 0.0

SeverityLevel = Literal["L0", "L1", "L2"]
SEVERITY_LEVELS: Tuple[str, ...] = ("L0", "L1", "L2")
# severity mask code -> PGM sample
SEVERITY_PGM = (0, 128, 255)

SurfaceKind = Literal["floor", "wall"]

_SURFACE_NONE, _SURFACE_FLOOR, _SURFACE_WALL, _SURFACE_BOX = 0, 1, 2, 3

FLOOR_COLOR = (0.35, 0.35, 0.33)
WALL_COLORS = ((0.62, 0.60, 0.55), (0.55, 0.57, 0.60), (0.58, 0.55, 0.52))
BOX_COLOR = (0.55, 0.40, 0.25)
# near-saturated highlight per severity code; L0 patches are not visible
GLARE_INTENSITY = (None, 0.90, 0.98)


def severity_code(level: str) -> int:
    """Map 'L0'/'L1'/'L2' to mask code 0/1/2."""
    if level not in SEVERITY_LEVELS:
        raise ValueError(f"Severity must be one of {SEVERITY_LEVELS}, got {level!r}")
    return SEVERITY_LEVELS.index(level)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.atan2(math.sin(yaw), math.cos(yaw))
    return math.pi if wrapped <= -math.pi else wrapped


# ============================================================================
# Geometry
# ============================================================================


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned bounding box of a world, meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"Degenerate bounds {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class Wall:
    """Vertical wall segment occupying z in [0, height]."""

    x0: float
    y0: float
    x1: float
    y1: float
    height: float = 2.5


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangular obstacle occupying z in [z_min, z_max]."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    z_min: float = 0.0
    z_max: float = 1.0

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"Degenerate box footprint {self}")
        if not self.z_max > self.z_min >= 0.0:
            raise ValueError(f"Box height band must satisfy 0 <= z_min < z_max: {self}")

    def edges(self) -> List[Tuple[float, float, float, float]]:
        return [
            (self.x_min, self.y_min, self.x_max, self.y_min),
            (self.x_max, self.y_min, self.x_max, self.y_max),
            (self.x_max, self.y_max, self.x_min, self.y_max),
            (self.x_min, self.y_max, self.x_min, self.y_min),
        ]


@dataclass(frozen=True)
class GlarePatch:
    """
    Reflective region tagged with a glare severity.

    A floor patch is the rectangle on the floor plane; a wall patch marks
    every wall/box surface point whose footprint lies inside the rectangle.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    severity: str = "L2"
    surface: str = "floor"

    def __post_init__(self) -> None:
        severity_code(self.severity)
        if self.surface not in ("floor", "wall"):
            raise ValueError(f"surface must be 'floor' or 'wall', got {self.surface!r}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"Degenerate glare patch {self}")

    def overlaps(self, box: Box) -> bool:
        return (
            self.x_min < box.x_max
            and self.x_max > box.x_min
            and self.y_min < box.y_max
            and self.y_max > box.y_min
        )


@dataclass(frozen=True)
class World:
    """
    Static synthetic scene.

    Parameters
    ----------
    bounds : Bounds
        Region containing all geometry.
    walls : Tuple[Wall, ...]
        Wall segments.
    boxes : Tuple[Box, ...]
        Box obstacles.
    glare_patches : Tuple[GlarePatch, ...]
        Reflective regions.
    name : str
        Scenario name.
    """

    bounds: Bounds
    walls: Tuple[Wall, ...] = ()
    boxes: Tuple[Box, ...] = ()
    glare_patches: Tuple[GlarePatch, ...] = ()
    name: str = "unnamed"

    def __post_init__(self) -> None:
        b = self.bounds
        eps = 1e-9
        for i, w in enumerate(self.walls):
            for x, y in ((w.x0, w.y0), (w.x1, w.y1)):
                if not (b.x_min - eps <= x <= b.x_max + eps and b.y_min - eps <= y <= b.y_max + eps):
                    raise ConfigError(f"walls[{i}]", "segment leaves the world bounds")
        for i, box in enumerate(self.boxes):
            if box.x_min < b.x_min - eps or box.x_max > b.x_max + eps or \
                    box.y_min < b.y_min - eps or box.y_max > b.y_max + eps:
                raise ConfigError(f"boxes[{i}]", "footprint leaves the world bounds")
        for i, patch in enumerate(self.glare_patches):
            if patch.x_min < b.x_min - eps or patch.x_max > b.x_max + eps or \
                    patch.y_min < b.y_min - eps or patch.y_max > b.y_max + eps:
                raise ConfigError(f"glare_patches[{i}]", "patch leaves the world bounds")
            if patch.surface == "floor":
                for j, box in enumerate(self.boxes):
                    if patch.overlaps(box):
                        raise ConfigError(
                            f"glare_patches[{i}]", f"overlaps the footprint of boxes[{j}]"
                        )

    def with_severity(self, level: str) -> "World":
        """Return a copy whose glare patches all carry ``level``."""
        severity_code(level)
        patches = tuple(
            GlarePatch(p.x_min, p.y_min, p.x_max, p.y_max, level, p.surface)
            for p in self.glare_patches
        )
        return World(self.bounds, self.walls, self.boxes, patches, self.name)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("Image dimensions must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("Focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("Principal point must lie inside the image")

    @classmethod
    def d435(cls) -> "CameraIntrinsics":
        """848x480 depth stream with an ~87 degree horizontal field of view."""
        return cls(width=848, height=480, fx=430.0, fy=430.0, cx=424.0, cy=240.0)

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics of the same camera resampled to ``width`` x ``height``."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            width=width,
            height=height,
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
        )


@dataclass(frozen=True)
class Pose:
    """Planar robot pose with camera mounting height ``z``."""

    x: float
    y: float
    yaw: float
    z: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def rotation(self) -> np.ndarray:
        """3x3 rotation taking camera optical coordinates to world."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        right = (s, -c, 0.0)
        down = (0.0, 0.0, -1.0)
        forward = (c, s, 0.0)
        return np.array([right, down, forward], dtype=np.float64).T

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform T_{w<-c}."""
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = (self.x, self.y, self.z)
        return T


# ============================================================================
# Frames and corruption parameters
# ============================================================================


@dataclass
class DepthFrame:
    """
    Per-pixel metric depth with an explicit validity mask.

    Invalid pixels hold INVALID_DEPTH; every valid value lies in
    [RANGE_MIN, RANGE_MAX].
    """

    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.validity.shape:
            raise ShapeError(
                f"Depth values {self.values.shape} and validity "
                f"{self.validity.shape} must be equal 2-D shapes"
            )
        self.values = np.where(self.validity, self.values, INVALID_DEPTH)
        v = self.values[self.validity]
        if v.size and (v.min() < RANGE_MIN - 1e-12 or v.max() > RANGE_MAX + 1e-12):
            raise DomainError("Valid depth outside [0.17, 10.0] m")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthFrame":
        """Build a frame, marking non-finite or out-of-range samples invalid."""
        values = np.asarray(values, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(values) & (values >= RANGE_MIN) & (values <= RANGE_MAX)
        return cls(np.where(valid, values, INVALID_DEPTH), valid)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass
class RgbFrame:
    """RGB image with channels in [0, 1], shaped (height, width, 3)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ShapeError(f"RGB frame must be (H, W, 3), got {self.values.shape}")
        self.values = np.clip(self.values, 0.0, 1.0)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))


@dataclass(frozen=True)
class CorruptionParams:
    """
    Glare measurement model.

    Parameters
    ----------
    hole_prob : Tuple[float, float, float]
        Hole probability for L0, L1, L2 pixels.
    spike_prob : Tuple[float, float, float]
        Spike probability for L0, L1, L2 pixels.
    spike_bias_range : Tuple[float, float]
        Uniform positive depth bias of a spike, meters.
    noise_coeff : float
        Noise std is noise_coeff * d**2.
    seed : int
        Base seed; frame streams derive from (seed, frame index).
    """

    hole_prob: Tuple[float, float, float] = (0.01, 0.25, 0.55)
    spike_prob: Tuple[float, float, float] = (0.005, 0.15, 0.30)
    spike_bias_range: Tuple[float, float] = (0.5, 3.0)
    noise_coeff: float = 0.0025
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hole_prob", tuple(float(p) for p in self.hole_prob))
        object.__setattr__(self, "spike_prob", tuple(float(p) for p in self.spike_prob))
        object.__setattr__(
            self, "spike_bias_range", tuple(float(b) for b in self.spike_bias_range)
        )
        if len(self.hole_prob) != 3 or len(self.spike_prob) != 3:
            raise ValueError("hole_prob and spike_prob need one value per level L0-L2")
        for name, probs in (("hole_prob", self.hole_prob), ("spike_prob", self.spike_prob)):
            if any(not 0.0 <= p <= 1.0 for p in probs):
                raise ValueError(f"{name} values must be in [0, 1]")
            if not probs[0] <= probs[1] <= probs[2]:
                raise ValueError(f"{name} must be non-decreasing from L0 to L2")
        if any(h + s > 1.0 for h, s in zip(self.hole_prob, self.spike_prob)):
            raise ValueError("hole_prob + spike_prob must not exceed 1 at any level")
        lo, hi = self.spike_bias_range
        if not 0.0 < lo <= hi:
            raise ValueError("spike_bias_range must be strictly positive and ordered")
        if self.noise_coeff < 0:
            raise ValueError("noise_coeff must be non-negative")

    def with_seed(self, seed: int) -> "CorruptionParams":
        return CorruptionParams(
            self.hole_prob, self.spike_prob, self.spike_bias_range, self.noise_coeff, seed
        )


# ============================================================================
# World construction
# ============================================================================


def _pair(cfg: Mapping[str, Any], key: str, where: str) -> Tuple[float, float]:
    try:
        x, y = cfg[key]
        return float(x), float(y)
    except KeyError:
        raise ConfigError(f"{where}.{key}", "missing") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", "expected a pair of numbers") from None


def _rect_walls(lo: Tuple[float, float], hi: Tuple[float, float], height: float) -> List[Wall]:
    (x0, y0), (x1, y1) = lo, hi
    return [
        Wall(x0, y0, x1, y0, height),
        Wall(x1, y0, x1, y1, height),
        Wall(x1, y1, x0, y1, height),
        Wall(x0, y1, x0, y0, height),
    ]


def build_world(scenario_config: Mapping[str, Any]) -> World:
    """
    Build a World from a scenario mapping.

    Recognised keys: ``name``, ``bounds`` ([x_min, y_min, x_max, y_max]),
    ``wall_height``, ``room`` / ``corridor`` ({min, max}: four boundary
    walls), ``walls`` ([[x0, y0, x1, y1], ...]), ``boxes`` ({min, max, z}),
    ``glare_patches`` ({min, max, severity, surface}).

    Parameters
    ----------
    scenario_config : Mapping[str, Any]
        Parsed scenario (see ``config.load_scenario``).

    Returns
    -------
    World
        Deterministic world; equal configs give equal worlds.

    Raises
    ------
    ConfigError
        Naming the offending key when the config is malformed or violates
        a World invariant.
    """
    cfg = scenario_config
    name = str(cfg.get("name", "unnamed"))
    try:
        wall_height = float(cfg.get("wall_height", 2.5))
    except (TypeError, ValueError):
        raise ConfigError("wall_height", "expected a number") from None

    walls: List[Wall] = []
    for key in ("room", "corridor"):
        if key in cfg:
            lo = _pair(cfg[key], "min", key)
            hi = _pair(cfg[key], "max", key)
            if not (hi[0] > lo[0] and hi[1] > lo[1]):
                raise ConfigError(key, "max must exceed min")
            walls.extend(_rect_walls(lo, hi, wall_height))
    for i, seg in enumerate(cfg.get("walls", [])):
        try:
            x0, y0, x1, y1 = (float(v) for v in seg)
        except (TypeError, ValueError):
            raise ConfigError(f"walls[{i}]", "expected [x0, y0, x1, y1]") from None
        walls.append(Wall(x0, y0, x1, y1, wall_height))

    boxes: List[Box] = []
    for i, spec in enumerate(cfg.get("boxes", [])):
        where = f"boxes[{i}]"
        (x0, y0), (x1, y1) = _pair(spec, "min", where), _pair(spec, "max", where)
        z0, z1 = _pair(spec, "z", where) if "z" in spec else (0.0, 1.0)
        try:
            boxes.append(Box(x0, y0, x1, y1, z0, z1))
        except ValueError as e:
            raise ConfigError(where, str(e)) from None

    patches: List[GlarePatch] = []
    for i, spec in enumerate(cfg.get("glare_patches", [])):
        where = f"glare_patches[{i}]"
        (x0, y0), (x1, y1) = _pair(spec, "min", where), _pair(spec, "max", where)
        severity = spec.get("severity", "L2")
        if severity not in SEVERITY_LEVELS:
            raise ConfigError(f"{where}.severity", f"must be one of {SEVERITY_LEVELS}")
        surface = spec.get("surface", "floor")
        if surface not in ("floor", "wall"):
            raise ConfigError(f"{where}.surface", "must be 'floor' or 'wall'")
        try:
            patches.append(GlarePatch(x0, y0, x1, y1, severity, surface))
        except ValueError as e:
            raise ConfigError(where, str(e)) from None

    if "bounds" in cfg:
        try:
            bx0, by0, bx1, by1 = (float(v) for v in cfg["bounds"])
            bounds = Bounds(bx0, by0, bx1, by1)
        except (TypeError, ValueError):
            raise ConfigError("bounds", "expected [x_min, y_min, x_max, y_max]") from None
    else:
        xs = [w.x0 for w in walls] + [w.x1 for w in walls] + \
            [b.x_min for b in boxes] + [b.x_max for b in boxes]
        ys = [w.y0 for w in walls] + [w.y1 for w in walls] + \
            [b.y_min for b in boxes] + [b.y_max for b in boxes]
        if not xs:
            raise ConfigError("bounds", "required when the scenario has no geometry")
        bounds = Bounds(min(xs), min(ys), max(xs), max(ys))

    return World(bounds, tuple(walls), tuple(boxes), tuple(patches), name)


# ============================================================================
# Rendering
# ============================================================================


@dataclass
class RayHits:
    """Per-pixel result of casting the camera rays into a world."""

    depth: np.ndarray
    surface: np.ndarray
    surface_index: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray


def _pixel_rays(pose: Pose, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, ...]:
    u = np.arange(intrinsics.width, dtype=np.float64)
    v = np.arange(intrinsics.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dcx = (uu - intrinsics.cx) / intrinsics.fx
    dcy = (vv - intrinsics.cy) / intrinsics.fy
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    # world direction per unit optical depth
    dwx = c + dcx * s
    dwy = s - dcx * c
    dwz = -dcy
    return dwx, dwy, dwz


def _segment_hits(
    px: float, py: float, dwx: np.ndarray, dwy: np.ndarray,
    x0: float, y0: float, x1: float, y1: float,
) -> np.ndarray:
    """Ray parameter t of the 2-D intersection with a segment (inf if none)."""
    ex, ey = x1 - x0, y1 - y0
    ax, ay = x0 - px, y0 - py
    denom = dwx * ey - dwy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ax * ey - ay * ex) / denom
        s = (ax * dwy - ay * dwx) / denom
    hit = (np.abs(denom) > 1e-15) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    return np.where(hit, t, np.inf)


def cast_rays(world: World, pose: Pose, intrinsics: CameraIntrinsics) -> RayHits:
    """
    Cast one ray per pixel and return the nearest surface hit.

    Raises
    ------
    DomainError
        If the pose lies outside the world bounds or below the floor.
    """
    if not world.bounds.contains(pose.x, pose.y):
        raise DomainError(f"Pose ({pose.x}, {pose.y}) outside world bounds {world.bounds}")
    if pose.z <= 0:
        raise DomainError("Camera height must be above the floor")

    dwx, dwy, dwz = _pixel_rays(pose, intrinsics)
    shape = dwx.shape
    best = np.full(shape, np.inf)
    surface = np.zeros(shape, dtype=np.int8)
    index = np.full(shape, -1, dtype=np.int32)

    def consider(t: np.ndarray, kind: int, idx: int) -> None:
        closer = t < best
        best[closer] = t[closer]
        surface[closer] = kind
        index[closer] = idx

    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dwz < 0, -pose.z / dwz, np.inf)
    fx_ = pose.x + t_floor * dwx
    fy_ = pose.y + t_floor * dwy
    b = world.bounds
    on_floor = (fx_ >= b.x_min) & (fx_ <= b.x_max) & (fy_ >= b.y_min) & (fy_ <= b.y_max)
    consider(np.where(on_floor, t_floor, np.inf), _SURFACE_FLOOR, 0)

    for i, w in enumerate(world.walls):
        t = _segment_hits(pose.x, pose.y, dwx, dwy, w.x0, w.y0, w.x1, w.y1)
        z = pose.z + t * dwz
        consider(np.where((z >= 0.0) & (z <= w.height), t, np.inf), _SURFACE_WALL, i)

    for i, box in enumerate(world.boxes):
        for x0, y0, x1, y1 in box.edges():
            t = _segment_hits(pose.x, pose.y, dwx, dwy, x0, y0, x1, y1)
            z = pose.z + t * dwz
            consider(np.where((z >= box.z_min) & (z <= box.z_max), t, np.inf), _SURFACE_BOX, i)
        for plane_z in (box.z_max, box.z_min):
            if plane_z <= 0.0:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (plane_z - pose.z) / dwz
            hx = pose.x + t * dwx
            hy = pose.y + t * dwy
            inside = (t > 1e-9) & (hx >= box.x_min) & (hx <= box.x_max) & \
                (hy >= box.y_min) & (hy <= box.y_max)
            consider(np.where(inside, t, np.inf), _SURFACE_BOX, i)

    finite = np.isfinite(best)
    t = np.where(finite, best, 0.0)
    return RayHits(
        depth=np.where(finite, best, np.inf),
        surface=np.where(finite, surface, _SURFACE_NONE).astype(np.int8),
        surface_index=index,
        x=pose.x + t * dwx,
        y=pose.y + t * dwy,
        z=pose.z + t * dwz,
    )


def glare_mask_from_hits(world: World, hits: RayHits) -> np.ndarray:
    """Per-pixel severity code (0/1/2) of the glare patch each ray hits."""
    mask = np.zeros(hits.depth.shape, dtype=np.uint8)
    for patch in world.glare_patches:
        code = severity_code(patch.severity)
        if code == 0:
            continue
        if patch.surface == "floor":
            on_surface = hits.surface == _SURFACE_FLOOR
        else:
            on_surface = (hits.surface == _SURFACE_WALL) | (hits.surface == _SURFACE_BOX)
        inside = on_surface & (hits.x >= patch.x_min) & (hits.x <= patch.x_max) & \
            (hits.y >= patch.y_min) & (hits.y <= patch.y_max)
        mask = np.where(inside, np.maximum(mask, code), mask).astype(np.uint8)
    return mask


def _shade(world: World, hits: RayHits, mask: np.ndarray) -> np.ndarray:
    rgb = np.zeros(hits.depth.shape + (3,), dtype=np.float64)
    rgb[hits.surface == _SURFACE_FLOOR] = FLOOR_COLOR
    for i in range(len(world.walls)):
        rgb[(hits.surface == _SURFACE_WALL) & (hits.surface_index == i)] = \
            WALL_COLORS[i % len(WALL_COLORS)]
    rgb[hits.surface == _SURFACE_BOX] = BOX_COLOR
    for code in (1, 2):
        rgb[mask == code] = GLARE_INTENSITY[code]
    return rgb


def render_clean_frame(
    world: World, pose: Pose, intrinsics: CameraIntrinsics
) -> Tuple[RgbFrame, DepthFrame]:
    """
    Render an artifact-free RGB-D frame.

    Depth is the nearest ray-geometry intersection; hits beyond
    RANGE_MAX (or nearer than RANGE_MIN) and escaping rays are invalid.
    Glare patches are shaded near-saturated so RGB carries the cue.

    Raises
    ------
    DomainError
        If the pose is outside the world bounds.
    """
    hits = cast_rays(world, pose, intrinsics)
    mask = glare_mask_from_hits(world, hits)
    return RgbFrame(_shade(world, hits, mask)), DepthFrame.from_values(hits.depth)


def apply_corruption(
    clean: DepthFrame,
    glare_mask: np.ndarray,
    params: CorruptionParams,
    frame_index: int = 0,
) -> DepthFrame:
    """
    Inject holes, spikes and range-dependent noise.

    Each pixel draws one uniform u: u < hole_prob(level) makes a hole,
    otherwise u < hole_prob + spike_prob makes a spike (clean depth plus a
    uniform bias from spike_bias_range). Remaining valid pixels receive
    N(0, (noise_coeff * d**2)**2) noise. Results outside the depth range
    become invalid. The stream is seeded by (params.seed, frame_index), so
    identical inputs give identical frames and a higher level never yields
    fewer holes for the same seed.

    Raises
    ------
    ShapeError
        If the mask shape differs from the frame shape.
    """
    mask = np.asarray(glare_mask)
    if mask.shape != clean.shape:
        raise ShapeError(f"Glare mask {mask.shape} does not match frame {clean.shape}")
    code = np.clip(mask.astype(np.int64), 0, 2)

    rng = np.random.default_rng([params.seed, frame_index])
    u = rng.random(clean.shape)
    lo, hi = params.spike_bias_range
    bias = rng.uniform(lo, hi, clean.shape)
    noise = rng.standard_normal(clean.shape)

    hole_p = np.asarray(params.hole_prob)[code]
    spike_p = np.asarray(params.spike_prob)[code]
    hole = u < hole_p
    spike = ~hole & (u < hole_p + spike_p)

    d = clean.values
    noisy = d + noise * params.noise_coeff * d * d
    corrupted = np.where(spike, d + bias, noisy)
    valid = clean.validity & ~hole & (corrupted >= RANGE_MIN) & (corrupted <= RANGE_MAX)
    return DepthFrame(np.where(valid, corrupted, INVALID_DEPTH), valid)


# ============================================================================
# Trajectories
# ============================================================================


def straight_trajectory(
    start: Tuple[float, float],
    end: Tuple[float, float],
    frames: int,
    z: float = 0.5,
    dwell: int = 1,
) -> List[Pose]:
    """
    Poses evenly spaced from ``start`` to ``end`` facing the direction of travel.

    Each pose is repeated ``dwell`` times, producing static segments.
    """
    if frames < 1 or dwell < 1:
        raise ValueError("frames and dwell must be >= 1")
    yaw = math.atan2(end[1] - start[1], end[0] - start[0])
    stops = max(1, math.ceil(frames / dwell))
    poses: List[Pose] = []
    for k in range(stops):
        a = 0.0 if stops == 1 else k / (stops - 1)
        pose = Pose(start[0] + a * (end[0] - start[0]), start[1] + a * (end[1] - start[1]), yaw, z)
        poses.extend([pose] * dwell)
    return poses[:frames]


def trajectory_from_config(cfg: Mapping[str, Any], frames: Optional[int] = None) -> List[Pose]:
    """
    Read a trajectory from a scenario mapping.

    Either ``trajectory.poses`` ([[x, y, yaw], ...]) or ``trajectory.start``
    / ``trajectory.end`` with ``frames`` and optional ``dwell``.
    ``frames`` overrides the configured frame count.
    """
    traj = cfg.get("trajectory")
    if traj is None:
        raise ConfigError("trajectory", "missing")
    z = float(cfg.get("camera_height", 0.5))
    if "poses" in traj:
        try:
            poses = [Pose(float(p[0]), float(p[1]), float(p[2]), z) for p in traj["poses"]]
        except (TypeError, ValueError, IndexError):
            raise ConfigError("trajectory.poses", "expected [[x, y, yaw], ...]") from None
        if frames is not None:
            poses = [poses[i % len(poses)] for i in range(frames)]
        return poses
    start = _pair(traj, "start", "trajectory")
    end = _pair(traj, "end", "trajectory")
    n = int(frames if frames is not None else traj.get("frames", 20))
    dwell = int(traj.get("dwell", 1))
    return straight_trajectory(start, end, n, z, dwell)


def intrinsics_from_config(cfg: Mapping[str, Any]) -> CameraIntrinsics:
    """Camera intrinsics from ``camera`` ({width, height, fx, fy, cx, cy}) or D435 defaults."""
    cam = cfg.get("camera")
    if cam is None:
        return CameraIntrinsics.d435()
    try:
        return CameraIntrinsics(
            int(cam["width"]), int(cam["height"]), float(cam["fx"]),
            float(cam["fy"]), float(cam["cx"]), float(cam["cy"]),
        )
    except KeyError as e:
        raise ConfigError(f"camera.{e.args[0]}", "missing") from None
    except ValueError as e:
        raise ConfigError("camera", str(e)) from None


# ============================================================================
# Dataset layout
# ============================================================================


def depth_to_millimeters(frame: DepthFrame) -> np.ndarray:
    """16-bit millimeter encoding; 0 marks invalid pixels."""
    mm = np.rint(frame.values * 1000.0)
    return np.where(frame.validity, mm, 0).astype(np.uint16)


def millimeters_to_depth(mm: np.ndarray) -> DepthFrame:
    values = mm.astype(np.float64) / 1000.0
    valid = mm > 0
    return DepthFrame(values, valid)


@dataclass(frozen=True)
class FrameRecord:
    """Manifest entry for one frame."""

    index: int
    rgb: str
    depth: str
    clean: str
    severity: str
    pose: str
    max_severity: str
    glare_pixels: int


@dataclass
class FrameData:
    """One frame loaded from a dataset."""

    rgb: RgbFrame
    depth: DepthFrame
    clean: DepthFrame
    severity_mask: np.ndarray
    pose: Pose


@dataclass
class Dataset:
    """A generated sequence on disk."""

    root: Path
    manifest: Dict[str, Any]
    frames: List[FrameRecord] = field(default_factory=list)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(**self.manifest["intrinsics"])

    @property
    def has_clean_depth(self) -> bool:
        return all((self.root / rec.clean).exists() for rec in self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def read_frame(self, i: int) -> FrameData:
        rec = self.frames[i]
        rgb8, _ = read_netpbm(self.root / rec.rgb)
        depth_mm, _ = read_netpbm(self.root / rec.depth)
        clean_mm, _ = read_netpbm(self.root / rec.clean)
        sev, _ = read_netpbm(self.root / rec.severity)
        pose_cfg = json.loads((self.root / rec.pose).read_text())
        code = np.zeros(sev.shape, dtype=np.uint8)
        code[sev == SEVERITY_PGM[1]] = 1
        code[sev == SEVERITY_PGM[2]] = 2
        return FrameData(
            rgb=RgbFrame(rgb8.astype(np.float64) / 255.0),
            depth=millimeters_to_depth(depth_mm),
            clean=millimeters_to_depth(clean_mm),
            severity_mask=code,
            pose=Pose(**pose_cfg),
        )


def load_dataset(root: Path) -> Dataset:
    """
    Load a dataset manifest.

    Raises
    ------
    FileNotFoundError
        If ``root/manifest.json`` does not exist.
    """
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {path}")
    manifest = json.loads(path.read_text())
    frames = [FrameRecord(**rec) for rec in manifest["frames"]]
    return Dataset(root=root, manifest=manifest, frames=frames)


def generate_sequence(
    world: World,
    trajectory: Sequence[Pose],
    intrinsics: CameraIntrinsics,
    params: CorruptionParams,
    out_dir: Path,
    scenario: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Render, corrupt and write a frame sequence.

    Parameters
    ----------
    world : World
        Scene to render (patch severities as already bound).
    trajectory : Sequence[Pose]
        One pose per frame.
    intrinsics : CameraIntrinsics
        Camera model.
    params : CorruptionParams
        Measurement model; the seed fixes every frame's stream.
    out_dir : Path
        Dataset directory (created if needed).
    scenario : Optional[Mapping[str, Any]]
        Scenario mapping recorded in the manifest.

    Returns
    -------
    Path
        Path of the written ``manifest.json``.

    Raises
    ------
    OSError
        If a file cannot be written; the message names the path.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create dataset directory {out_dir}: {e}") from e

    records: List[Dict[str, Any]] = []
    for i, pose in enumerate(trajectory):
        hits = cast_rays(world, pose, intrinsics)
        mask = glare_mask_from_hits(world, hits)
        rgb = RgbFrame(_shade(world, hits, mask))
        clean = DepthFrame.from_values(hits.depth)
        depth = apply_corruption(clean, mask, params, frame_index=i)

        rec = FrameRecord(
            index=i,
            rgb=f"rgb_{i:06d}.ppm",
            depth=f"depth_{i:06d}.pgm",
            clean=f"clean_{i:06d}.pgm",
            severity=f"severity_{i:06d}.pgm",
            pose=f"pose_{i:06d}.json",
            max_severity=SEVERITY_LEVELS[int(mask.max()) if mask.size else 0],
            glare_pixels=int(np.count_nonzero(mask)),
        )
        target = out_dir / rec.rgb
        try:
            write_netpbm(target, np.rint(rgb.values * 255.0).astype(np.uint8), 255)
            target = out_dir / rec.depth
            write_netpbm(target, depth_to_millimeters(depth), 65535)
            target = out_dir / rec.clean
            write_netpbm(target, depth_to_millimeters(clean), 65535)
            target = out_dir / rec.severity
            write_netpbm(target, np.asarray(SEVERITY_PGM, dtype=np.uint8)[mask], 255)
            target = out_dir / rec.pose
            target.write_text(json.dumps(
                {"x": pose.x, "y": pose.y, "yaw": pose.yaw, "z": pose.z}, sort_keys=True
            ))
        except OSError as e:
            raise OSError(f"Failed writing {target}: {e}") from e
        records.append(asdict(rec))

    manifest = {
        "scenario": dict(scenario) if scenario is not None else {"name": world.name},
        "world": world.name,
        "intrinsics": asdict(intrinsics),
        "params": asdict(params),
        "frames": records,
    }
    path = out_dir / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as e:
        raise OSError(f"Failed writing {path}: {e}") from e
    PipelineLogger().log_sequence_written(str(out_dir), len(records), params.seed)
    return path
