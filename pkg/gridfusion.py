"""
Reliability-guided occupancy fusion on a 2-D grid.

Each valid depth pixel whose weight passes the admission test
back-projects to a world point. The endpoint cell receives occupancy
evidence (obs = 1) when the point lies inside the height band; cells the
ray crosses on its way there receive clearing evidence (obs = 0). Per
frame and per cell the evidence is averaged and folded into the grid:

    p_t = lam * p_{t-1} + (1 - lam) * mean(w * obs)

Cells without evidence keep their value. Binarization uses hysteresis
thresholds; inflation dilates lethal cells by a safety radius.

Grid arrays are indexed [iy, ix]; cell (ix, iy) covers
[origin_x + ix*res, origin_x + (ix+1)*res) x [origin_y + iy*res, ...).
"""

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from errors import DomainError, ShapeError
from netpbm import read_netpbm, write_netpbm
from reliability import ReliabilityMap
from scenegen import RANGE_MAX, RANGE_MIN, CameraIntrinsics, DepthFrame, Pose


FREE = 0
OCCUPIED = 1
UNKNOWN = -1

# costmap PGM samples
PGM_OCCUPIED = 0
PGM_FREE = 254
PGM_UNKNOWN = 205


@dataclass(frozen=True)
class GridSpec:
    """
    Metric 2-D grid geometry.

    Parameters
    ----------
    resolution : float
        Cell side in meters.
    extent : float
        Grid side length in meters; a multiple of ``resolution``.
    origin_x, origin_y : float
        World coordinates of the corner of cell (0, 0).
    height_min, height_max : float
        Height band projected onto the grid.
    """

    resolution: float = 0.05
    extent: float = 12.0
    origin_x: float = -6.0
    origin_y: float = -6.0
    height_min: float = 0.1
    height_max: float = 2.0

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        cells = self.extent / self.resolution
        if self.extent <= 0 or abs(cells - round(cells)) > 1e-6:
            raise ValueError(
                f"extent {self.extent} must be a positive multiple of resolution {self.resolution}"
            )
        if not self.height_max > self.height_min:
            raise ValueError("height_max must exceed height_min")

    @property
    def cells(self) -> int:
        """Cells per side."""
        return int(round(self.extent / self.resolution))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.cells, self.cells)

    def cell_center(self, ix: int, iy: int) -> Tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    def cell_indices(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Unbounded integer cell indices (floor convention)."""
        ix = np.floor((np.asarray(x) - self.origin_x) / self.resolution).astype(np.int64)
        iy = np.floor((np.asarray(y) - self.origin_y) / self.resolution).astype(np.int64)
        return ix, iy

    def in_grid(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        n = self.cells
        return (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)


@dataclass(frozen=True)
class FusionParams:
    """
    Occupancy update parameters.

    Parameters
    ----------
    forgetting : float
        lam in the update; weight of the previous value.
    tau_r : float
        Reliability admission threshold (w > tau_r).
    mode : str
        'weighted' scales evidence by w; 'gated' additionally requires
        ``confirmations`` consecutive frames of occupancy evidence.
    confirmations : int
        K for gated mode.
    mark_clear_range : float
        Maximum horizontal distance for marking and clearing, meters.
    apply_threshold : bool
        False admits every valid pixel in weighted mode.
    """

    forgetting: float = 0.85
    tau_r: float = 0.3
    mode: str = "weighted"
    confirmations: int = 3
    mark_clear_range: float = 5.0
    apply_threshold: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.forgetting <= 1.0:
            raise ValueError(f"forgetting must be in [0, 1], got {self.forgetting}")
        if not 0.0 <= self.tau_r <= 1.0:
            raise ValueError(f"tau_r must be in [0, 1], got {self.tau_r}")
        if self.mode not in ("weighted", "gated"):
            raise ValueError(f"mode must be 'weighted' or 'gated', got {self.mode!r}")
        if self.confirmations < 1:
            raise ValueError(f"confirmations must be >= 1, got {self.confirmations}")
        if self.mark_clear_range <= 0:
            raise ValueError("mark_clear_range must be > 0")


@dataclass(frozen=True)
class CostmapParams:
    """Hysteresis thresholds and inflation radius."""

    t_on: float = 0.7
    t_off: float = 0.5
    inflation_radius: float = 0.55

    def __post_init__(self) -> None:
        if not 0.0 <= self.t_off < self.t_on <= 1.0:
            raise ValueError(f"Need 0 <= t_off < t_on <= 1, got {self.t_off}, {self.t_on}")
        if self.inflation_radius < 0:
            raise ValueError("inflation_radius must be >= 0")


@dataclass
class OccupancyGrid:
    """
    Continuous occupancy over a GridSpec.

    ``observed`` marks cells that ever received evidence; ``streak`` counts
    consecutive frames of occupancy evidence per cell (gated mode).
    """

    spec: GridSpec
    p: np.ndarray
    observed: np.ndarray
    streak: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        for name in ("p", "observed", "streak"):
            if getattr(self, name).shape != self.spec.shape:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != grid {self.spec.shape}")
        if self.p.size and (self.p.min() < 0.0 or self.p.max() > 1.0):
            raise DomainError("Occupancy values must lie in [0, 1]")

    @classmethod
    def empty(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(
            spec,
            np.zeros(spec.shape),
            np.zeros(spec.shape, dtype=bool),
            np.zeros(spec.shape, dtype=np.int64),
        )


@dataclass
class Costmap:
    """
    Ternary costmap: FREE, OCCUPIED or UNKNOWN per cell.

    ``lethal`` marks occupied cells that came from evidence rather than
    inflation; inflation only grows from lethal cells.
    """

    spec: GridSpec
    state: np.ndarray
    lethal: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=np.int8)
        if self.state.shape != self.spec.shape:
            raise ShapeError(f"Costmap shape {self.state.shape} != grid {self.spec.shape}")
        if not np.all(np.isin(self.state, (FREE, OCCUPIED, UNKNOWN))):
            raise DomainError("Costmap states must be FREE, OCCUPIED or UNKNOWN")
        if self.lethal is None:
            self.lethal = self.state == OCCUPIED
        self.lethal = np.asarray(self.lethal, dtype=bool) & (self.state == OCCUPIED)

    @property
    def occupied(self) -> np.ndarray:
        return self.state == OCCUPIED

    @property
    def free(self) -> np.ndarray:
        return self.state == FREE

    @property
    def unknown(self) -> np.ndarray:
        return self.state == UNKNOWN


# ============================================================================
# Projection
# ============================================================================


def backproject(
    pixel: Tuple[float, float], depth: float, intrinsics: CameraIntrinsics, pose: Pose
) -> np.ndarray:
    """
    World point of pixel (u, v) at depth d.

    Raises
    ------
    DomainError
        If ``depth`` is not a valid in-range depth.
    """
    if not (math.isfinite(depth) and RANGE_MIN <= depth <= RANGE_MAX):
        raise DomainError(f"Cannot back-project invalid depth {depth}")
    u, v = pixel
    cam = np.array([
        (u - intrinsics.cx) * depth / intrinsics.fx,
        (v - intrinsics.cy) * depth / intrinsics.fy,
        depth,
    ])
    return pose.rotation() @ cam + np.array([pose.x, pose.y, pose.z])


def backproject_frame(
    depth: DepthFrame, intrinsics: CameraIntrinsics, pose: Pose, mask: np.ndarray
) -> np.ndarray:
    """World points (N, 3) of the pixels selected by ``mask`` (row-major order)."""
    vs, us = np.nonzero(mask)
    d = depth.values[vs, us]
    cam = np.stack([
        (us - intrinsics.cx) * d / intrinsics.fx,
        (vs - intrinsics.cy) * d / intrinsics.fy,
        d,
    ], axis=1)
    return cam @ pose.rotation().T + np.array([pose.x, pose.y, pose.z])


def point_to_cell(point: Sequence[float], spec: GridSpec) -> Optional[Tuple[int, int]]:
    """
    Cell (ix, iy) containing a world point, or None.

    Points outside the grid or outside the height band are rejected.
    Indices are floor((coord - origin) / resolution), so a point on a
    shared cell edge belongs to the cell whose lower edge it is and the
    origin maps to (0, 0).
    """
    x, y, z = (float(c) for c in point)
    if not spec.height_min <= z <= spec.height_max:
        return None
    ix, iy = spec.cell_indices(np.array(x), np.array(y))
    if not spec.in_grid(ix, iy):
        return None
    return int(ix), int(iy)


def _ray_cells(
    start: Tuple[int, int], ends_x: np.ndarray, ends_y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cells stepped by integer lines from ``start`` to each end, end excluded.

    Returns (ray index, ix, iy) for every stepped cell.
    """
    dx = ends_x - start[0]
    dy = ends_y - start[1]
    steps = np.maximum(np.abs(dx), np.abs(dy))
    total = int(steps.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    ray = np.repeat(np.arange(steps.size), steps)
    k = np.arange(total) - np.repeat(np.cumsum(steps) - steps, steps)
    frac = k / steps[ray]
    ix = start[0] + np.floor(frac * dx[ray] + 0.5).astype(np.int64)
    iy = start[1] + np.floor(frac * dy[ray] + 0.5).astype(np.int64)
    return ray, ix, iy


@dataclass(frozen=True)
class FuseStats:
    """Bookkeeping of one fused frame."""

    contributing_pixels: int
    touched_cells: int
    marked_cells: int
    update_ms: float


def fuse_frame_with_stats(
    grid: OccupancyGrid,
    depth: DepthFrame,
    reliability: ReliabilityMap,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    params: FusionParams,
) -> Tuple[OccupancyGrid, FuseStats]:
    """``fuse_frame`` that also reports what the frame contributed."""
    started = time.perf_counter()
    if depth.shape != reliability.shape:
        raise ShapeError(f"Depth {depth.shape} and reliability {reliability.shape} differ")
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ShapeError(
            f"Depth {depth.shape} does not match intrinsics "
            f"{(intrinsics.height, intrinsics.width)}"
        )
    spec = grid.spec
    n = spec.cells
    w_all = reliability.values
    admit = depth.validity.copy()
    if params.mode == "gated" or params.apply_threshold:
        admit &= w_all > params.tau_r

    points = backproject_frame(depth, intrinsics, pose, admit)
    w = w_all[admit]
    ex, ey = spec.cell_indices(points[:, 0], points[:, 1])
    cam_ix, cam_iy = (int(c) for c in spec.cell_indices(np.array(pose.x), np.array(pose.y)))
    horizontal = np.hypot(points[:, 0] - pose.x, points[:, 1] - pose.y)

    in_band = (points[:, 2] >= spec.height_min) & (points[:, 2] <= spec.height_max)
    mark = in_band & (horizontal <= params.mark_clear_range) & spec.in_grid(ex, ey)
    mark_flat = ey[mark] * n + ex[mark]

    evidence = np.zeros(n * n, dtype=bool)
    evidence[mark_flat] = True
    streak = np.where(evidence, grid.streak.ravel() + 1, 0)
    if params.mode == "gated":
        admitted = streak[mark_flat] >= params.confirmations
        mark_flat = mark_flat[admitted]
        mark_w = w[mark][admitted]
    else:
        mark_w = w[mark]

    # bincount of an empty index array is int64 even with weights
    sum_wobs = np.bincount(mark_flat, weights=mark_w, minlength=n * n).astype(np.float64)
    count = np.bincount(mark_flat, minlength=n * n).astype(np.float64)

    # clearing: one traversal per distinct endpoint cell, weighted by ray count
    ends = np.stack([ex, ey], axis=1)
    if ends.size:
        uniq, rays_per_end = np.unique(ends, axis=0, return_counts=True)
        ray, cx, cy = _ray_cells((cam_ix, cam_iy), uniq[:, 0], uniq[:, 1])
        centers_x = spec.origin_x + (cx + 0.5) * spec.resolution
        centers_y = spec.origin_y + (cy + 0.5) * spec.resolution
        keep = spec.in_grid(cx, cy) & (
            np.hypot(centers_x - pose.x, centers_y - pose.y) <= params.mark_clear_range
        )
        count += np.bincount(
            cy[keep] * n + cx[keep], weights=rays_per_end[ray[keep]], minlength=n * n
        )

    touched = count > 0
    mean_wobs = np.divide(sum_wobs, count, out=np.zeros_like(sum_wobs), where=touched)
    lam = params.forgetting
    p = grid.p.ravel()
    p_new = np.where(touched, lam * p + (1.0 - lam) * mean_wobs, p)
    new_grid = OccupancyGrid(
        spec,
        np.clip(p_new, 0.0, 1.0).reshape(spec.shape),
        grid.observed | touched.reshape(spec.shape),
        streak.reshape(spec.shape),
        grid.t + 1,
    )
    stats = FuseStats(
        contributing_pixels=int(admit.sum()),
        touched_cells=int(touched.sum()),
        marked_cells=int(np.unique(mark_flat).size),
        update_ms=(time.perf_counter() - started) * 1000.0,
    )
    return new_grid, stats


def fuse_frame(
    grid: OccupancyGrid,
    depth: DepthFrame,
    reliability: ReliabilityMap,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    params: FusionParams,
) -> OccupancyGrid:
    """
    Fold one frame into the grid; the input grid is left untouched.

    Parameters
    ----------
    grid : OccupancyGrid
        Grid after frame t-1.
    depth : DepthFrame
        Frame-t depth (after any baseline preprocessing).
    reliability : ReliabilityMap
        Per-pixel weights w_t(u).
    pose : Pose
        Camera pose at t.
    intrinsics : CameraIntrinsics
        Camera model; must match the frame size.
    params : FusionParams
        Update parameters.

    Returns
    -------
    OccupancyGrid
        Grid after frame t.

    Raises
    ------
    ShapeError
        If depth, reliability and intrinsics disagree in size.
    """
    return fuse_frame_with_stats(grid, depth, reliability, pose, intrinsics, params)[0]


def update_cell(p_prev: float, contributions: Sequence[Tuple[float, float]], forgetting: float) -> float:
    """Single-cell update from (w, obs) contributions; no contributions keeps p."""
    if not contributions:
        return p_prev
    mean_wobs = sum(w * obs for w, obs in contributions) / len(contributions)
    return forgetting * p_prev + (1.0 - forgetting) * mean_wobs


# ============================================================================
# Costmap
# ============================================================================


def binarize(
    grid: OccupancyGrid,
    prev_costmap: Optional[Costmap] = None,
    params: CostmapParams = CostmapParams(),
) -> Costmap:
    """
    Hysteresis binarization.

    p >= t_on is occupied and observed cells with p <= t_off are free.
    Cells in between keep their previous state; observed dead-band cells
    without a previous known state are free, never-observed cells are
    unknown.

    Raises
    ------
    ShapeError
        If ``prev_costmap`` has a different GridSpec.
    """
    if prev_costmap is not None and prev_costmap.spec != grid.spec:
        raise ShapeError("Previous costmap has a different GridSpec")
    prev = prev_costmap.state if prev_costmap is not None else np.full(grid.spec.shape, UNKNOWN)
    state = np.where(grid.observed, np.where(prev == UNKNOWN, FREE, prev), UNKNOWN)
    state = np.where(grid.observed & (grid.p <= params.t_off), FREE, state)
    state = np.where(grid.p >= params.t_on, OCCUPIED, state)
    return Costmap(grid.spec, state.astype(np.int8))


def inflate(costmap: Costmap, radius: float = 0.55) -> Costmap:
    """
    Mark every cell within ``radius`` (center to center) of a lethal cell occupied.

    Lethal cells are kept, so inflating twice equals inflating once.
    """
    if radius < 0:
        raise DomainError(f"Inflation radius must be >= 0, got {radius}")
    lethal = costmap.lethal
    if radius == 0 or not lethal.any():
        return Costmap(costmap.spec, costmap.state.copy(), lethal.copy())
    dist = distance_transform_edt(~lethal)
    within = dist <= radius / costmap.spec.resolution + 1e-9
    state = np.where(within, OCCUPIED, costmap.state)
    return Costmap(costmap.spec, state, lethal.copy())


# ============================================================================
# Export
# ============================================================================


def costmap_to_pgm(costmap: Costmap) -> np.ndarray:
    """8-bit image with +y up: occupied 0, free 254, unknown 205."""
    img = np.full(costmap.spec.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[costmap.free] = PGM_FREE
    img[costmap.occupied] = PGM_OCCUPIED
    return np.flipud(img)


def write_costmap(costmap: Costmap, path: Path) -> None:
    """Write the costmap PGM plus a ``.json`` GridSpec sidecar."""
    path = Path(path)
    write_netpbm(path, costmap_to_pgm(costmap), 255)
    write_sidecar(costmap.spec, path.with_suffix(".json"))


def read_costmap(path: Path) -> Costmap:
    """
    Read a costmap PGM and its sidecar.

    Raises
    ------
    FileNotFoundError
        If the image or sidecar is missing.
    """
    path = Path(path)
    spec = read_sidecar(path.with_suffix(".json"))
    img, _ = read_netpbm(path)
    img = np.flipud(img)
    if img.shape != spec.shape:
        raise ShapeError(f"{path}: image {img.shape} does not match GridSpec {spec.shape}")
    state = np.full(spec.shape, UNKNOWN, dtype=np.int8)
    state[img == PGM_FREE] = FREE
    state[img == PGM_OCCUPIED] = OCCUPIED
    return Costmap(spec, state)


def write_grid_csv(grid: OccupancyGrid, path: Path) -> None:
    """p values, one grid row (fixed iy) per line, iy ascending."""
    path = Path(path)
    np.savetxt(path, grid.p, fmt="%.9f", delimiter=",")
    write_sidecar(grid.spec, path.with_suffix(".json"), {"frames": grid.t})


def write_sidecar(spec: GridSpec, path: Path, extra: Optional[Dict[str, Any]] = None) -> None:
    payload: Dict[str, Any] = {"grid": asdict(spec)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def read_sidecar(path: Path) -> GridSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"GridSpec sidecar not found: {path}")
    return GridSpec(**json.loads(path.read_text())["grid"])

