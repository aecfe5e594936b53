"""
Evaluation: sensor-level depth metrics, reliability classification
metrics, costmap correctness against geometry-derived ground truth, and
planner-based path metrics.
"""

import heapq
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import DomainError, ShapeError
from gridfusion import FREE, OCCUPIED, UNKNOWN, Costmap, GridSpec, inflate
from reliability import ReliabilityMap, ReliabilityTarget
from scenegen import RANGE_MAX, RANGE_MIN, DepthFrame, World


DETOUR_THRESHOLD = 1.10
SPIKE_FLOOR = 0.1
SPIKE_RELATIVE = 0.05
F1_THRESHOLD = 0.3

Cell = Tuple[int, int]


# ============================================================================
# Ground truth
# ============================================================================


@dataclass
class GroundTruthCostmap:
    """
    Geometry-derived reference map.

    ``occupied`` is O_gt (inflated obstacle footprints), ``free`` is F_gt
    (remaining cells whose centers lie inside the world bounds).
    """

    spec: GridSpec
    occupied: np.ndarray
    free: np.ndarray

    def __post_init__(self) -> None:
        if self.occupied.shape != self.spec.shape or self.free.shape != self.spec.shape:
            raise ShapeError("Ground-truth masks do not match the GridSpec")
        if np.any(self.occupied & self.free):
            raise DomainError("O_gt and F_gt must be disjoint")

    def as_costmap(self) -> Costmap:
        state = np.full(self.spec.shape, UNKNOWN, dtype=np.int8)
        state[self.free] = FREE
        state[self.occupied] = OCCUPIED
        return Costmap(self.spec, state)


def _band_overlaps(z_lo: float, z_hi: float, spec: GridSpec) -> bool:
    return z_lo <= spec.height_max and z_hi >= spec.height_min


def rasterize_obstacles(world: World, spec: GridSpec) -> np.ndarray:
    """
    Cells covered by wall and box footprints intersecting the height band.

    A box covers every cell whose square overlaps its footprint with
    positive area; a wall covers every cell its segment passes through.
    """
    n = spec.cells
    occ = np.zeros(spec.shape, dtype=bool)
    r = spec.resolution
    for box in world.boxes:
        if not _band_overlaps(box.z_min, box.z_max, spec):
            continue
        i0 = max(0, math.floor((box.x_min - spec.origin_x) / r))
        i1 = min(n, math.ceil((box.x_max - spec.origin_x) / r))
        j0 = max(0, math.floor((box.y_min - spec.origin_y) / r))
        j1 = min(n, math.ceil((box.y_max - spec.origin_y) / r))
        if i1 > i0 and j1 > j0:
            occ[j0:j1, i0:i1] = True
    for wall in world.walls:
        if not _band_overlaps(0.0, wall.height, spec):
            continue
        length = math.hypot(wall.x1 - wall.x0, wall.y1 - wall.y0)
        samples = max(2, int(math.ceil(length / (r / 4))) + 1)
        s = np.linspace(0.0, 1.0, samples)
        ix, iy = spec.cell_indices(wall.x0 + s * (wall.x1 - wall.x0), wall.y0 + s * (wall.y1 - wall.y0))
        inside = spec.in_grid(ix, iy)
        occ[iy[inside], ix[inside]] = True
    return occ


def gt_costmap(
    world: World,
    spec: GridSpec,
    inflation_radius: float = 0.55,
    pipeline_spec: Optional[GridSpec] = None,
) -> GroundTruthCostmap:
    """
    Reference costmap from world geometry.

    Glare patches contribute nothing; obstacles are inflated with the
    same radius the pipelines use.

    Raises
    ------
    ShapeError
        If ``pipeline_spec`` is given and differs from ``spec``.
    """
    if pipeline_spec is not None and pipeline_spec != spec:
        raise ShapeError("Ground-truth GridSpec differs from the pipeline GridSpec")
    lethal = rasterize_obstacles(world, spec)
    state = np.where(lethal, OCCUPIED, UNKNOWN).astype(np.int8)
    occupied = inflate(Costmap(spec, state), inflation_radius).occupied

    n = spec.cells
    centers = spec.origin_x + (np.arange(n) + 0.5) * spec.resolution
    centers_y = spec.origin_y + (np.arange(n) + 0.5) * spec.resolution
    b = world.bounds
    in_x = (centers >= b.x_min) & (centers <= b.x_max)
    in_y = (centers_y >= b.y_min) & (centers_y <= b.y_max)
    in_bounds = in_y[:, None] & in_x[None, :]
    return GroundTruthCostmap(spec, occupied, in_bounds & ~occupied)


# ============================================================================
# Sensor metrics
# ============================================================================


@dataclass(frozen=True)
class SensorMetrics:
    """Depth-quality summary of one frame or stream."""

    hole_rate: float
    spike_rate: float
    rmse: float
    auprc: Optional[float] = None
    f1: Optional[float] = None


def _check(a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
    if tuple(a) != tuple(b):
        raise ShapeError(f"Shape mismatch: {tuple(a)} vs {tuple(b)}")


def hole_rate(depth: DepthFrame) -> float:
    """Fraction of pixels that are invalid, missing or out of range."""
    if depth.values.size == 0:
        return 0.0
    good = depth.validity & (depth.values >= RANGE_MIN) & (depth.values <= RANGE_MAX)
    return 1.0 - float(good.sum()) / depth.values.size


def spike_threshold(reference: np.ndarray) -> np.ndarray:
    """delta_s(d*) = max(0.1 m, 0.05 d*)."""
    return np.maximum(SPIKE_FLOOR, SPIKE_RELATIVE * reference)


def spike_rate(depth: DepthFrame, reference: DepthFrame, delta_s: Optional[float] = None) -> float:
    """
    Among jointly valid pixels, the fraction with |D - D*| > delta_s.

    ``delta_s`` None uses max(0.1, 0.05 d*). Returns 0.0 when no pixel is
    jointly valid.
    """
    _check(depth.shape, reference.shape)
    joint = depth.validity & reference.validity
    if not joint.any():
        return 0.0
    threshold = spike_threshold(reference.values) if delta_s is None else delta_s
    spikes = joint & (np.abs(depth.values - reference.values) > threshold)
    return float(spikes.sum()) / float(joint.sum())


def depth_rmse(depth: DepthFrame, reference: DepthFrame) -> float:
    """
    Root-mean-square error over the jointly valid domain.

    Raises
    ------
    DomainError
        If no pixel is valid in both frames.
    """
    _check(depth.shape, reference.shape)
    joint = depth.validity & reference.validity
    if not joint.any():
        raise DomainError("No jointly valid pixels for RMSE")
    diff = depth.values[joint] - reference.values[joint]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class PrMetrics:
    """AUPRC (None for a single-class target) and F1 at a fixed threshold."""

    auprc: Optional[float]
    f1: float
    threshold: float


def pr_metrics(
    pred: ReliabilityMap, target: ReliabilityTarget, threshold: float = F1_THRESHOLD
) -> PrMetrics:
    """
    Precision-recall summary of a reliability map against a binary target.

    AUPRC is the step-wise sum of precision times recall increments over
    every distinct score, equal scores forming one threshold group. F1
    counts scores strictly above ``threshold`` as positive and is 0 when
    there are neither positives nor predicted positives.

    Raises
    ------
    DomainError
        If the target is not binary.
    """
    _check(pred.shape, target.shape)
    if target.mode != "binary":
        raise DomainError("pr_metrics needs a binary target")
    scores = pred.values.ravel()
    labels = target.values.ravel() > 0.5
    positives = int(labels.sum())

    predicted = scores > threshold
    tp = int((predicted & labels).sum())
    fp = int((predicted & ~labels).sum())
    fn = positives - tp
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0

    if positives == 0 or positives == labels.size:
        return PrMetrics(None, f1, threshold)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp_cum = np.cumsum(y)
    # last index of every group of equal scores
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    tp_at = tp_cum[ends].astype(np.float64)
    precision = tp_at / (ends + 1)
    recall = tp_at / positives
    gains = np.diff(np.concatenate([[0.0], recall]))
    return PrMetrics(float(np.sum(gains * precision)), f1, threshold)


def sensor_metrics(depth: DepthFrame, reference: DepthFrame) -> SensorMetrics:
    """HR, SR and RMSE of a raw depth stream (RMSE is NaN with no overlap)."""
    try:
        rmse = depth_rmse(depth, reference)
    except DomainError:
        rmse = float("nan")
    return SensorMetrics(hole_rate(depth), spike_rate(depth, reference), rmse)


def gated_sensor_metrics(
    depth: DepthFrame,
    reference: DepthFrame,
    reliability: ReliabilityMap,
    tau_r: float = F1_THRESHOLD,
) -> SensorMetrics:
    """
    HR, SR and RMSE of the measurements admitted by reliability gating.

    The admitted set is every pixel with R > tau_r. HR is the fraction of
    admitted pixels without valid depth; SR and RMSE are computed on the
    admitted valid pixels. An empty admitted set scores 0 holes and spikes.
    """
    _check(depth.shape, reliability.shape)
    admitted = reliability.values > tau_r
    n = int(admitted.sum())
    hr = 0.0 if n == 0 else float((admitted & ~depth.validity).sum()) / n
    gated = DepthFrame(np.where(admitted, depth.values, 0.0), admitted & depth.validity)
    try:
        rmse = depth_rmse(gated, reference)
    except DomainError:
        rmse = float("nan")
    return SensorMetrics(hr, spike_rate(gated, reference), rmse)


# ============================================================================
# Costmap metrics
# ============================================================================


def _check_costmap(predicted: Costmap, gt: GroundTruthCostmap) -> int:
    if predicted.spec != gt.spec:
        raise ShapeError("Predicted costmap and ground truth use different GridSpecs")
    n_free = int(gt.free.sum())
    if n_free == 0:
        raise DomainError("Ground truth has no free cells")
    return n_free


def for_metric(predicted: Costmap, gt: GroundTruthCostmap) -> float:
    """False obstacle rate |O_hat & F_gt| / |F_gt|."""
    n_free = _check_costmap(predicted, gt)
    return float((predicted.occupied & gt.free).sum()) / n_free


def fsr_metric(predicted: Costmap, gt: GroundTruthCostmap) -> float:
    """Free-space recall |F_hat & F_gt| / |F_gt|; unknown cells earn nothing."""
    n_free = _check_costmap(predicted, gt)
    return float((predicted.free & gt.free).sum()) / n_free


# ============================================================================
# Planning
# ============================================================================

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class PlanResult:
    """Cells (ix, iy) from start to goal and the path length in meters."""

    cells: List[Cell]
    length: float


def world_to_cell(spec: GridSpec, x: float, y: float) -> Cell:
    ix, iy = spec.cell_indices(np.array(x), np.array(y))
    return int(ix), int(iy)


def plan_path(costmap: Costmap, start: Cell, goal: Cell) -> Optional[PlanResult]:
    """
    A* over free cells.

    8-connected with diagonal steps of sqrt(2) cells, Euclidean heuristic,
    ties broken by (f, h, cell index). Occupied and unknown cells are not
    traversable. Returns None when start or goal is not free or no path
    exists.
    """
    n = costmap.spec.cells
    free = costmap.free

    def ok(c: Cell) -> bool:
        return 0 <= c[0] < n and 0 <= c[1] < n and bool(free[c[1], c[0]])

    if not ok(start) or not ok(goal):
        return None

    def h(c: Cell) -> float:
        return math.hypot(c[0] - goal[0], c[1] - goal[1])

    g_best: Dict[int, float] = {start[1] * n + start[0]: 0.0}
    parent: Dict[int, int] = {}
    closed = set()
    heap: List[Tuple[float, float, int, float]] = [(h(start), h(start), start[1] * n + start[0], 0.0)]
    goal_idx = goal[1] * n + goal[0]
    while heap:
        f, hv, idx, g = heapq.heappop(heap)
        if idx in closed:
            continue
        closed.add(idx)
        if idx == goal_idx:
            cells = [goal]
            while idx in parent:
                idx = parent[idx]
                cells.append((idx % n, idx // n))
            cells.reverse()
            return PlanResult(cells, g * costmap.spec.resolution)
        cx, cy = idx % n, idx // n
        for dx, dy in _NEIGHBORS:
            nb = (cx + dx, cy + dy)
            if not ok(nb):
                continue
            nidx = nb[1] * n + nb[0]
            if nidx in closed:
                continue
            ng = g + (math.sqrt(2.0) if dx and dy else 1.0)
            if ng < g_best.get(nidx, math.inf):
                g_best[nidx] = ng
                parent[nidx] = idx
                hn = h(nb)
                heapq.heappush(heap, (ng + hn, hn, nidx, ng))
    return None


@dataclass(frozen=True)
class TrialResult:
    """One navigation trial: success, PLR on success, detour flag."""

    success: bool
    plr: Optional[float]
    detour: bool
    reason: str = ""


def trial_outcome(predicted: Costmap, gt: GroundTruthCostmap, start: Cell, goal: Cell) -> TrialResult:
    """
    Plan on the predicted costmap and judge the path against ground truth.

    Success requires a path that never enters O_gt; PLR is the predicted
    path length over the ground-truth optimum and a detour is PLR > 1.10.

    Raises
    ------
    DomainError
        If ground truth itself has no path (the trial is excluded).
    """
    if predicted.spec != gt.spec:
        raise ShapeError("Predicted costmap and ground truth use different GridSpecs")
    reference = plan_path(gt.as_costmap(), start, goal)
    if reference is None:
        raise DomainError(f"No ground-truth path from {start} to {goal}")
    planned = plan_path(predicted, start, goal)
    if planned is None:
        return TrialResult(False, None, False, "blocked")
    if any(gt.occupied[cy, cx] for cx, cy in planned.cells):
        return TrialResult(False, None, False, "collision")
    plr = planned.length / reference.length if reference.length > 0 else 1.0
    return TrialResult(True, plr, plr > DETOUR_THRESHOLD)


@dataclass(frozen=True)
class PathMetrics:
    """Aggregate of paired trials."""

    trials: int
    success_rate: float
    plr_mean: Optional[float]
    plr_std: Optional[float]
    detour_rate: float


def path_metrics(results: Sequence[TrialResult]) -> PathMetrics:
    """Success rate, PLR mean/std over successes, detour rate over successes."""
    if not results:
        return PathMetrics(0, 0.0, None, None, 0.0)
    wins = [r for r in results if r.success]
    plrs = np.array([r.plr for r in wins], dtype=np.float64)
    return PathMetrics(
        trials=len(results),
        success_rate=len(wins) / len(results),
        plr_mean=float(plrs.mean()) if wins else None,
        plr_std=float(plrs.std(ddof=1)) if len(wins) > 1 else (0.0 if wins else None),
        detour_rate=float(np.mean([r.detour for r in wins])) if wins else 0.0,
    )


# ============================================================================
# Aggregation
# ============================================================================


@dataclass(frozen=True)
class Aggregate:
    """Summary statistics of one metric over seeded runs."""

    mean: float
    std: float
    n: int
    ci95_lower: float
    ci95_upper: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def summarize(values: Iterable[float]) -> Aggregate:
    """Mean, sample std and t-based 95% CI, ignoring NaN entries."""
    arr = np.array([v for v in values if v is not None], dtype=np.float64)
    arr = arr[np.isfinite(arr)]
    n = int(arr.size)
    if n == 0:
        nan = float("nan")
        return Aggregate(nan, nan, 0, nan, nan)
    mean = float(arr.mean())
    if n == 1:
        return Aggregate(mean, 0.0, 1, mean, mean)
    std = float(arr.std(ddof=1))
    # 95% CI for the mean using the t-distribution
    ci_margin = float(stats.t.ppf(0.975, n - 1) * std / np.sqrt(n))
    return Aggregate(mean, std, n, mean - ci_margin, mean + ci_margin)


def aggregate_rows(rows: Sequence[Mapping[str, Any]]) -> List[Dict[str, Any]]:
    """
    Group (scenario, severity, method, metric, value) rows and summarize.

    Output is sorted by (scenario, severity, method, metric).
    """
    groups: Dict[Tuple[str, str, str, str], List[float]] = {}
    for row in rows:
        key = (str(row["scenario"]), str(row["severity"]), str(row["method"]), str(row["metric"]))
        groups.setdefault(key, []).append(row["value"])
    out = []
    for key in sorted(groups):
        agg = summarize(groups[key])
        out.append({
            "scenario": key[0], "severity": key[1], "method": key[2], "metric": key[3],
            **agg.to_dict(),
        })
    return out
